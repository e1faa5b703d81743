"""Selective question answering: accuracy, risk-coverage metrics, effective
reliability, and a synthetic benchmark."""

from ._reliqa import (
    DimensionError,
    DomainError,
    Error,
    ParseError,
    ValidationError,
    __version__,
    auc,
    best_possible_curve,
    choose_threshold_phi,
    choose_threshold_risk,
    closed_form_accuracy,
    coverage_at_risk,
    ece,
    generate_synth,
    normalize_answer,
    phi,
    rc_curve,
    run_cli,
    score_maxprob,
    vqa_accuracy,
)

__all__ = [
    "DimensionError",
    "DomainError",
    "Error",
    "ParseError",
    "ValidationError",
    "__version__",
    "auc",
    "best_possible_curve",
    "choose_threshold_phi",
    "choose_threshold_risk",
    "closed_form_accuracy",
    "coverage_at_risk",
    "ece",
    "generate_synth",
    "normalize_answer",
    "phi",
    "rc_curve",
    "run_cli",
    "score_maxprob",
    "vqa_accuracy",
]
