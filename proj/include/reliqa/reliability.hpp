#pragma once

#include "reliqa/metrics.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace reliqa {

/// Penalty for answering a question entirely wrong.
class Cost {
public:
    explicit Cost(double c);
    double value() const { return c_; }

private:
    double c_;
};

struct Threshold {
    double gamma = 0.0;
};

struct ReliabilityReport {
    double phi = 0.0;
    std::optional<double> risk; ///< empty when nothing is answered
    double coverage = 0.0;
    Threshold threshold;
    double cost = 0.0;
};

/// Effective reliability: mean over examples of acc (answered, acc > 0),
/// -c (answered, acc == 0) or 0 (abstained).
double phi_score(std::span<const ScoredExample> examples, std::span<const Decision> decisions, Cost cost);

/// Thresholds worth trying on a set: one below the minimum confidence, the
/// midpoints between consecutive distinct confidences, one above the maximum.
/// Returned in ascending order.
std::vector<double> candidate_thresholds(std::span<const ScoredExample> examples);

/// Threshold maximizing phi on `val`. Ties go to the larger threshold.
Threshold choose_threshold_phi(std::span<const ScoredExample> val, Cost cost);

/// Smallest candidate threshold whose risk on `val` is <= target.
/// Throws UnreachableRiskError.
Threshold choose_threshold_risk(std::span<const ScoredExample> val, double target_risk);

ReliabilityReport evaluate_at_threshold(std::span<const ScoredExample> test, Threshold gamma, Cost cost);

struct GeneralizationEntry {
    double target_risk = 0.0;
    std::optional<Threshold> threshold;
    std::optional<double> delta_risk;     ///< test risk at threshold - target
    std::optional<double> delta_coverage; ///< test coverage - test C@R
    std::string error;                    ///< set when the entry could not be computed
};

/// Transfer of risk-targeted thresholds from a validation set to a test set.
std::vector<GeneralizationEntry> threshold_generalization(std::span<const ScoredExample> val,
                                                          std::span<const ScoredExample> test,
                                                          std::span<const double> target_risks);

enum class OverrideMode { abstain, correct };

/// Phi with answered, wrong examples flagged `noise_unfair` counted as
/// abstentions or as fully correct.
double phi_with_overrides(std::span<const ScoredExample> examples, std::span<const Decision> decisions, Cost cost,
                          OverrideMode mode);

using MetricMap = std::map<std::string, double>;

/// Per-key mean and sample standard deviation (n - 1; 0 for one report).
std::pair<MetricMap, MetricMap> aggregate_seeds(std::span<const MetricMap> reports);

struct DifficultyStats {
    std::size_t total = 0;
    std::size_t answered = 0;
    double coverage = 0.0;
    std::optional<double> risk;
};

/// Groups by difficulty level ("1", "2", "3", or "unlabeled").
std::map<std::string, DifficultyStats> metrics_by_difficulty(std::span<const ScoredExample> examples,
                                                             std::span<const Decision> decisions);

} // namespace reliqa
