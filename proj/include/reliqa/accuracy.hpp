#pragma once

#include "reliqa/records.hpp"

#include <span>
#include <string>
#include <vector>

namespace reliqa {

/// Number of references equal to `prediction` after normalization.
int match_count(const AnswerText& prediction, const AnnotationSet& refs);

/// Multi-reference accuracy: min(matches / 3, 1) averaged over the ten
/// leave-one-out subsets of nine references. Takes values in
/// {0, 0.3, 0.6, 0.9, 1}.
double vqa_accuracy(const AnswerText& prediction, const AnnotationSet& refs);

/// The same quantity from the match count alone. Throws DomainError unless
/// 0 <= k <= 10.
double closed_form_accuracy(int k);

/// Per-vocabulary-entry accuracy against `refs`, the soft label vector used
/// to train vector scaling.
std::vector<double> soft_targets(const AnnotationSet& refs, std::span<const AnswerText> vocabulary);

/// Most frequent normalized reference; ties go to the lexicographically
/// smallest string.
const std::string& most_frequent_answer(const AnnotationSet& refs);

/// Top-1 correctness used by ECE.
bool correct_top1(const AnswerText& prediction, const AnnotationSet& refs);

} // namespace reliqa
