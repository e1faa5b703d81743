#include "reliqa/accuracy.hpp"

#include "reliqa/errors.hpp"

#include <algorithm>
#include <map>

namespace reliqa {

namespace {

// Scores are kept as integer multiples of 1/3 (min(matches, 3)) and divided
// once at the end, so both accuracy routes produce the same double.
constexpr double kDenominator = 3.0 * static_cast<double>(kAnnotationCount);

} // namespace

int match_count(const AnswerText& prediction, const AnnotationSet& refs)
{
    return static_cast<int>(std::count_if(refs.answers().begin(), refs.answers().end(),
                                          [&](const AnswerText& a) { return a.normalized == prediction.normalized; }));
}

double vqa_accuracy(const AnswerText& prediction, const AnnotationSet& refs)
{
    int total = 0;
    for (std::size_t left_out = 0; left_out < refs.size(); ++left_out) {
        int matches = 0;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (i != left_out && refs[i].normalized == prediction.normalized) {
                ++matches;
            }
        }
        total += std::min(matches, 3);
    }
    return static_cast<double>(total) / kDenominator;
}

double closed_form_accuracy(int k)
{
    if (k < 0 || k > static_cast<int>(kAnnotationCount)) {
        throw DomainError("match count " + std::to_string(k) + " outside [0, 10]");
    }
    const int n = static_cast<int>(kAnnotationCount);
    // k subsets drop a match, 10 - k subsets drop a non-match.
    const int total = k * std::min(k - 1, 3) + (n - k) * std::min(k, 3);
    return static_cast<double>(std::max(total, 0)) / kDenominator;
}

std::vector<double> soft_targets(const AnnotationSet& refs, std::span<const AnswerText> vocabulary)
{
    if (vocabulary.empty()) {
        throw DomainError("soft_targets: empty vocabulary");
    }
    std::map<std::string_view, int> counts;
    for (const auto& a : refs.answers()) {
        ++counts[a.normalized];
    }
    std::vector<double> out(vocabulary.size(), 0.0);
    for (std::size_t j = 0; j < vocabulary.size(); ++j) {
        if (auto it = counts.find(vocabulary[j].normalized); it != counts.end()) {
            out[j] = closed_form_accuracy(it->second);
        }
    }
    return out;
}

const std::string& most_frequent_answer(const AnnotationSet& refs)
{
    // std::map iterates in lexicographic order; strict > keeps the first.
    std::map<std::string_view, int> counts;
    for (const auto& a : refs.answers()) {
        ++counts[a.normalized];
    }
    std::string_view best;
    int best_count = -1;
    for (const auto& [answer, count] : counts) {
        if (count > best_count) {
            best = answer;
            best_count = count;
        }
    }
    for (const auto& a : refs.answers()) {
        if (a.normalized == best) {
            return a.normalized;
        }
    }
    return refs[0].normalized;
}

bool correct_top1(const AnswerText& prediction, const AnnotationSet& refs)
{
    return prediction.normalized == most_frequent_answer(refs);
}

} // namespace reliqa
