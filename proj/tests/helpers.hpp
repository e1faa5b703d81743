#pragma once

#include "reliqa/metrics.hpp"
#include "reliqa/records.hpp"
#include "reliqa/rng.hpp"

#include <string>
#include <vector>

namespace testing {

inline reliqa::AnnotationSet refs_with(const std::string& answer, int k, const std::string& filler = "other")
{
    std::vector<reliqa::AnswerText> v;
    for (int i = 0; i < 10; ++i) {
        v.emplace_back(i < k ? answer : filler);
    }
    return reliqa::AnnotationSet(std::move(v));
}

inline reliqa::Record make_record(const std::string& id, const std::string& image, const std::string& pred, int k)
{
    reliqa::Record r;
    r.id = id;
    r.image_id = image;
    r.predicted_answer = reliqa::AnswerText(pred);
    r.annotations = refs_with(pred, k);
    return r;
}

inline reliqa::ScoredExample ex(double confidence, double accuracy, const std::string& id = "")
{
    reliqa::ScoredExample e;
    e.id = id;
    e.confidence = confidence;
    e.accuracy = accuracy;
    e.correct_top1 = accuracy >= 0.6;
    return e;
}

/// Random example set on a coarse confidence grid so ties are common.
inline std::vector<reliqa::ScoredExample> random_examples(reliqa::Rng& rng, std::size_t n, int levels = 8)
{
    static const double lattice[] = {0.0, 0.3, 0.6, 0.9, 1.0};
    std::vector<reliqa::ScoredExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) / levels;
        out.push_back(ex(c, lattice[rng.below(5)], "e" + std::to_string(i)));
    }
    return out;
}

} // namespace testing
