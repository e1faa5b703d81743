#include "reliqa/reliability.hpp"

#include "reliqa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace reliqa {

Cost::Cost(double c) : c_(c)
{
    if (!(c >= 0.0) || !std::isfinite(c)) {
        throw ValidationError("cost must be a finite non-negative number");
    }
}

namespace {

double example_phi(const ScoredExample& ex, Decision d, double c)
{
    if (d == Decision::abstain) {
        return 0.0;
    }
    // Accuracies live on an exact lattice, so no epsilon here.
    return ex.accuracy > 0.0 ? ex.accuracy : -c;
}

void check_lengths(std::span<const ScoredExample> examples, std::span<const Decision> decisions)
{
    if (examples.size() != decisions.size()) {
        throw DimensionError(std::to_string(examples.size()) + " examples but " + std::to_string(decisions.size()) +
                             " decisions");
    }
    if (examples.empty()) {
        throw DomainError("empty example set");
    }
}

// Distinct confidences in descending order, with each example's group index.
struct Groups {
    std::vector<double> levels;
    std::vector<std::vector<std::size_t>> members;
};

Groups group_by_confidence(std::span<const ScoredExample> examples)
{
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (!std::isfinite(examples[i].confidence)) {
            throw DomainError("non-finite confidence for '" + examples[i].id + "'");
        }
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return examples[a].confidence > examples[b].confidence; });
    Groups g;
    for (std::size_t idx : order) {
        if (g.levels.empty() || examples[idx].confidence != g.levels.back()) {
            g.levels.push_back(examples[idx].confidence);
            g.members.emplace_back();
        }
        g.members.back().push_back(idx);
    }
    return g;
}

double above(double x)
{
    const double y = x + 1.0;
    return y > x ? y : std::nextafter(x, std::numeric_limits<double>::infinity());
}

// Threshold answering exactly the groups with level >= upper when the next
// lower level is `lower`.
double between(double upper, double lower)
{
    const double mid = lower + 0.5 * (upper - lower);
    return mid > lower ? mid : upper;
}

// Threshold that answers groups [0, answered_groups).
double threshold_for(const Groups& g, std::size_t answered_groups)
{
    if (answered_groups == 0) {
        return above(g.levels.front());
    }
    if (answered_groups == g.levels.size()) {
        return g.levels.back() - 1.0;
    }
    return between(g.levels[answered_groups - 1], g.levels[answered_groups]);
}

} // namespace

double phi_score(std::span<const ScoredExample> examples, std::span<const Decision> decisions, Cost cost)
{
    check_lengths(examples, decisions);
    double total = 0.0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        total += example_phi(examples[i], decisions[i], cost.value());
    }
    return total / static_cast<double>(examples.size());
}

std::vector<double> candidate_thresholds(std::span<const ScoredExample> examples)
{
    if (examples.empty()) {
        throw DomainError("no candidate thresholds for an empty set");
    }
    const Groups g = group_by_confidence(examples);
    std::vector<double> out;
    out.reserve(g.levels.size() + 1);
    for (std::size_t k = g.levels.size() + 1; k-- > 0;) {
        out.push_back(threshold_for(g, k));
    }
    return out;
}

Threshold choose_threshold_phi(std::span<const ScoredExample> val, Cost cost)
{
    if (val.empty()) {
        throw DomainError("choose_threshold_phi: empty validation set");
    }
    const Groups g = group_by_confidence(val);
    // Walk from "answer nothing" towards "answer everything"; a later
    // candidate must be strictly better, which keeps ties at the larger gamma.
    double running = 0.0;
    double best_sum = 0.0;
    std::size_t best_groups = 0;
    for (std::size_t k = 0; k < g.levels.size(); ++k) {
        for (std::size_t idx : g.members[k]) {
            running += example_phi(val[idx], Decision::answer, cost.value());
        }
        if (running > best_sum) {
            best_sum = running;
            best_groups = k + 1;
        }
    }
    return {threshold_for(g, best_groups)};
}

Threshold choose_threshold_risk(std::span<const ScoredExample> val, double target_risk)
{
    if (val.empty()) {
        throw DomainError("choose_threshold_risk: empty validation set");
    }
    const Groups g = group_by_confidence(val);
    std::vector<double> prefix_loss(g.levels.size());
    std::vector<std::size_t> prefix_count(g.levels.size());
    double loss = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < g.levels.size(); ++k) {
        for (std::size_t idx : g.members[k]) {
            loss += 1.0 - val[idx].accuracy;
            ++count;
        }
        prefix_loss[k] = loss;
        prefix_count[k] = count;
    }
    for (std::size_t k = g.levels.size(); k-- > 0;) {
        if (prefix_loss[k] / static_cast<double>(prefix_count[k]) <= target_risk + kRiskTolerance) {
            return {threshold_for(g, k + 1)};
        }
    }
    throw UnreachableRiskError(target_risk);
}

ReliabilityReport evaluate_at_threshold(std::span<const ScoredExample> test, Threshold gamma, Cost cost)
{
    const auto decisions = decide(test, gamma.gamma);
    ReliabilityReport rep;
    rep.threshold = gamma;
    rep.cost = cost.value();
    rep.phi = phi_score(test, decisions, cost);
    rep.coverage = coverage(decisions);
    if (rep.coverage > 0.0) {
        rep.risk = risk(test, decisions);
    }
    return rep;
}

std::vector<GeneralizationEntry> threshold_generalization(std::span<const ScoredExample> val,
                                                          std::span<const ScoredExample> test,
                                                          std::span<const double> target_risks)
{
    if (val.empty() || test.empty()) {
        throw DomainError("threshold_generalization: empty example set");
    }
    const RCCurve test_curve = rc_curve(test);
    std::vector<GeneralizationEntry> out;
    for (double target : target_risks) {
        GeneralizationEntry e;
        e.target_risk = target;
        try {
            e.threshold = choose_threshold_risk(val, target);
        } catch (const UnreachableRiskError& err) {
            e.error = err.what();
            out.push_back(std::move(e));
            continue;
        }
        const auto decisions = decide(test, e.threshold->gamma);
        const double cov = coverage(decisions);
        e.delta_coverage = cov - coverage_at_risk(test_curve, target);
        if (cov > 0.0) {
            e.delta_risk = risk(test, decisions) - target;
        } else {
            e.error = "undefined risk: threshold answers nothing on the test set";
        }
        out.push_back(std::move(e));
    }
    return out;
}

double phi_with_overrides(std::span<const ScoredExample> examples, std::span<const Decision> decisions, Cost cost,
                          OverrideMode mode)
{
    check_lengths(examples, decisions);
    double total = 0.0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        if (ex.noise_unfair && decisions[i] == Decision::answer && ex.accuracy == 0.0) {
            total += mode == OverrideMode::abstain ? 0.0 : 1.0;
        } else {
            total += example_phi(ex, decisions[i], cost.value());
        }
    }
    return total / static_cast<double>(examples.size());
}

std::pair<MetricMap, MetricMap> aggregate_seeds(std::span<const MetricMap> reports)
{
    if (reports.empty()) {
        throw DomainError("aggregate_seeds: no reports");
    }
    MetricMap mean;
    MetricMap stddev;
    const auto& first = reports.front();
    for (const auto& rep : reports) {
        if (rep.size() != first.size() ||
            !std::equal(rep.begin(), rep.end(), first.begin(), [](const auto& a, const auto& b) { return a.first == b.first; })) {
            throw ValidationError("aggregate_seeds: reports have different keys");
        }
    }
    const double n = static_cast<double>(reports.size());
    for (const auto& [key, unused] : first) {
        double sum = 0.0;
        for (const auto& rep : reports) {
            sum += rep.at(key);
        }
        const double m = sum / n;
        double sq = 0.0;
        for (const auto& rep : reports) {
            const double d = rep.at(key) - m;
            sq += d * d;
        }
        mean[key] = m;
        stddev[key] = reports.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    }
    return {mean, stddev};
}

std::map<std::string, DifficultyStats> metrics_by_difficulty(std::span<const ScoredExample> examples,
                                                             std::span<const Decision> decisions)
{
    if (examples.size() != decisions.size()) {
        throw DimensionError("metrics_by_difficulty: length mismatch");
    }
    std::map<std::string, DifficultyStats> out;
    std::map<std::string, double> loss;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        const std::string key = ex.difficulty ? std::to_string(*ex.difficulty) : "unlabeled";
        auto& s = out[key];
        ++s.total;
        if (decisions[i] == Decision::answer) {
            ++s.answered;
            loss[key] += 1.0 - ex.accuracy;
        }
    }
    for (auto& [key, s] : out) {
        s.coverage = static_cast<double>(s.answered) / static_cast<double>(s.total);
        if (s.answered > 0) {
            s.risk = loss[key] / static_cast<double>(s.answered);
        }
    }
    return out;
}

} // namespace reliqa
