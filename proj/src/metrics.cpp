#include "reliqa/metrics.hpp"

#include "reliqa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reliqa {

std::vector<Decision> decide(std::span<const ScoredExample> examples, double gamma)
{
    std::vector<Decision> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        out.push_back(ex.confidence >= gamma ? Decision::answer : Decision::abstain);
    }
    return out;
}

double coverage(std::span<const Decision> decisions)
{
    if (decisions.empty()) {
        throw DomainError("coverage of an empty decision sequence");
    }
    const auto answered = std::count(decisions.begin(), decisions.end(), Decision::answer);
    return static_cast<double>(answered) / static_cast<double>(decisions.size());
}

double risk(std::span<const ScoredExample> examples, std::span<const Decision> decisions)
{
    if (examples.size() != decisions.size()) {
        throw DimensionError("risk: " + std::to_string(examples.size()) + " examples but " +
                             std::to_string(decisions.size()) + " decisions");
    }
    double loss = 0.0;
    std::size_t answered = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (decisions[i] == Decision::answer) {
            loss += 1.0 - examples[i].accuracy;
            ++answered;
        }
    }
    if (answered == 0) {
        throw UndefinedRiskError();
    }
    return loss / static_cast<double>(answered);
}

namespace {

std::vector<std::size_t> confidence_order(std::span<const ScoredExample> examples)
{
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (examples[a].confidence != examples[b].confidence) {
            return examples[a].confidence > examples[b].confidence;
        }
        return examples[a].id < examples[b].id;
    });
    return order;
}

} // namespace

RCCurve rc_curve(std::span<const ScoredExample> examples)
{
    for (const auto& ex : examples) {
        if (!std::isfinite(ex.confidence)) {
            throw DomainError("non-finite confidence for '" + ex.id + "'");
        }
    }
    const auto order = confidence_order(examples);
    const double n = static_cast<double>(examples.size());

    RCCurve curve;
    double loss = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double gamma = examples[order[i]].confidence;
        while (i < order.size() && examples[order[i]].confidence == gamma) {
            loss += 1.0 - examples[order[i]].accuracy;
            ++i;
        }
        curve.points.push_back({static_cast<double>(i) / n, loss / static_cast<double>(i), gamma});
    }
    return curve;
}

double auc(const RCCurve& curve)
{
    if (curve.points.empty()) {
        throw DomainError("auc of an empty curve");
    }
    const auto& first = curve.points.front();
    double area = first.coverage * first.risk;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto& a = curve.points[i - 1];
        const auto& b = curve.points[i];
        area += (b.coverage - a.coverage) * 0.5 * (a.risk + b.risk);
    }
    return area;
}

std::optional<double> max_coverage_at_risk(const RCCurve& curve, double target_risk)
{
    std::optional<double> best;
    for (const auto& p : curve.points) {
        if (p.risk <= target_risk + kRiskTolerance && (!best || p.coverage > *best)) {
            best = p.coverage;
        }
    }
    return best;
}

double coverage_at_risk(const RCCurve& curve, double target_risk)
{
    return max_coverage_at_risk(curve, target_risk).value_or(0.0);
}

RCCurve best_possible_curve(std::span<const ScoredExample> examples)
{
    // Every prefix counts, even inside a run of equal accuracies: the oracle
    // is not bound to tie groups.
    std::vector<const ScoredExample*> order;
    for (const auto& ex : examples) {
        order.push_back(&ex);
    }
    std::sort(order.begin(), order.end(), [](const ScoredExample* a, const ScoredExample* b) {
        return a->accuracy != b->accuracy ? a->accuracy > b->accuracy : a->id < b->id;
    });
    RCCurve curve;
    const auto n = static_cast<double>(order.size());
    double err = 0.0;
    for (std::size_t m = 0; m < order.size(); ++m) {
        err += 1.0 - order[m]->accuracy;
        const auto answered = static_cast<double>(m + 1);
        curve.points.push_back({answered / n, err / answered, order[m]->accuracy});
    }
    return curve;
}

double ece(std::span<const ScoredExample> examples, int bins)
{
    if (bins < 1) {
        throw DomainError("ece: bins must be >= 1");
    }
    if (examples.empty()) {
        throw DomainError("ece of an empty example set");
    }
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> correct_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (const auto& ex : examples) {
        if (!(ex.confidence >= 0.0 && ex.confidence <= 1.0)) {
            throw DomainError("ece: confidence " + std::to_string(ex.confidence) + " outside [0, 1]");
        }
        // Bin m covers (m/bins, (m+1)/bins]; bin 0 also holds 0.
        auto m = static_cast<int>(std::ceil(ex.confidence * bins)) - 1;
        m = std::clamp(m, 0, bins - 1);
        conf_sum[m] += ex.confidence;
        correct_sum[m] += ex.correct_top1 ? 1.0 : 0.0;
        ++count[m];
    }
    const double n = static_cast<double>(examples.size());
    double total = 0.0;
    for (std::size_t m = 0; m < count.size(); ++m) {
        if (count[m] == 0) {
            continue;
        }
        const double c = static_cast<double>(count[m]);
        total += (c / n) * std::abs(correct_sum[m] / c - conf_sum[m] / c);
    }
    return total;
}

} // namespace reliqa
