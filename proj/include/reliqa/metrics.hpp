#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reliqa {

/// Output of the selection function g: answer or abstain.
enum class Decision : std::uint8_t { abstain = 0, answer = 1 };

/// One evaluated example: the selection function's confidence g'(x) and the
/// predictor's accuracy on it.
struct ScoredExample {
    std::string id;
    double confidence = 0.0;
    double accuracy = 0.0;
    bool correct_top1 = false;
    std::optional<int> difficulty;
    bool noise_unfair = false;
};

struct CurvePoint {
    double coverage = 0.0;
    double risk = 0.0;
    double threshold = 0.0;
};

/// Risk-coverage curve, coverage strictly increasing and ending at 1.
struct RCCurve {
    std::vector<CurvePoint> points;
};

/// Answer iff confidence >= gamma.
std::vector<Decision> decide(std::span<const ScoredExample> examples, double gamma);

double coverage(std::span<const Decision> decisions);

/// Mean of (1 - accuracy) over answered examples. Throws UndefinedRiskError
/// when nothing is answered.
double risk(std::span<const ScoredExample> examples, std::span<const Decision> decisions);

/// Sweeps every threshold. Examples tied on confidence form one point, since
/// a >= threshold cannot separate them.
RCCurve rc_curve(std::span<const ScoredExample> examples);

/// Trapezoidal area under risk over coverage, extended flat to coverage 0.
double auc(const RCCurve& curve);

/// Largest coverage among points with risk <= target, or std::nullopt when no
/// point qualifies.
std::optional<double> max_coverage_at_risk(const RCCurve& curve, double target_risk);

/// max_coverage_at_risk with 0 for an unreachable target.
double coverage_at_risk(const RCCurve& curve, double target_risk);

/// Frontier of the oracle selector that ranks by true accuracy.
RCCurve best_possible_curve(std::span<const ScoredExample> examples);

/// Expected calibration error of confidence against top-1 correctness, with
/// `bins` equal-width bins over [0, 1] (first bin closed, others right-closed).
double ece(std::span<const ScoredExample> examples, int bins = 10);

/// Slack used when comparing accumulated risks against a target.
inline constexpr double kRiskTolerance = 1e-12;

} // namespace reliqa
