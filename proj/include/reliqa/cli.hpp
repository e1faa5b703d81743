#pragma once

#include "reliqa/metrics.hpp"
#include "reliqa/reliability.hpp"
#include "reliqa/selectors.hpp"
#include "reliqa/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace reliqa::cli {

const char* version();

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

/// `key = value` lines; `#` starts a comment. Unknown keys are rejected.
class Config {
public:
    static Config parse(std::string_view text);
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;

    /// Sorted `key = value` lines; the config hash is taken over this text.
    std::string canonical() const;
    std::uint64_t hash() const { return fnv1a(canonical()); }

private:
    std::map<std::string, std::string> values_;
};

SynthConfig synth_config(const Config& cfg, std::uint64_t seed);
SplitSpec split_spec(const Config& cfg, std::uint64_t seed);
/// `section` is "selector" or "calibration".
TrainConfig train_config(const Config& cfg, const std::string& section, std::uint64_t seed);
std::vector<Channel> selector_channels(const Config& cfg);
SelectorArchitecture selector_architecture(const Config& cfg);

struct CoverageEntry {
    double target_risk = 0.0;
    double coverage = 0.0;   ///< 0 when unreachable
    bool reachable = false;
};

struct PhiEntry {
    double cost = 0.0;
    ReliabilityReport report;
};

struct RiskTargetEntry {
    double target_risk = 0.0;
    std::optional<double> gamma;   ///< empty when unreachable on the threshold split
    std::optional<double> test_risk;
    double test_coverage = 0.0;
};

/// Everything `eval` writes for one (model, selection function) pair.
struct ReportBundle {
    std::string model;
    std::string selection;
    std::string threshold_split;   ///< split the thresholds were chosen on
    std::size_t n = 0;
    double accuracy = 0.0;
    std::vector<CoverageEntry> coverage_at;
    double auc = 0.0;
    double ece = 0.0;
    std::vector<PhiEntry> phi;
    std::vector<RiskTargetEntry> risk_targets;
    RCCurve curve;
    RCCurve best_curve;

    /// Named scalar metrics in report order, as fractions (not percentages).
    std::vector<std::pair<std::string, double>> metrics() const;
};

/// Thresholds come from `threshold_set` (named `threshold_split`), metrics
/// from `test`. Throws Error if a phi value exceeds the mean accuracy.
ReportBundle build_report(const std::string& model, const std::string& selection,
                          std::span<const ScoredExample> test, std::span<const ScoredExample> threshold_set,
                          const std::string& threshold_split, std::span<const double> risks,
                          std::span<const double> costs);

/// metrics.csv, metrics.full.csv, curve.csv, risk_targets.csv, rc_curve.svg.
void write_report(const std::filesystem::path& dir, const ReportBundle& bundle);

std::string render_svg(const RCCurve& curve, const RCCurve& best, const std::string& title);

/// Runs the command line; args exclude the program name. Returns the exit
/// code: 0 success, 2 usage or validation error, 3 internal error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace reliqa::cli
