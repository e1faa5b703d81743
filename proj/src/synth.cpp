#include "reliqa/synth.hpp"

#include "reliqa/accuracy.hpp"
#include "reliqa/errors.hpp"
#include "reliqa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace reliqa {

namespace {

constexpr double kLevelTolerance = 1e-9;

// Levels at or above 0.6 have the predicted answer as the most frequent
// reference (k >= 2 copies against distinct fillers).
bool top1_correct_level(double level)
{
    return level >= 0.6 - kLevelTolerance;
}

std::vector<int> match_counts_for(double level)
{
    std::vector<int> ks;
    for (int k = 0; k <= static_cast<int>(kAnnotationCount); ++k) {
        if (std::abs(closed_form_accuracy(k) - level) <= kLevelTolerance) {
            ks.push_back(k);
        }
    }
    return ks;
}

std::string vocab_word(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "ans%03zu", i);
    return buf;
}

std::string record_id(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%07zu", i);
    return buf;
}

std::string image_id(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "img%07zu", i);
    return buf;
}

double standardized(const SynthConfig& cfg, double level)
{
    const double sd = cfg.lattice_std();
    return sd > 0.0 ? (level - cfg.lattice_mean()) / sd : 0.0;
}

bool partial_level(double level)
{
    return level > kLevelTolerance && level < 1.0 - kLevelTolerance;
}

// Standardized indicator of partial credit over the lattice.
double standardized_partial(const SynthConfig& cfg, double level)
{
    double m = 0.0;
    for (const auto& [l, p] : cfg.lattice) {
        m += partial_level(l) ? p : 0.0;
    }
    const double sd = std::sqrt(m * (1.0 - m));
    return sd > 0.0 ? ((partial_level(level) ? 1.0 : 0.0) - m) / sd : 0.0;
}

// Posterior weights over lattice levels given x = s * z(a) + noise * e and,
// optionally, y = s * zp(a) + noise * e'.
std::vector<double> level_posterior(const SynthConfig& cfg, double x, std::optional<double> y, double noise)
{
    const double s = cfg.signal_strength;
    std::vector<double> w;
    w.reserve(cfg.lattice.size());
    if (s == 0.0) {
        for (const auto& [level, p] : cfg.lattice) {
            w.push_back(p);
        }
        return w;
    }
    auto sq_dist = [&](double level) {
        const double dx = x - s * standardized(cfg, level);
        const double dy = y ? *y - s * standardized_partial(cfg, level) : 0.0;
        return dx * dx + dy * dy;
    };
    if (noise == 0.0) {
        // Noise-free: the level whose mean is nearest.
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        std::size_t i = 0;
        for (const auto& [level, p] : cfg.lattice) {
            const double d = sq_dist(level);
            if (p > 0.0 && d < best) {
                best = d;
                best_i = i;
            }
            ++i;
        }
        w.assign(cfg.lattice.size(), 0.0);
        w[best_i] = 1.0;
        return w;
    }
    std::vector<double> logw;
    for (const auto& [level, p] : cfg.lattice) {
        logw.push_back(p > 0.0 ? std::log(p) - 0.5 * sq_dist(level) / (noise * noise)
                               : -std::numeric_limits<double>::infinity());
    }
    const double top = *std::max_element(logw.begin(), logw.end());
    double sum = 0.0;
    for (double lw : logw) {
        w.push_back(std::exp(lw - top));
        sum += w.back();
    }
    for (double& x_i : w) {
        x_i /= sum;
    }
    return w;
}

} // namespace

void SynthConfig::validate() const
{
    if (n == 0) {
        throw ValidationError("synth: n must be positive");
    }
    if (vocab_size < 2) {
        throw ValidationError("synth: vocab_size must be at least 2");
    }
    if (lattice.empty()) {
        throw ValidationError("synth: empty accuracy lattice");
    }
    double total = 0.0;
    for (const auto& [level, p] : lattice) {
        if (!(p >= 0.0)) {
            throw ValidationError("synth: negative lattice frequency");
        }
        if (match_counts_for(level).empty()) {
            throw ValidationError("synth: accuracy level " + std::to_string(level) +
                                  " is not attainable with 10 references");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("synth: lattice frequencies must sum to 1");
    }
    if (!(distortion >= 1.0)) {
        throw ValidationError("synth: distortion must be >= 1");
    }
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) {
        throw ValidationError("synth: signal_strength must be in [0, 1]");
    }
    if (!(noise_std >= 0.0) || !(maxprob_noise >= 0.0) || !(logit_spread >= 0.0)) {
        throw ValidationError("synth: noise and spread parameters must be non-negative");
    }
    if (q_dim == 0 || v_dim == 0 || v_tilde_dim == 0 || r_dim == 0) {
        throw ValidationError("synth: feature dimensions must be positive");
    }
    if (questions_per_image == 0) {
        throw ValidationError("synth: questions_per_image must be positive");
    }
    if (!(unfair_rate >= 0.0 && unfair_rate <= 1.0)) {
        throw ValidationError("synth: unfair_rate must be in [0, 1]");
    }
}

double SynthConfig::lattice_mean() const
{
    double m = 0.0;
    for (const auto& [level, p] : lattice) {
        m += level * p;
    }
    return m;
}

double SynthConfig::lattice_std() const
{
    const double m = lattice_mean();
    double var = 0.0;
    for (const auto& [level, p] : lattice) {
        var += p * (level - m) * (level - m);
    }
    return std::sqrt(var);
}

double calibrated_correct_probability(const SynthConfig& cfg, double maxprob_signal)
{
    const double noise = std::hypot(cfg.noise_std, cfg.maxprob_noise);
    const auto w = level_posterior(cfg, maxprob_signal, std::nullopt, noise);
    double p = 0.0;
    std::size_t i = 0;
    for (const auto& [level, unused] : cfg.lattice) {
        if (top1_correct_level(level)) {
            p += w[i];
        }
        ++i;
    }
    return p;
}

double bayes_confidence(const SynthConfig& cfg, const Latent& latent)
{
    const auto w = level_posterior(cfg, latent.signal, latent.partial_signal, cfg.noise_std);
    double e = 0.0;
    std::size_t i = 0;
    for (const auto& [level, unused] : cfg.lattice) {
        e += w[i++] * level;
    }
    return e;
}

double bayes_confidence(const SynthConfig& cfg, const Record& record,
                        const std::unordered_map<std::string, Latent>& latents)
{
    auto it = latents.find(record.id);
    if (it == latents.end()) {
        throw ValidationError("record '" + record.id + "' has no latent");
    }
    return bayes_confidence(cfg, it->second);
}

SynthData generate(const SynthConfig& cfg)
{
    cfg.validate();
    const std::size_t V = cfg.vocab_size;

    SynthData out;
    std::vector<AnswerText> vocab;
    vocab.reserve(V);
    for (std::size_t j = 0; j < V; ++j) {
        vocab.emplace_back(vocab_word(j));
    }
    out.records.vocabulary = vocab;
    out.records.records.reserve(cfg.n);
    out.latents.reserve(cfg.n);

    std::vector<std::pair<double, double>> levels(cfg.lattice.begin(), cfg.lattice.end());
    std::vector<std::vector<int>> ks;
    for (const auto& [level, p] : levels) {
        ks.push_back(match_counts_for(level));
    }
    const double min_conf = 1.0 / static_cast<double>(V) + 1e-3;

    for (std::size_t i = 0; i < cfg.n; ++i) {
        Rng rng = Rng::stream(cfg.seed, i);

        // Accuracy level and a match count realizing it.
        double u = rng.uniform();
        std::size_t li = 0;
        while (li + 1 < levels.size() && (u >= levels[li].second || levels[li].second == 0.0)) {
            u -= levels[li].second;
            ++li;
        }
        while (levels[li].second == 0.0 && li > 0) {
            --li;
        }
        const double level = levels[li].first;
        const int k = ks[li][static_cast<std::size_t>(rng.below(ks[li].size()))];

        Latent lat;
        lat.id = record_id(i);
        lat.accuracy = level;
        lat.signal = cfg.signal_strength * standardized(cfg, level) + cfg.noise_std * rng.normal();
        lat.maxprob_signal = lat.signal + cfg.maxprob_noise * rng.normal();
        lat.partial_signal =
            cfg.signal_strength * standardized_partial(cfg, level) + cfg.noise_std * rng.normal();

        // Calibrated logits: sigmoid(top) = c and the other classes share
        // unit exponential mass, so softmax(top) = c as well. Distortion
        // multiplies every logit, sharpening the softmax.
        const std::size_t pred = static_cast<std::size_t>(rng.below(V));
        const double c = std::clamp(calibrated_correct_probability(cfg, lat.maxprob_signal), min_conf, 1.0 - 1e-9);
        const double top = std::log(c / (1.0 - c));
        std::vector<double> offsets(V, 0.0);
        for (std::size_t j = 0; j < V; ++j) {
            if (j != pred) {
                offsets[j] = rng.uniform();
            }
        }
        auto others_base = [&](double spread) {
            double s = 0.0;
            for (std::size_t j = 0; j < V; ++j) {
                if (j != pred) {
                    s += std::exp(-spread * offsets[j]);
                }
            }
            return -std::log(s);
        };
        double spread = cfg.logit_spread;
        double base = others_base(spread);
        if (base >= top) {
            spread = 0.0;
            base = others_base(spread);
        }
        std::vector<double> logits(V);
        for (std::size_t j = 0; j < V; ++j) {
            logits[j] = cfg.distortion * (j == pred ? top : base - spread * offsets[j]);
        }

        Record rec;
        rec.id = lat.id;
        rec.image_id = image_id(i / cfg.questions_per_image);
        rec.predicted_answer = vocab[pred];
        std::vector<AnswerText> refs;
        for (int a = 0; a < k; ++a) {
            refs.push_back(vocab[pred]);
        }
        for (int a = k; a < static_cast<int>(kAnnotationCount); ++a) {
            refs.emplace_back("alt-" + std::to_string(a));
        }
        rec.annotations = AnnotationSet(std::move(refs));

        auto noisy = [&rng](std::size_t dim, double lead) {
            std::vector<double> x(dim);
            for (std::size_t j = 0; j < dim; ++j) {
                x[j] = rng.normal();
            }
            x[0] += lead;
            return x;
        };
        rec.features.logits = std::move(logits);
        rec.features.r = noisy(cfg.r_dim, 0.0);
        (*rec.features.r)[0] = lat.signal;
        if (cfg.r_dim > 1) {
            (*rec.features.r)[1] = lat.partial_signal;
        }
        rec.features.q = noisy(cfg.q_dim, 0.5 * lat.signal);
        if (cfg.q_dim > 1) {
            (*rec.features.q)[1] += 0.5 * lat.partial_signal;
        }
        rec.features.v = noisy(cfg.v_dim, 0.25 * lat.signal);
        rec.features.v_tilde = noisy(cfg.v_tilde_dim, 0.0);

        rec.difficulty = static_cast<int>(rng.below(3)) + 1;
        if (level == 0.0 && rng.uniform() < cfg.unfair_rate) {
            rec.noise_override = NoiseOverride::unfair;
        }
        out.records.records.push_back(std::move(rec));
        out.latents.push_back(std::move(lat));
    }
    return out;
}

std::filesystem::path latent_path_for(const std::filesystem::path& records_path)
{
    auto p = records_path;
    p.replace_extension(".latent");
    return p;
}

void save_latents(const std::filesystem::path& path, const std::vector<Latent>& latents)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write latent file " + path.string());
    }
    char buf[128];
    for (const auto& l : latents) {
        std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\t%.17g\t%.17g\n", l.accuracy, l.signal, l.maxprob_signal,
                      l.partial_signal);
        out << l.id << buf;
    }
}

std::unordered_map<std::string, Latent> load_latents(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open latent file " + path.string());
    }
    std::unordered_map<std::string, Latent> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        Latent l;
        if (!(ss >> l.id >> l.accuracy >> l.signal >> l.maxprob_signal >> l.partial_signal)) {
            throw ParseError(line_no, "malformed latent line");
        }
        out.emplace(l.id, std::move(l));
    }
    return out;
}

} // namespace reliqa
