#pragma once

#include "reliqa/records.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace reliqa {

/// Synthetic selective-prediction benchmark.
///
/// Each record draws an accuracy level a from the lattice. A latent signal
/// t = signal_strength * z(a) + noise_std * e (z standardizes a over the
/// lattice, e ~ N(0, 1)) is written into channel r. A second latent u tracks
/// partial credit (0 < a < 1) the same way and also goes into r. Channels q
/// and v carry progressively weaker copies and v_tilde carries none. The logits
/// realize a MaxProb confidence equal to P(top-1 correct | t') for a noisier
/// copy t' of t, then are multiplied by the distortion: 1 is calibrated and
/// larger values sharpen the softmax into overconfidence.
struct SynthConfig {
    std::size_t n = 10000;
    std::size_t vocab_size = 64;
    /// Accuracy level -> probability. Levels must be attainable accuracies.
    std::map<double, double> lattice{{0.0, 0.30}, {0.3, 0.06}, {0.6, 0.02}, {0.9, 0.02}, {1.0, 0.60}};
    double distortion = 2.0;
    std::size_t q_dim = 16;
    std::size_t v_dim = 16;
    std::size_t v_tilde_dim = 16;
    std::size_t r_dim = 16;
    double signal_strength = 0.8;
    double noise_std = 0.6;
    /// Extra noise on the copy of t that drives MaxProb.
    double maxprob_noise = 1.0;
    /// Spread of the non-predicted logits below the predicted one.
    double logit_spread = 2.0;
    std::size_t questions_per_image = 3;
    /// Fraction of fully wrong answers flagged noise_override = unfair.
    double unfair_rate = 0.0;
    std::uint64_t seed = 0;

    /// Throws ValidationError.
    void validate() const;

    double lattice_mean() const;
    double lattice_std() const;
};

/// Generator-side ground truth for one record.
struct Latent {
    std::string id;
    double accuracy = 0.0;
    double signal = 0.0;          ///< t
    double maxprob_signal = 0.0;  ///< t'
    double partial_signal = 0.0;  ///< u
};

struct SynthData {
    RecordSet records;
    std::vector<Latent> latents;
};

SynthData generate(const SynthConfig& cfg);

/// E[accuracy | t, u] under the generator: the reference selector that the
/// learned ones are measured against.
double bayes_confidence(const SynthConfig& cfg, const Latent& latent);

/// Looks up the record's latent; throws ValidationError when it is missing.
double bayes_confidence(const SynthConfig& cfg, const Record& record,
                        const std::unordered_map<std::string, Latent>& latents);

/// P(top-1 correct | t'), before distortion.
double calibrated_correct_probability(const SynthConfig& cfg, double maxprob_signal);

void save_latents(const std::filesystem::path& path, const std::vector<Latent>& latents);
std::unordered_map<std::string, Latent> load_latents(const std::filesystem::path& path);

/// `dir/name.jsonl` -> `dir/name.latent`
std::filesystem::path latent_path_for(const std::filesystem::path& records_path);

} // namespace reliqa
