#pragma once

#include "reliqa/metrics.hpp"
#include "reliqa/nn.hpp"
#include "reliqa/records.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reliqa {

/// Max-shifted softmax. Throws DomainError on empty input.
std::vector<double> softmax(std::span<const double> logits);

/// Index of the largest entry (first on ties).
std::size_t argmax(std::span<const double> values);

/// Largest softmax probability of the record's logits, or the precomputed
/// confidence when the record has no logits.
double maxprob_confidence(const Record& record);

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    std::size_t patience = 5;   ///< epochs without validation improvement
    std::uint64_t seed = 0;
    double clip_norm = 0.25;    ///< 0 disables clipping
    double weight_decay = 0.0;

    void validate() const;
};

/// Defaults for vector scaling: lr 0.01, weight decay 1e-4, no clipping.
TrainConfig calibration_train_config();

/// Per-class affine map of logits: z' = w * z + b (element-wise).
struct VectorScaler {
    nn::Vector weight;
    nn::Vector bias;

    static VectorScaler identity(std::size_t dim);
    std::size_t dim() const { return static_cast<std::size_t>(weight.size()); }
    std::vector<double> apply(std::span<const double> logits) const;
};

/// Trains the scaler with element-wise BCE between sigmoid(z') and the soft
/// accuracy labels over the vocabulary. Starts from the identity. When `val`
/// is non-empty the scaler with the lowest validation loss is kept.
VectorScaler train_vector_scaling(const RecordSet& dev, const TrainConfig& cfg, const RecordSet* val = nullptr);

struct CalibratedPrediction {
    double confidence = 0.0;
    std::size_t index = 0;
};

/// Softmax over scaled logits: the top probability and its index.
CalibratedPrediction calibrated_confidence(const VectorScaler& scaler, const Record& record);

enum class SelectorLoss {
    regression,     ///< MSE against the VQA accuracy
    regression_bce, ///< BCE against the VQA accuracy as a soft label
    classification, ///< BCE against 1[accuracy > 0]
};

std::string_view selector_loss_name(SelectorLoss loss);
SelectorLoss parse_selector_loss(std::string_view name);

struct SelectorArchitecture {
    std::size_t encoder_hidden = 512;
    std::size_t trunk_hidden = 1024;
};

/// Learned confidence estimator over a subset of feature channels.
struct SelectorModel {
    std::vector<Channel> channels;
    SelectorLoss loss = SelectorLoss::regression;
    SelectorArchitecture architecture;
    std::uint64_t seed = 0;
    /// Per-channel (mean, std) fitted on the training split.
    std::map<Channel, std::pair<nn::Vector, nn::Vector>> standardization;
    nn::Network network;

    /// Scores records in batches.
    std::vector<double> confidences(std::span<const Record> records) const;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
};

/// Trains a Selector. Targets are the records' VQA accuracy (regression) or
/// 1[accuracy > 0] (classification). Batches are reshuffled every epoch from
/// the config seed; the parameters with the lowest validation loss are kept.
SelectorModel train_selector(const RecordSet& dev, const RecordSet& val, const std::vector<Channel>& channels,
                             SelectorLoss loss, const TrainConfig& cfg, const SelectorArchitecture& arch = {},
                             TrainHistory* history = nullptr);

double selector_confidence(const SelectorModel& model, const Record& record);

void save_scaler(const std::filesystem::path& path, const VectorScaler& scaler, std::uint64_t seed);
VectorScaler load_scaler(const std::filesystem::path& path);

void save_selector(const std::filesystem::path& path, const SelectorModel& model);
SelectorModel load_selector(const std::filesystem::path& path);

/// Accuracy and bookkeeping fields of a record, confidence unset.
ScoredExample base_example(const Record& record);

std::vector<ScoredExample> score_maxprob(const RecordSet& rs);
std::vector<ScoredExample> score_precomputed(const RecordSet& rs);
/// Calibration may move the argmax; such records are re-scored with the new
/// answer from the vocabulary.
std::vector<ScoredExample> score_calibrated(const RecordSet& rs, const VectorScaler& scaler);
std::vector<ScoredExample> score_selector(const RecordSet& rs, const SelectorModel& model);

} // namespace reliqa
