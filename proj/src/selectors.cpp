#include "reliqa/selectors.hpp"

#include "reliqa/accuracy.hpp"
#include "reliqa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace reliqa {

std::vector<double> softmax(std::span<const double> logits)
{
    if (logits.empty()) {
        throw DomainError("softmax of an empty vector");
    }
    const double shift = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - shift);
        sum += out[i];
    }
    for (double& p : out) {
        p /= sum;
    }
    return out;
}

std::size_t argmax(std::span<const double> values)
{
    if (values.empty()) {
        throw DomainError("argmax of an empty vector");
    }
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

double maxprob_confidence(const Record& record)
{
    if (const auto& logits = record.features.logits) {
        const auto p = softmax(*logits);
        return *std::max_element(p.begin(), p.end());
    }
    if (record.confidence) {
        return *record.confidence;
    }
    throw ValidationError("record '" + record.id + "' has neither logits nor a confidence");
}

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("learning rate must be positive");
    }
    if (batch_size == 0) {
        throw ValidationError("batch size must be positive");
    }
    if (clip_norm < 0.0 || weight_decay < 0.0) {
        throw ValidationError("clip norm and weight decay must be non-negative");
    }
}

TrainConfig calibration_train_config()
{
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 1e-4;
    cfg.clip_norm = 0.0;
    return cfg;
}

VectorScaler VectorScaler::identity(std::size_t dim)
{
    return {nn::Vector::Ones(static_cast<Eigen::Index>(dim)), nn::Vector::Zero(static_cast<Eigen::Index>(dim))};
}

std::vector<double> VectorScaler::apply(std::span<const double> logits) const
{
    if (logits.size() != dim()) {
        throw DimensionError("scaler has dimension " + std::to_string(dim()) + ", logits have " +
                             std::to_string(logits.size()));
    }
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        out[i] = weight(k) * logits[i] + bias(k);
    }
    return out;
}

namespace {

const std::vector<double>& require_logits(const Record& rec)
{
    if (!rec.features.logits) {
        throw ValidationError("record '" + rec.id + "' has no logits");
    }
    return *rec.features.logits;
}

// Shared minibatch loop: `evaluate` gives the validation loss (or nullopt),
// and the parameters with the best validation loss are restored at the end.
template <typename MakeBatch, typename ValLoss>
void fit(nn::Network& net, std::size_t n, const TrainConfig& cfg, nn::Loss loss, MakeBatch make_batch,
         ValLoss val_loss, TrainHistory* history)
{
    cfg.validate();
    nn::AdamWConfig opt_cfg;
    opt_cfg.learning_rate = cfg.learning_rate;
    opt_cfg.weight_decay = cfg.weight_decay;
    nn::AdamW opt(opt_cfg, std::as_const(net).parameters());
    Rng order_rng = Rng::stream(cfg.seed, 1);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::optional<double> best_val;
    std::vector<nn::Matrix> best_params;
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs && n > 0; ++epoch) {
        order_rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            auto [inputs, targets] = make_batch(idx);
            auto result = nn::loss_and_grad(net, inputs, targets, loss);
            if (cfg.clip_norm > 0.0) {
                nn::clip_global_norm(result.grads, cfg.clip_norm);
            }
            opt.step(net.parameters(), result.grads);
            epoch_loss += result.loss * static_cast<double>(idx.size());
        }
        if (history) {
            history->train_loss.push_back(epoch_loss / static_cast<double>(n));
        }
        const std::optional<double> v = val_loss(net);
        if (!v) {
            continue;
        }
        if (history) {
            history->val_loss.push_back(*v);
        }
        if (!best_val || *v < *best_val) {
            best_val = v;
            best_params.clear();
            for (const nn::Matrix* p : std::as_const(net).parameters()) {
                best_params.push_back(*p);
            }
            since_best = 0;
            if (history) {
                history->best_epoch = epoch;
            }
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    if (!best_params.empty()) {
        auto params = net.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            *params[i] = best_params[i];
        }
    }
}

struct CalibrationData {
    nn::Matrix logits;
    nn::Matrix targets;
};

CalibrationData calibration_data(const RecordSet& rs)
{
    if (!rs.vocabulary) {
        throw ValidationError("vector scaling needs a vocabulary");
    }
    const auto dim = static_cast<Eigen::Index>(rs.vocabulary->size());
    CalibrationData d{nn::Matrix(dim, static_cast<Eigen::Index>(rs.size())),
                      nn::Matrix(dim, static_cast<Eigen::Index>(rs.size()))};
    for (std::size_t i = 0; i < rs.size(); ++i) {
        const auto& rec = rs.records[i];
        const auto& z = require_logits(rec);
        if (static_cast<Eigen::Index>(z.size()) != dim) {
            throw DimensionError("record '" + rec.id + "': logits do not match the vocabulary");
        }
        const auto t = soft_targets(rec.annotations, *rs.vocabulary);
        const auto col = static_cast<Eigen::Index>(i);
        for (Eigen::Index j = 0; j < dim; ++j) {
            d.logits(j, col) = z[static_cast<std::size_t>(j)];
            d.targets(j, col) = t[static_cast<std::size_t>(j)];
        }
    }
    return d;
}

nn::Network scaler_network(std::size_t dim)
{
    nn::Branch b;
    b.input = "logits";
    b.input_dim = dim;
    b.body.layers.emplace_back(nn::Linear::diagonal(dim));
    nn::Sequential trunk;
    trunk.layers.emplace_back(nn::Sigmoid{});
    return nn::Network({std::move(b)}, std::move(trunk));
}

nn::Matrix gather_columns(const nn::Matrix& m, std::span<const std::size_t> idx)
{
    nn::Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(idx[k]));
    }
    return out;
}

} // namespace

VectorScaler train_vector_scaling(const RecordSet& dev, const TrainConfig& cfg, const RecordSet* val)
{
    cfg.validate();
    const CalibrationData train = calibration_data(dev);
    const auto dim = static_cast<std::size_t>(train.logits.rows());
    nn::Network net = scaler_network(dim);

    std::optional<CalibrationData> held_out;
    if (val && !val->empty()) {
        held_out = calibration_data(*val);
    }
    auto make_batch = [&](std::span<const std::size_t> idx) {
        return std::pair{nn::Inputs{{"logits", gather_columns(train.logits, idx)}}, gather_columns(train.targets, idx)};
    };
    auto val_loss = [&](const nn::Network& n) -> std::optional<double> {
        if (!held_out) {
            return std::nullopt;
        }
        return nn::loss_value(n, {{"logits", held_out->logits}}, held_out->targets, nn::Loss::bce);
    };
    fit(net, dev.size(), cfg, nn::Loss::bce, make_batch, val_loss, nullptr);

    const auto& lin = std::get<nn::Linear>(net.branches().front().body.layers.front());
    return {lin.weight.col(0), lin.bias.col(0)};
}

CalibratedPrediction calibrated_confidence(const VectorScaler& scaler, const Record& record)
{
    const auto scaled = scaler.apply(require_logits(record));
    const auto p = softmax(scaled);
    const std::size_t idx = argmax(p);
    return {p[idx], idx};
}

std::string_view selector_loss_name(SelectorLoss loss)
{
    switch (loss) {
    case SelectorLoss::regression:
        return "regression";
    case SelectorLoss::regression_bce:
        return "regression_bce";
    case SelectorLoss::classification:
        return "classification";
    }
    return "?";
}

SelectorLoss parse_selector_loss(std::string_view name)
{
    for (auto l : {SelectorLoss::regression, SelectorLoss::regression_bce, SelectorLoss::classification}) {
        if (selector_loss_name(l) == name) {
            return l;
        }
    }
    throw ValidationError("unknown selector loss '" + std::string(name) + "'");
}

namespace {

nn::Inputs selector_inputs(const SelectorModel& model, std::span<const Record> records)
{
    nn::Inputs inputs;
    for (Channel c : model.channels) {
        const auto& [mean, stddev] = model.standardization.at(c);
        nn::Matrix m(mean.size(), static_cast<Eigen::Index>(records.size()));
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& ch = records[i].features.get(c);
            if (!ch) {
                throw ValidationError("record '" + records[i].id + "' lacks feature channel " +
                                      std::string(channel_name(c)));
            }
            if (static_cast<Eigen::Index>(ch->size()) != mean.size()) {
                throw DimensionError("record '" + records[i].id + "': channel " + std::string(channel_name(c)) +
                                     " has dimension " + std::to_string(ch->size()) + ", expected " +
                                     std::to_string(mean.size()));
            }
            const auto col = static_cast<Eigen::Index>(i);
            for (Eigen::Index j = 0; j < mean.size(); ++j) {
                m(j, col) = ((*ch)[static_cast<std::size_t>(j)] - mean(j)) / stddev(j);
            }
        }
        inputs.emplace(std::string(channel_name(c)), std::move(m));
    }
    return inputs;
}

double selector_target(const Record& rec, SelectorLoss loss)
{
    const double acc = vqa_accuracy(rec.predicted_answer, rec.annotations);
    return loss == SelectorLoss::classification ? (acc > 0.0 ? 1.0 : 0.0) : acc;
}

nn::Matrix selector_targets(std::span<const Record> records, SelectorLoss loss)
{
    nn::Matrix t(1, static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
        t(0, static_cast<Eigen::Index>(i)) = selector_target(records[i], loss);
    }
    return t;
}

nn::Loss network_loss(SelectorLoss loss)
{
    return loss == SelectorLoss::regression ? nn::Loss::mse : nn::Loss::bce;
}

constexpr std::size_t kInferenceBatch = 1024;

} // namespace

std::vector<double> SelectorModel::confidences(std::span<const Record> records) const
{
    std::vector<double> out;
    out.reserve(records.size());
    for (std::size_t start = 0; start < records.size(); start += kInferenceBatch) {
        const auto chunk = records.subspan(start, std::min(kInferenceBatch, records.size() - start));
        const nn::Matrix y = network.forward(selector_inputs(*this, chunk));
        for (Eigen::Index i = 0; i < y.cols(); ++i) {
            out.push_back(y(0, i));
        }
    }
    return out;
}

SelectorModel train_selector(const RecordSet& dev, const RecordSet& val, const std::vector<Channel>& channels,
                             SelectorLoss loss, const TrainConfig& cfg, const SelectorArchitecture& arch,
                             TrainHistory* history)
{
    cfg.validate();
    if (channels.empty()) {
        throw ValidationError("selector needs at least one feature channel");
    }
    if (dev.empty()) {
        throw ValidationError("selector training set is empty");
    }
    if (arch.encoder_hidden == 0 || arch.trunk_hidden == 0) {
        throw ValidationError("selector hidden sizes must be positive");
    }
    SelectorModel model;
    model.channels = channels;
    model.loss = loss;
    model.architecture = arch;
    model.seed = cfg.seed;

    std::vector<std::pair<std::string, std::size_t>> shapes;
    for (Channel c : channels) {
        std::optional<std::size_t> dim;
        for (const auto& rec : dev.records) {
            const auto& ch = rec.features.get(c);
            if (!ch) {
                throw ValidationError("record '" + rec.id + "' lacks feature channel " + std::string(channel_name(c)));
            }
            if (dim && *dim != ch->size()) {
                throw DimensionError("record '" + rec.id + "': inconsistent dimension for channel " +
                                     std::string(channel_name(c)));
            }
            dim = ch->size();
        }
        const auto d = static_cast<Eigen::Index>(*dim);
        nn::Vector mean = nn::Vector::Zero(d);
        nn::Vector sq = nn::Vector::Zero(d);
        for (const auto& rec : dev.records) {
            const auto& ch = *rec.features.get(c);
            for (Eigen::Index j = 0; j < d; ++j) {
                mean(j) += ch[static_cast<std::size_t>(j)];
            }
        }
        mean /= static_cast<double>(dev.size());
        for (const auto& rec : dev.records) {
            const auto& ch = *rec.features.get(c);
            for (Eigen::Index j = 0; j < d; ++j) {
                const double e = ch[static_cast<std::size_t>(j)] - mean(j);
                sq(j) += e * e;
            }
        }
        nn::Vector stddev = (sq / static_cast<double>(dev.size())).cwiseSqrt();
        for (Eigen::Index j = 0; j < d; ++j) {
            if (!(stddev(j) > 1e-12)) {
                stddev(j) = 1.0;
            }
        }
        model.standardization.emplace(c, std::pair{mean, stddev});
        shapes.emplace_back(std::string(channel_name(c)), *dim);
    }

    Rng init_rng(cfg.seed);
    model.network = nn::Network::selector(shapes, arch.encoder_hidden, arch.trunk_hidden, init_rng);

    const nn::Inputs train_inputs = selector_inputs(model, dev.records);
    const nn::Matrix train_targets = selector_targets(dev.records, loss);
    std::optional<std::pair<nn::Inputs, nn::Matrix>> held_out;
    if (!val.empty()) {
        held_out.emplace(selector_inputs(model, val.records), selector_targets(val.records, loss));
    }

    auto make_batch = [&](std::span<const std::size_t> idx) {
        nn::Inputs batch;
        for (const auto& [name, m] : train_inputs) {
            batch.emplace(name, gather_columns(m, idx));
        }
        return std::pair{std::move(batch), gather_columns(train_targets, idx)};
    };
    const nn::Loss net_loss = network_loss(loss);
    auto val_loss = [&](const nn::Network& n) -> std::optional<double> {
        if (!held_out) {
            return std::nullopt;
        }
        return nn::loss_value(n, held_out->first, held_out->second, net_loss);
    };
    fit(model.network, dev.size(), cfg, net_loss, make_batch, val_loss, history);
    return model;
}

double selector_confidence(const SelectorModel& model, const Record& record)
{
    return model.confidences(std::span<const Record>(&record, 1)).front();
}

namespace {

std::string join_channels(const std::vector<Channel>& channels)
{
    std::string out;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        out += (i ? "," : "") + std::string(channel_name(channels[i]));
    }
    return out;
}

} // namespace

void save_scaler(const std::filesystem::path& path, const VectorScaler& scaler, std::uint64_t seed)
{
    nn::Checkpoint ckpt;
    ckpt.meta["kind"] = "vector_scaling";
    ckpt.meta["seed"] = std::to_string(seed);
    ckpt.tensors.emplace_back("scaler.weight", scaler.weight);
    ckpt.tensors.emplace_back("scaler.bias", scaler.bias);
    ckpt.save(path);
}

VectorScaler load_scaler(const std::filesystem::path& path)
{
    const auto ckpt = nn::Checkpoint::load(path);
    if (ckpt.get("kind") != "vector_scaling") {
        throw ValidationError(path.string() + " is not a vector-scaling checkpoint");
    }
    VectorScaler s{ckpt.tensor("scaler.weight").col(0), ckpt.tensor("scaler.bias").col(0)};
    if (s.weight.size() != s.bias.size()) {
        throw DimensionError("scaler weight and bias sizes differ");
    }
    return s;
}

void save_selector(const std::filesystem::path& path, const SelectorModel& model)
{
    nn::Checkpoint ckpt;
    ckpt.meta["kind"] = "selector";
    ckpt.meta["seed"] = std::to_string(model.seed);
    ckpt.meta["feature_config"] = join_channels(model.channels);
    ckpt.meta["loss_mode"] = std::string(selector_loss_name(model.loss));
    ckpt.meta["encoder_hidden"] = std::to_string(model.architecture.encoder_hidden);
    ckpt.meta["trunk_hidden"] = std::to_string(model.architecture.trunk_hidden);
    for (Channel c : model.channels) {
        const auto& [mean, stddev] = model.standardization.at(c);
        ckpt.tensors.emplace_back("standardize." + std::string(channel_name(c)) + ".mean", mean);
        ckpt.tensors.emplace_back("standardize." + std::string(channel_name(c)) + ".std", stddev);
    }
    nn::store_network(ckpt, model.network, "selector");
    ckpt.save(path);
}

SelectorModel load_selector(const std::filesystem::path& path)
{
    const auto ckpt = nn::Checkpoint::load(path);
    if (ckpt.get("kind") != "selector") {
        throw ValidationError(path.string() + " is not a selector checkpoint");
    }
    SelectorModel model;
    model.seed = std::stoull(ckpt.get("seed"));
    model.loss = parse_selector_loss(ckpt.get("loss_mode"));
    model.architecture.encoder_hidden = std::stoul(ckpt.get("encoder_hidden"));
    model.architecture.trunk_hidden = std::stoul(ckpt.get("trunk_hidden"));
    std::stringstream ss(ckpt.get("feature_config"));
    std::string name;
    while (std::getline(ss, name, ',')) {
        const Channel c = parse_channel(name);
        model.channels.push_back(c);
        model.standardization.emplace(c, std::pair{nn::Vector(ckpt.tensor("standardize." + name + ".mean").col(0)),
                                                   nn::Vector(ckpt.tensor("standardize." + name + ".std").col(0))});
    }
    model.network = nn::restore_network(ckpt, "selector");
    return model;
}

ScoredExample base_example(const Record& record)
{
    ScoredExample ex;
    ex.id = record.id;
    ex.accuracy = vqa_accuracy(record.predicted_answer, record.annotations);
    ex.correct_top1 = correct_top1(record.predicted_answer, record.annotations);
    ex.difficulty = record.difficulty;
    ex.noise_unfair = record.noise_override == NoiseOverride::unfair;
    return ex;
}

std::vector<ScoredExample> score_maxprob(const RecordSet& rs)
{
    std::vector<ScoredExample> out;
    out.reserve(rs.size());
    for (const auto& rec : rs.records) {
        auto ex = base_example(rec);
        ex.confidence = maxprob_confidence(rec);
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<ScoredExample> score_precomputed(const RecordSet& rs)
{
    std::vector<ScoredExample> out;
    out.reserve(rs.size());
    for (const auto& rec : rs.records) {
        if (!rec.confidence) {
            throw ValidationError("record '" + rec.id + "' has no precomputed confidence");
        }
        auto ex = base_example(rec);
        ex.confidence = *rec.confidence;
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<ScoredExample> score_calibrated(const RecordSet& rs, const VectorScaler& scaler)
{
    std::vector<ScoredExample> out;
    out.reserve(rs.size());
    for (const auto& rec : rs.records) {
        auto ex = base_example(rec);
        const auto pred = calibrated_confidence(scaler, rec);
        ex.confidence = pred.confidence;
        if (pred.index != argmax(*rec.features.logits)) {
            if (!rs.vocabulary) {
                throw ValidationError("calibration changed an answer but no vocabulary is available");
            }
            const AnswerText& answer = (*rs.vocabulary)[pred.index];
            ex.accuracy = vqa_accuracy(answer, rec.annotations);
            ex.correct_top1 = correct_top1(answer, rec.annotations);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<ScoredExample> score_selector(const RecordSet& rs, const SelectorModel& model)
{
    const auto conf = model.confidences(rs.records);
    std::vector<ScoredExample> out;
    out.reserve(rs.size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
        auto ex = base_example(rs.records[i]);
        ex.confidence = conf[i];
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace reliqa
