#pragma once

#include "reliqa/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

/// Small feedforward networks with exact reverse-mode gradients.
///
/// Activations are column-major: a batch of B examples of dimension d is a
/// d x B matrix. All arithmetic is double precision.
namespace reliqa::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Affine layer y = W x + b. A diagonal layer stores only the diagonal of W
/// (as a d x 1 matrix) and requires in == out.
class Linear {
public:
    /// Dense layer, weights and bias uniform in +-sqrt(1 / in).
    Linear(std::size_t in, std::size_t out, Rng& rng);

    /// Diagonal layer initialized to the identity (w = 1, b = 0).
    static Linear diagonal(std::size_t dim);

    /// Zero-filled layer of the given shape, for deserialization.
    static Linear zeros(std::size_t in, std::size_t out, bool diagonal_only);

    bool diagonal_only() const { return diagonal_; }
    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }

    Matrix forward(const Matrix& x) const;

    Matrix weight;
    Matrix bias;

private:
    Linear() = default;

    std::size_t in_ = 0;
    std::size_t out_ = 0;
    bool diagonal_ = false;
};

struct Relu {};
struct Sigmoid {};

using Layer = std::variant<Linear, Relu, Sigmoid>;

struct Sequential {
    std::vector<Layer> layers;
};

/// One named input feeding its own encoder. An empty body passes the input
/// through unchanged.
struct Branch {
    std::string input;
    std::size_t input_dim = 0;
    Sequential body;
};

using Inputs = std::map<std::string, Matrix>;
using Gradients = std::vector<Matrix>;

/// Activations kept by a forward pass for the backward pass.
struct Trace {
    std::vector<std::vector<Matrix>> branch;
    std::vector<Matrix> trunk;

    const Matrix& output() const { return trunk.back(); }
};

/// Encoders per named input, concatenated (in branch order) into a trunk.
class Network {
public:
    /// Empty placeholder; forward() throws until a real network is assigned.
    Network() = default;
    Network(std::vector<Branch> branches, Sequential trunk);

    const std::vector<Branch>& branches() const { return branches_; }
    const Sequential& trunk() const { return trunk_; }
    std::size_t output_dim() const { return output_dim_; }

    Matrix forward(const Inputs& inputs) const;
    Trace forward_trace(const Inputs& inputs) const;

    /// Parameter gradients given dLoss/dOutput. `skip_final_sigmoid` treats
    /// `d_output` as the gradient at the input of a trailing Sigmoid.
    Gradients backward(const Trace& trace, const Matrix& d_output, bool skip_final_sigmoid = false) const;

    /// Weights and biases in a fixed order: branches, then trunk; weight
    /// before bias within a layer.
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;
    /// Number of scalar parameters.
    std::size_t parameter_count() const;

    bool ends_with_sigmoid() const;

    /// Architecture as text, e.g. "q:16|linear(16,8),relu;trunk|linear(8,1),sigmoid".
    std::string describe() const;

    /// Rebuilds an architecture from describe() output with zero parameters.
    static Network from_description(const std::string& text);

    /// Standard selector shape: per-input linear+ReLU encoders of width
    /// `encoder_hidden`, two linear+ReLU trunk layers of width
    /// `trunk_hidden`, then a scalar sigmoid head.
    static Network selector(const std::vector<std::pair<std::string, std::size_t>>& inputs, std::size_t encoder_hidden,
                            std::size_t trunk_hidden, Rng& rng);

private:
    std::vector<Branch> branches_;
    Sequential trunk_;
    std::size_t output_dim_ = 0;
};

enum class Loss { mse, bce };

struct LossResult {
    double loss = 0.0;
    Gradients grads;
};

/// Mean loss over all output entries of the batch. For bce the targets must
/// lie in [0, 1]; when the network ends in a Sigmoid the loss is evaluated on
/// the pre-activation for numerical stability.
double loss_value(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss);
LossResult loss_and_grad(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss);

double global_norm(const Gradients& grads);

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

/// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
public:
    AdamW(AdamWConfig cfg, const std::vector<const Matrix*>& shapes);

    /// p <- p * (1 - lr * wd), then the bias-corrected moment update.
    void step(const std::vector<Matrix*>& params, const Gradients& grads);

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return step_; }
    const std::vector<Matrix>& first_moment() const { return m_; }
    const std::vector<Matrix>& second_moment() const { return v_; }

    /// Restores saved state; shapes must match.
    void restore(std::int64_t step, std::vector<Matrix> m, std::vector<Matrix> v);

private:
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

/// Central differences of loss_value with respect to every parameter entry.
Gradients numeric_gradients(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss,
                            double epsilon);

/// max over entries of |a - n| / max(|a|, |n|, floor).
double max_relative_error(const Gradients& analytic, const Gradients& numeric, double floor = 1e-8);

/// Compares loss_and_grad against numeric_gradients; epsilon in (0, 1e-2].
double finite_difference_check(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss,
                               double epsilon = 1e-5);

/// Versioned text container of metadata and named tensors. Values are
/// written as hexadecimal floats, so a save/load round trip is exact.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Matrix>> tensors;

    const Matrix& tensor(const std::string& name) const;
    const std::string& get(const std::string& key) const;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

void store_network(Checkpoint& ckpt, const Network& net, const std::string& prefix);
Network restore_network(const Checkpoint& ckpt, const std::string& prefix);

void store_optimizer(Checkpoint& ckpt, const AdamW& opt, const std::string& prefix);
AdamW restore_optimizer(const Checkpoint& ckpt, const std::string& prefix, const Network& net);

} // namespace reliqa::nn
