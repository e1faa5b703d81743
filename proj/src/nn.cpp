#include "reliqa/nn.hpp"

#include "reliqa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace reliqa::nn {

namespace {

std::string layer_label(const Layer& layer)
{
    if (const auto* lin = std::get_if<Linear>(&layer)) {
        return lin->diagonal_only() ? "diag(" + std::to_string(lin->in_dim()) + ")"
                                    : "linear(" + std::to_string(lin->in_dim()) + "," + std::to_string(lin->out_dim()) + ")";
    }
    return std::holds_alternative<Relu>(layer) ? "relu" : "sigmoid";
}

// Checks a layer stack against its input dimension; returns the output dim.
std::size_t check_stack(const Sequential& seq, std::size_t dim, const std::string& where)
{
    for (std::size_t i = 0; i < seq.layers.size(); ++i) {
        if (const auto* lin = std::get_if<Linear>(&seq.layers[i])) {
            if (lin->in_dim() != dim) {
                throw DimensionError(where + " layer " + std::to_string(i) + " (" + layer_label(seq.layers[i]) +
                                     "): expected input dimension " + std::to_string(lin->in_dim()) + ", got " +
                                     std::to_string(dim));
            }
            dim = lin->out_dim();
        }
    }
    return dim;
}

Matrix sigmoid(const Matrix& x)
{
    return x.unaryExpr([](double z) {
        if (z >= 0.0) {
            return 1.0 / (1.0 + std::exp(-z));
        }
        const double e = std::exp(z);
        return e / (1.0 + e);
    });
}

Matrix apply_layer(const Layer& layer, const Matrix& x)
{
    if (const auto* lin = std::get_if<Linear>(&layer)) {
        return lin->forward(x);
    }
    if (std::holds_alternative<Relu>(layer)) {
        return x.cwiseMax(0.0);
    }
    return sigmoid(x);
}

std::vector<Matrix> run_stack(const Sequential& seq, const Matrix& x)
{
    std::vector<Matrix> acts;
    acts.reserve(seq.layers.size() + 1);
    acts.push_back(x);
    for (const auto& layer : seq.layers) {
        acts.push_back(apply_layer(layer, acts.back()));
    }
    return acts;
}

// Backpropagates through layers [0, last) of a stack. Linear gradients are
// appended to `grads` in reverse layer order. Returns dLoss/dInput.
Matrix backprop_stack(const Sequential& seq, const std::vector<Matrix>& acts, Matrix d, std::size_t last,
                      std::vector<Matrix>& grads)
{
    for (std::size_t i = last; i-- > 0;) {
        const Matrix& x = acts[i];
        const Layer& layer = seq.layers[i];
        if (const auto* lin = std::get_if<Linear>(&layer)) {
            Matrix db = d.rowwise().sum();
            if (lin->diagonal_only()) {
                Matrix dw = d.cwiseProduct(x).rowwise().sum();
                d = lin->weight.col(0).asDiagonal() * d;
                grads.push_back(std::move(db));
                grads.push_back(std::move(dw));
            } else {
                Matrix dw = d * x.transpose();
                d = lin->weight.transpose() * d;
                grads.push_back(std::move(db));
                grads.push_back(std::move(dw));
            }
        } else if (std::holds_alternative<Relu>(layer)) {
            d = d.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
        } else {
            const Matrix& y = acts[i + 1];
            d = d.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
        }
    }
    return d;
}

std::string hex(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", x);
    return buf;
}

double parse_number(const std::string& s)
{
    char* end = nullptr;
    const double x = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw ParseError(0, "invalid number '" + s + "'");
    }
    return x;
}

} // namespace

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) : in_(in), out_(out)
{
    if (in == 0 || out == 0) {
        throw DimensionError("linear layer with zero dimension");
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    bias.resize(static_cast<Eigen::Index>(out), 1);
    // Row-major fill so the draw order does not depend on Eigen's layout.
    for (Eigen::Index r = 0; r < weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < weight.cols(); ++c) {
            weight(r, c) = rng.uniform(-bound, bound);
        }
    }
    for (Eigen::Index r = 0; r < bias.rows(); ++r) {
        bias(r, 0) = rng.uniform(-bound, bound);
    }
}

Linear Linear::diagonal(std::size_t dim)
{
    Linear l = zeros(dim, dim, true);
    l.weight.setOnes();
    return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool diagonal_only)
{
    if (in == 0 || out == 0) {
        throw DimensionError("linear layer with zero dimension");
    }
    if (diagonal_only && in != out) {
        throw DimensionError("diagonal layer needs in == out");
    }
    Linear l;
    l.in_ = in;
    l.out_ = out;
    l.diagonal_ = diagonal_only;
    l.weight = Matrix::Zero(static_cast<Eigen::Index>(out), diagonal_only ? 1 : static_cast<Eigen::Index>(in));
    l.bias = Matrix::Zero(static_cast<Eigen::Index>(out), 1);
    return l;
}

Matrix Linear::forward(const Matrix& x) const
{
    if (static_cast<std::size_t>(x.rows()) != in_) {
        throw DimensionError("linear layer expects dimension " + std::to_string(in_) + ", got " +
                             std::to_string(x.rows()));
    }
    Matrix y = diagonal_ ? Matrix(weight.col(0).asDiagonal() * x) : Matrix(weight * x);
    y.colwise() += bias.col(0);
    return y;
}

Network::Network(std::vector<Branch> branches, Sequential trunk) : branches_(std::move(branches)), trunk_(std::move(trunk))
{
    if (branches_.empty()) {
        throw DimensionError("network needs at least one input branch");
    }
    std::size_t concat = 0;
    for (const auto& b : branches_) {
        if (b.input_dim == 0) {
            throw DimensionError("input '" + b.input + "' has zero dimension");
        }
        concat += check_stack(b.body, b.input_dim, "branch '" + b.input + "'");
    }
    output_dim_ = check_stack(trunk_, concat, "trunk");
}

Trace Network::forward_trace(const Inputs& inputs) const
{
    if (branches_.empty()) {
        throw DimensionError("forward through an empty network");
    }
    Trace trace;
    trace.branch.reserve(branches_.size());
    Eigen::Index batch = -1;
    Eigen::Index concat = 0;
    for (const auto& b : branches_) {
        auto it = inputs.find(b.input);
        if (it == inputs.end()) {
            throw DimensionError("missing input '" + b.input + "'");
        }
        const Matrix& x = it->second;
        if (static_cast<std::size_t>(x.rows()) != b.input_dim) {
            throw DimensionError("input '" + b.input + "': expected dimension " + std::to_string(b.input_dim) +
                                 ", got " + std::to_string(x.rows()));
        }
        if (batch >= 0 && x.cols() != batch) {
            throw DimensionError("input '" + b.input + "' has a different batch size");
        }
        batch = x.cols();
        trace.branch.push_back(run_stack(b.body, x));
        concat += trace.branch.back().back().rows();
    }
    Matrix cat(concat, batch);
    Eigen::Index row = 0;
    for (const auto& acts : trace.branch) {
        cat.middleRows(row, acts.back().rows()) = acts.back();
        row += acts.back().rows();
    }
    trace.trunk = run_stack(trunk_, cat);
    return trace;
}

Matrix Network::forward(const Inputs& inputs) const
{
    return forward_trace(inputs).output();
}

bool Network::ends_with_sigmoid() const
{
    return !trunk_.layers.empty() && std::holds_alternative<Sigmoid>(trunk_.layers.back());
}

Gradients Network::backward(const Trace& trace, const Matrix& d_output, bool skip_final_sigmoid) const
{
    if (skip_final_sigmoid && !ends_with_sigmoid()) {
        throw DimensionError("backward: network does not end with a sigmoid");
    }
    std::vector<Matrix> trunk_grads;
    const std::size_t last = trunk_.layers.size() - (skip_final_sigmoid ? 1 : 0);
    Matrix d_cat = backprop_stack(trunk_, trace.trunk, d_output, last, trunk_grads);

    std::vector<std::vector<Matrix>> branch_grads(branches_.size());
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < branches_.size(); ++i) {
        const auto& acts = trace.branch[i];
        const Eigen::Index rows = acts.back().rows();
        backprop_stack(branches_[i].body, acts, d_cat.middleRows(row, rows), branches_[i].body.layers.size(),
                       branch_grads[i]);
        row += rows;
    }

    // Stacks produced (bias, weight) pairs from the last layer backwards.
    Gradients out;
    out.reserve(parameters().size());
    auto append_reversed = [&out](std::vector<Matrix>& g) {
        for (auto it = g.rbegin(); it != g.rend(); ++it) {
            out.push_back(std::move(*it));
        }
    };
    for (auto& g : branch_grads) {
        append_reversed(g);
    }
    append_reversed(trunk_grads);
    return out;
}

std::vector<const Matrix*> Network::parameters() const
{
    std::vector<const Matrix*> out;
    auto collect = [&out](const Sequential& seq) {
        for (const auto& layer : seq.layers) {
            if (const auto* lin = std::get_if<Linear>(&layer)) {
                out.push_back(&lin->weight);
                out.push_back(&lin->bias);
            }
        }
    };
    for (const auto& b : branches_) {
        collect(b.body);
    }
    collect(trunk_);
    return out;
}

std::vector<Matrix*> Network::parameters()
{
    std::vector<Matrix*> out;
    for (const Matrix* p : std::as_const(*this).parameters()) {
        out.push_back(const_cast<Matrix*>(p));
    }
    return out;
}

std::size_t Network::parameter_count() const
{
    std::size_t n = 0;
    for (const Matrix* p : parameters()) {
        n += static_cast<std::size_t>(p->size());
    }
    return n;
}

std::string Network::describe() const
{
    auto stack = [](const Sequential& seq) {
        std::string s;
        for (std::size_t i = 0; i < seq.layers.size(); ++i) {
            s += (i ? "," : "") + layer_label(seq.layers[i]);
        }
        return s;
    };
    std::string out;
    for (const auto& b : branches_) {
        out += b.input + ":" + std::to_string(b.input_dim) + "|" + stack(b.body) + ";";
    }
    out += "trunk|" + stack(trunk_);
    return out;
}

Network Network::from_description(const std::string& text)
{
    auto fail = [&text]() -> Network { throw ParseError(0, "invalid network description '" + text + "'"); };

    auto parse_stack = [&](const std::string& s) {
        Sequential seq;
        std::size_t pos = 0;
        while (pos < s.size()) {
            // Layer tokens are separated by commas outside parentheses.
            std::size_t end = pos;
            int depth = 0;
            while (end < s.size() && (s[end] != ',' || depth > 0)) {
                depth += s[end] == '(' ? 1 : (s[end] == ')' ? -1 : 0);
                ++end;
            }
            const std::string tok = s.substr(pos, end - pos);
            std::size_t a = 0;
            std::size_t b = 0;
            if (tok == "relu") {
                seq.layers.emplace_back(Relu{});
            } else if (tok == "sigmoid") {
                seq.layers.emplace_back(Sigmoid{});
            } else if (std::sscanf(tok.c_str(), "linear(%zu,%zu)", &a, &b) == 2) {
                seq.layers.emplace_back(Linear::zeros(a, b, false));
            } else if (std::sscanf(tok.c_str(), "diag(%zu)", &a) == 1) {
                seq.layers.emplace_back(Linear::zeros(a, a, true));
            } else {
                fail();
            }
            pos = end + 1;
        }
        return seq;
    };

    std::vector<Branch> branches;
    Sequential trunk;
    bool have_trunk = false;
    std::stringstream ss(text);
    std::string section;
    while (std::getline(ss, section, ';')) {
        const auto bar = section.find('|');
        if (bar == std::string::npos) {
            fail();
        }
        const std::string head = section.substr(0, bar);
        const std::string body = section.substr(bar + 1);
        if (head == "trunk") {
            trunk = parse_stack(body);
            have_trunk = true;
            continue;
        }
        const auto colon = head.find(':');
        if (colon == std::string::npos) {
            fail();
        }
        Branch br;
        br.input = head.substr(0, colon);
        br.input_dim = static_cast<std::size_t>(std::stoul(head.substr(colon + 1)));
        br.body = parse_stack(body);
        branches.push_back(std::move(br));
    }
    if (!have_trunk) {
        fail();
    }
    return Network(std::move(branches), std::move(trunk));
}

Network Network::selector(const std::vector<std::pair<std::string, std::size_t>>& inputs, std::size_t encoder_hidden,
                          std::size_t trunk_hidden, Rng& rng)
{
    std::vector<Branch> branches;
    for (const auto& [name, dim] : inputs) {
        Branch b;
        b.input = name;
        b.input_dim = dim;
        b.body.layers.emplace_back(Linear(dim, encoder_hidden, rng));
        b.body.layers.emplace_back(Relu{});
        branches.push_back(std::move(b));
    }
    Sequential trunk;
    trunk.layers.emplace_back(Linear(encoder_hidden * inputs.size(), trunk_hidden, rng));
    trunk.layers.emplace_back(Relu{});
    trunk.layers.emplace_back(Linear(trunk_hidden, trunk_hidden, rng));
    trunk.layers.emplace_back(Relu{});
    trunk.layers.emplace_back(Linear(trunk_hidden, 1, rng));
    trunk.layers.emplace_back(Sigmoid{});
    return Network(std::move(branches), std::move(trunk));
}

namespace {

struct LossEval {
    double loss = 0.0;
    Matrix d_output;
    bool fused = false;
};

LossEval evaluate_loss(const Network& net, const Trace& trace, const Matrix& targets, Loss loss, bool need_grad)
{
    const Matrix& y = trace.output();
    if (targets.rows() != y.rows() || targets.cols() != y.cols()) {
        throw DimensionError("targets are " + std::to_string(targets.rows()) + "x" + std::to_string(targets.cols()) +
                             ", network output is " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
    }
    const double n = static_cast<double>(y.size());
    LossEval out;
    if (loss == Loss::mse) {
        const Matrix diff = y - targets;
        out.loss = diff.squaredNorm() / n;
        if (need_grad) {
            out.d_output = (2.0 / n) * diff;
        }
        return out;
    }

    if ((targets.array() < 0.0).any() || (targets.array() > 1.0).any()) {
        throw DomainError("bce targets must lie in [0, 1]");
    }
    if (net.ends_with_sigmoid()) {
        // Loss from the pre-activation z: softplus(z) - t z.
        const Matrix& z = trace.trunk[trace.trunk.size() - 2];
        double total = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double zi = z(i);
            total += std::max(zi, 0.0) - targets(i) * zi + std::log1p(std::exp(-std::abs(zi)));
        }
        out.loss = total / n;
        out.fused = true;
        if (need_grad) {
            out.d_output = (y - targets) / n;
        }
        return out;
    }
    constexpr double kClamp = 1e-12;
    double total = 0.0;
    if (need_grad) {
        out.d_output.resize(y.rows(), y.cols());
    }
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double p = std::clamp(y(i), kClamp, 1.0 - kClamp);
        const double t = targets(i);
        total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        if (need_grad) {
            out.d_output(i) = (p - t) / (p * (1.0 - p)) / n;
        }
    }
    out.loss = total / n;
    return out;
}

} // namespace

double loss_value(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss)
{
    return evaluate_loss(net, net.forward_trace(inputs), targets, loss, false).loss;
}

LossResult loss_and_grad(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss)
{
    const Trace trace = net.forward_trace(inputs);
    LossEval e = evaluate_loss(net, trace, targets, loss, true);
    return {e.loss, net.backward(trace, e.d_output, e.fused)};
}

double global_norm(const Gradients& grads)
{
    double sq = 0.0;
    for (const auto& g : grads) {
        sq += g.squaredNorm();
    }
    return std::sqrt(sq);
}

double clip_global_norm(Gradients& grads, double max_norm)
{
    if (!(max_norm > 0.0)) {
        throw DomainError("clip_global_norm: max_norm must be positive");
    }
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& g : grads) {
            g *= scale;
        }
    }
    return norm;
}

AdamW::AdamW(AdamWConfig cfg, const std::vector<const Matrix*>& shapes) : cfg_(cfg)
{
    if (!(cfg_.learning_rate > 0.0)) {
        throw DomainError("learning rate must be positive");
    }
    if (cfg_.weight_decay < 0.0) {
        throw DomainError("weight decay must be non-negative");
    }
    for (const Matrix* p : shapes) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
}

void AdamW::step(const std::vector<Matrix*>& params, const Gradients& grads)
{
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("AdamW::step: expected " + std::to_string(m_.size()) + " tensors");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const double lr = cfg_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = grads[i];
        if (g.rows() != p.rows() || g.cols() != p.cols()) {
            throw DimensionError("AdamW::step: gradient " + std::to_string(i) + " shape mismatch");
        }
        if (cfg_.weight_decay != 0.0) {
            p *= 1.0 - lr * cfg_.weight_decay;
        }
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const double eps = cfg_.epsilon;
        p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
    }
}

void AdamW::restore(std::int64_t step, std::vector<Matrix> m, std::vector<Matrix> v)
{
    if (m.size() != m_.size() || v.size() != v_.size()) {
        throw DimensionError("AdamW::restore: tensor count mismatch");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].rows() != m_[i].rows() || m[i].cols() != m_[i].cols() || v[i].rows() != v_[i].rows() ||
            v[i].cols() != v_[i].cols()) {
            throw DimensionError("AdamW::restore: moment " + std::to_string(i) + " shape mismatch");
        }
    }
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

Gradients numeric_gradients(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss,
                            double epsilon)
{
    if (!(epsilon > 0.0 && epsilon <= 1e-2)) {
        throw DomainError("finite-difference epsilon must be in (0, 1e-2]");
    }
    Network work = net;
    Gradients out;
    for (Matrix* p : work.parameters()) {
        Matrix g(p->rows(), p->cols());
        for (Eigen::Index i = 0; i < p->size(); ++i) {
            const double saved = (*p)(i);
            (*p)(i) = saved + epsilon;
            const double up = loss_value(work, inputs, targets, loss);
            (*p)(i) = saved - epsilon;
            const double down = loss_value(work, inputs, targets, loss);
            (*p)(i) = saved;
            g(i) = (up - down) / (2.0 * epsilon);
        }
        out.push_back(std::move(g));
    }
    return out;
}

double max_relative_error(const Gradients& analytic, const Gradients& numeric, double floor)
{
    if (analytic.size() != numeric.size()) {
        throw DimensionError("max_relative_error: tensor count mismatch");
    }
    double worst = 0.0;
    for (std::size_t t = 0; t < analytic.size(); ++t) {
        if (analytic[t].size() != numeric[t].size()) {
            throw DimensionError("max_relative_error: tensor " + std::to_string(t) + " size mismatch");
        }
        for (Eigen::Index i = 0; i < analytic[t].size(); ++i) {
            const double a = analytic[t](i);
            const double n = numeric[t](i);
            const double denom = std::max({std::abs(a), std::abs(n), floor});
            worst = std::max(worst, std::abs(a - n) / denom);
        }
    }
    return worst;
}

double finite_difference_check(const Network& net, const Inputs& inputs, const Matrix& targets, Loss loss,
                               double epsilon)
{
    const auto numeric = numeric_gradients(net, inputs, targets, loss, epsilon);
    const auto analytic = loss_and_grad(net, inputs, targets, loss).grads;
    return max_relative_error(analytic, numeric);
}

const Matrix& Checkpoint::tensor(const std::string& name) const
{
    for (const auto& [n, m] : tensors) {
        if (n == name) {
            return m;
        }
    }
    throw ValidationError("checkpoint has no tensor '" + name + "'");
}

const std::string& Checkpoint::get(const std::string& key) const
{
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw ValidationError("checkpoint has no entry '" + key + "'");
    }
    return it->second;
}

namespace {
constexpr const char* kCheckpointMagic = "reliqa-checkpoint 1";
}

void Checkpoint::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write checkpoint " + path.string());
    }
    out << kCheckpointMagic << '\n';
    for (const auto& [k, v] : meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ValidationError("checkpoint metadata '" + k + "' contains a separator");
        }
        out << "meta " << k << ' ' << v << '\n';
    }
    for (const auto& [name, m] : tensors) {
        out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                out << (c ? " " : "") << hex(m(r, c));
            }
            out << '\n';
        }
    }
    out << "end\n";
}

Checkpoint Checkpoint::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open checkpoint " + path.string());
    }
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line != kCheckpointMagic) {
        throw ParseError(1, "not a reliqa checkpoint (or unsupported version)");
    }
    Checkpoint ckpt;
    bool ended = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line == "end") {
            ended = true;
            break;
        }
        if (line.rfind("meta ", 0) == 0) {
            const auto sp = line.find(' ', 5);
            if (sp == std::string::npos) {
                ckpt.meta[line.substr(5)] = "";
            } else {
                ckpt.meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
            }
        } else if (line.rfind("tensor ", 0) == 0) {
            std::istringstream hdr(line.substr(7));
            std::string name;
            Eigen::Index rows = 0;
            Eigen::Index cols = 0;
            if (!(hdr >> name >> rows >> cols) || rows < 0 || cols < 0) {
                throw ParseError(line_no, "bad tensor header");
            }
            Matrix m(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                if (!std::getline(in, line)) {
                    throw ParseError(line_no, "truncated tensor '" + name + "'");
                }
                ++line_no;
                std::istringstream row(line);
                for (Eigen::Index c = 0; c < cols; ++c) {
                    std::string tok;
                    if (!(row >> tok)) {
                        throw ParseError(line_no, "short tensor row");
                    }
                    try {
                        m(r, c) = parse_number(tok);
                    } catch (const ParseError&) {
                        throw ParseError(line_no, "invalid number '" + tok + "'");
                    }
                }
            }
            ckpt.tensors.emplace_back(std::move(name), std::move(m));
        } else {
            throw ParseError(line_no, "unexpected line in checkpoint");
        }
    }
    if (!ended) {
        throw ParseError(line_no, "checkpoint is truncated");
    }
    return ckpt;
}

void store_network(Checkpoint& ckpt, const Network& net, const std::string& prefix)
{
    ckpt.meta[prefix + ".architecture"] = net.describe();
    const auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ckpt.tensors.emplace_back(prefix + ".param." + std::to_string(i), *params[i]);
    }
}

Network restore_network(const Checkpoint& ckpt, const std::string& prefix)
{
    Network net = Network::from_description(ckpt.get(prefix + ".architecture"));
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& saved = ckpt.tensor(prefix + ".param." + std::to_string(i));
        if (saved.rows() != params[i]->rows() || saved.cols() != params[i]->cols()) {
            throw DimensionError("checkpoint tensor " + std::to_string(i) + " does not match the architecture");
        }
        *params[i] = saved;
    }
    return net;
}

void store_optimizer(Checkpoint& ckpt, const AdamW& opt, const std::string& prefix)
{
    const auto& c = opt.config();
    ckpt.meta[prefix + ".step"] = std::to_string(opt.step_count());
    ckpt.meta[prefix + ".lr"] = hex(c.learning_rate);
    ckpt.meta[prefix + ".beta1"] = hex(c.beta1);
    ckpt.meta[prefix + ".beta2"] = hex(c.beta2);
    ckpt.meta[prefix + ".epsilon"] = hex(c.epsilon);
    ckpt.meta[prefix + ".weight_decay"] = hex(c.weight_decay);
    for (std::size_t i = 0; i < opt.first_moment().size(); ++i) {
        ckpt.tensors.emplace_back(prefix + ".m." + std::to_string(i), opt.first_moment()[i]);
        ckpt.tensors.emplace_back(prefix + ".v." + std::to_string(i), opt.second_moment()[i]);
    }
}

AdamW restore_optimizer(const Checkpoint& ckpt, const std::string& prefix, const Network& net)
{
    AdamWConfig c;
    c.learning_rate = parse_number(ckpt.get(prefix + ".lr"));
    c.beta1 = parse_number(ckpt.get(prefix + ".beta1"));
    c.beta2 = parse_number(ckpt.get(prefix + ".beta2"));
    c.epsilon = parse_number(ckpt.get(prefix + ".epsilon"));
    c.weight_decay = parse_number(ckpt.get(prefix + ".weight_decay"));
    AdamW opt(c, net.parameters());
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        m.push_back(ckpt.tensor(prefix + ".m." + std::to_string(i)));
        v.push_back(ckpt.tensor(prefix + ".v." + std::to_string(i)));
    }
    opt.restore(std::stoll(ckpt.get(prefix + ".step")), std::move(m), std::move(v));
    return opt;
}

} // namespace reliqa::nn
