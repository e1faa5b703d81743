#include "doctest.h"

#include "reliqa/errors.hpp"
#include "reliqa/nn.hpp"

#include <cmath>
#include <filesystem>
#include <utility>

using namespace reliqa;
using namespace reliqa::nn;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0)
{
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m(i) = rng.uniform(lo, hi);
    }
    return m;
}

// Two encoders (one with a diagonal layer) feeding a trunk; optional sigmoid head.
Network selector_shaped(Rng& rng, bool sigmoid_head)
{
    std::vector<Branch> branches;
    branches.push_back({"a", 3, {{Linear(3, 4, rng), Relu{}}}});
    Linear diag = Linear::diagonal(2);
    diag.weight = random_matrix(rng, 2, 1);
    diag.bias = random_matrix(rng, 2, 1);
    branches.push_back({"b", 2, {{diag, Sigmoid{}}}});
    Sequential trunk{{Linear(6, 5, rng), Relu{}, Linear(5, 1, rng)}};
    if (sigmoid_head) {
        trunk.layers.emplace_back(Sigmoid{});
    }
    return Network(std::move(branches), std::move(trunk));
}

Inputs random_inputs(Rng& rng, Eigen::Index batch)
{
    return {{"a", random_matrix(rng, 3, batch, -2, 2)}, {"b", random_matrix(rng, 2, batch, -2, 2)}};
}

Network single_linear(double w, double b)
{
    Rng rng(0);
    Linear lin(1, 1, rng);
    lin.weight(0, 0) = w;
    lin.bias(0, 0) = b;
    return Network({{"x", 1, {{lin}}}}, Sequential{});
}

} // namespace

TEST_CASE("forward examples")
{
    const Network id({{"x", 2, {{Linear::diagonal(2)}}}}, Sequential{});
    Matrix x(2, 1);
    x << 1, 2;
    CHECK(id.forward({{"x", x}}) == x);

    const Network relu({{"x", 2, {{Relu{}}}}}, Sequential{});
    Matrix y(2, 1);
    y << -1, 2;
    CHECK(relu.forward({{"x", y}})(0, 0) == 0.0);
    CHECK(relu.forward({{"x", y}})(1, 0) == 2.0);

    const Network sig({{"x", 1, {{Sigmoid{}}}}}, Sequential{});
    CHECK(sig.forward({{"x", Matrix::Zero(1, 1)}})(0, 0) == 0.5);
}

TEST_CASE("dimension errors name the layer")
{
    Rng rng(1);
    CHECK_THROWS_WITH_AS(Network({{"x", 3, {{Linear(2, 4, rng)}}}}, Sequential{}), doctest::Contains("branch 'x'"),
                         DimensionError);
    const Network net({{"x", 2, {{Linear(2, 1, rng)}}}}, Sequential{});
    CHECK_THROWS_AS(net.forward({{"x", Matrix::Zero(3, 1)}}), DimensionError);
    CHECK_THROWS_AS(net.forward({{"y", Matrix::Zero(2, 1)}}), DimensionError);
    CHECK_THROWS_AS(Network().forward({}), DimensionError);
}

TEST_CASE("loss examples")
{
    const Network half({{"x", 1, {{Sigmoid{}}}}}, Sequential{});
    const Inputs zero{{"x", Matrix::Zero(1, 1)}};
    CHECK(loss_value(half, zero, Matrix::Constant(1, 1, 1.0), Loss::bce) == doctest::Approx(std::log(2.0)));
    CHECK(loss_value(half, zero, Matrix::Constant(1, 1, 0.5), Loss::mse) == 0.0);
    CHECK_THROWS_AS(loss_value(half, zero, Matrix::Constant(1, 1, 1.5), Loss::bce), DomainError);

    // L = (w x - t)^2 with w = 1, x = 2, t = 0: dL/dw = 2 (w x - t) x = 8.
    const Network lin = single_linear(1.0, 0.0);
    const auto lg = loss_and_grad(lin, {{"x", Matrix::Constant(1, 1, 2.0)}}, Matrix::Zero(1, 1), Loss::mse);
    CHECK(lg.loss == doctest::Approx(4.0));
    CHECK(lg.grads[0](0, 0) == doctest::Approx(8.0));
    CHECK(lg.grads[1](0, 0) == doctest::Approx(4.0));
}

TEST_CASE("finite differences agree with backprop")
{
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        for (bool head : {true, false}) {
            const Network net = selector_shaped(rng, head);
            const Inputs in = random_inputs(rng, 7);
            const Matrix soft = random_matrix(rng, 1, 7, 0, 1);
            CHECK(finite_difference_check(net, in, soft, Loss::mse) < 1e-4);
            if (head) {
                CHECK(finite_difference_check(net, in, soft, Loss::bce) < 1e-4);
            }
        }
    }
}

TEST_CASE("corrupted gradients are detected")
{
    Rng rng(3);
    const Network net = selector_shaped(rng, true);
    const Inputs in = random_inputs(rng, 5);
    const Matrix t = random_matrix(rng, 1, 5, 0, 1);
    auto analytic = loss_and_grad(net, in, t, Loss::bce).grads;
    const auto numeric = numeric_gradients(net, in, t, Loss::bce, 1e-5);
    CHECK(max_relative_error(analytic, numeric) < 1e-4);
    analytic[0](0, 0) = -analytic[0](0, 0) + 0.1;
    CHECK(max_relative_error(analytic, numeric) > 1e-2);
    CHECK_THROWS_AS(numeric_gradients(net, in, t, Loss::bce, 0.1), DomainError);
}

TEST_CASE("zero-loss point uses the absolute floor")
{
    const Network lin = single_linear(0.0, 0.0);
    CHECK(finite_difference_check(lin, {{"x", Matrix::Constant(1, 1, 2.0)}}, Matrix::Zero(1, 1), Loss::mse) == 0.0);
}

TEST_CASE("global norm clipping")
{
    Gradients g{Matrix::Constant(2, 2, 0.25)};   // norm 0.5
    CHECK(clip_global_norm(g, 0.25) == doctest::Approx(0.5));
    CHECK(g[0](0, 0) == doctest::Approx(0.125));

    Gradients small{Matrix::Constant(1, 1, 0.1)};
    clip_global_norm(small, 0.25);
    CHECK(small[0](0, 0) == 0.1);

    Matrix v(2, 1);
    v << 3, 4;
    Gradients one{v};
    clip_global_norm(one, 1.0);
    CHECK(one[0](0, 0) == doctest::Approx(0.6));
    CHECK(one[0](1, 0) == doctest::Approx(0.8));
}

TEST_CASE("AdamW single-parameter traces")
{
    Matrix p = Matrix::Constant(1, 1, 1.0);
    const std::vector<const Matrix*> shapes{&p};

    SUBCASE("zero gradient leaves parameters alone")
    {
        AdamW opt({}, shapes);
        opt.step({&p}, {Matrix::Zero(1, 1)});
        CHECK(p(0, 0) == 1.0);
    }
    SUBCASE("first step")
    {
        // m = 0.1 g, v = 0.001 g^2; bias-corrected m / sqrt(v) = sign(g).
        AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0}, shapes);
        opt.step({&p}, {Matrix::Constant(1, 1, 0.5)});
        const double mhat = 0.05 / 0.1;
        const double vhat = 0.00025 / 0.001;
        CHECK(p(0, 0) == doctest::Approx(1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-12));
        CHECK(opt.step_count() == 1);
        const double p1 = p(0, 0);
        opt.step({&p}, {Matrix::Constant(1, 1, -0.5)});
        // m = 0.9*0.05 - 0.05 = -0.005, v = 0.999*0.00025 + 0.00025.
        const double m2 = -0.005 / (1 - 0.81);
        const double v2 = (0.999 * 0.00025 + 0.001 * 0.25) / (1 - 0.998001);
        CHECK(p(0, 0) == doctest::Approx(p1 - 0.1 * m2 / (std::sqrt(v2) + 1e-8)).epsilon(1e-12));
    }
    SUBCASE("decoupled weight decay")
    {
        AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.1}, shapes);
        opt.step({&p}, {Matrix::Zero(1, 1)});
        CHECK(p(0, 0) == doctest::Approx(0.99).epsilon(1e-15));
    }
}

TEST_CASE("checkpoint round trip is exact")
{
    Rng rng(8);
    Network net = selector_shaped(rng, true);
    const auto params = std::as_const(net).parameters();
    AdamW opt({1e-3, 0.9, 0.999, 1e-8, 1e-4}, params);
    const Inputs in = random_inputs(rng, 4);
    const Matrix t = random_matrix(rng, 1, 4, 0, 1);
    for (int i = 0; i < 3; ++i) {
        opt.step(net.parameters(), loss_and_grad(net, in, t, Loss::bce).grads);
    }

    Checkpoint ckpt;
    ckpt.meta["kind"] = "test";
    store_network(ckpt, net, "net");
    store_optimizer(ckpt, opt, "opt");
    const auto path = std::filesystem::temp_directory_path() / "reliqa_nn_ckpt.txt";
    ckpt.save(path);
    const auto back = Checkpoint::load(path);
    CHECK(back.get("kind") == "test");

    const Network net2 = restore_network(back, "net");
    CHECK(net2.describe() == net.describe());
    const auto a = net.parameters();
    const auto b = net2.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(*a[i] == *b[i]);
    }
    CHECK(net2.forward(in) == net.forward(in));

    const AdamW opt2 = restore_optimizer(back, "opt", net2);
    CHECK(opt2.step_count() == 3);
    CHECK(opt2.config().weight_decay == 1e-4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(opt2.first_moment()[i] == opt.first_moment()[i]);
        CHECK(opt2.second_moment()[i] == opt.second_moment()[i]);
    }
}

TEST_CASE("architecture description round trip")
{
    Rng rng(2);
    const Network net = Network::selector({{"q", 4}, {"r", 3}}, 6, 8, rng);
    CHECK(net.ends_with_sigmoid());
    CHECK(net.output_dim() == 1);
    const Network rebuilt = Network::from_description(net.describe());
    CHECK(rebuilt.describe() == net.describe());
    CHECK(rebuilt.parameter_count() == net.parameter_count());
    CHECK(net.parameter_count() == (4 * 6 + 6) + (3 * 6 + 6) + (12 * 8 + 8) + (8 * 8 + 8) + (8 + 1));
}

TEST_CASE("linear init range")
{
    Rng rng(4);
    const Linear lin(16, 32, rng);
    const double bound = std::sqrt(1.0 / 16.0);
    CHECK(lin.weight.cwiseAbs().maxCoeff() <= bound);
    CHECK(lin.bias.cwiseAbs().maxCoeff() <= bound);
    CHECK(lin.weight.rows() == 32);
    CHECK(lin.weight.cols() == 16);
}
