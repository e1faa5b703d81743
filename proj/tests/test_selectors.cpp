#include "doctest.h"
#include "helpers.hpp"

#include "reliqa/accuracy.hpp"
#include "reliqa/errors.hpp"
#include "reliqa/selectors.hpp"
#include "reliqa/synth.hpp"

#include <cmath>
#include <filesystem>

using namespace reliqa;

namespace {

Record with_logits(const std::string& id, std::vector<double> logits)
{
    Record r = testing::make_record(id, "img", "a", 4);
    r.features.logits = std::move(logits);
    return r;
}

SynthData small_synth(std::uint64_t seed, std::size_t n = 600)
{
    SynthConfig cfg;
    cfg.n = n;
    cfg.vocab_size = 8;
    cfg.q_dim = cfg.v_dim = cfg.v_tilde_dim = cfg.r_dim = 4;
    cfg.seed = seed;
    return generate(cfg);
}

TrainConfig quick(std::size_t epochs)
{
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.batch_size = 64;
    tc.max_epochs = epochs;
    tc.seed = 1;
    return tc;
}

const SelectorArchitecture kTiny{8, 16};

} // namespace

TEST_CASE("softmax and maxprob")
{
    const auto half = softmax(std::vector<double>{0, 0});
    CHECK(half[0] == 0.5);
    CHECK(half[1] == 0.5);
    const double e2 = std::exp(2.0), e1 = std::exp(1.0);
    CHECK(softmax(std::vector<double>{2, 1, 0})[0] == doctest::Approx(e2 / (e2 + e1 + 1)));
    CHECK(softmax(std::vector<double>{2, 1, 0})[0] == doctest::Approx(0.66524).epsilon(1e-5));
    const auto big = softmax(std::vector<double>{1000, 0});
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] >= 0.0);
    CHECK_THROWS_AS(softmax(std::vector<double>{}), DomainError);

    CHECK(maxprob_confidence(with_logits("a", {2, 1, 0})) == doctest::Approx(0.66524).epsilon(1e-5));
    CHECK(maxprob_confidence(with_logits("b", {10, 0, 0})) == doctest::Approx(0.99991).epsilon(1e-5));
    CHECK(maxprob_confidence(with_logits("c", {3, 3, 3, 3})) == doctest::Approx(0.25));
    Record pre = testing::make_record("d", "img", "a", 4);
    pre.confidence = 0.4;
    CHECK(maxprob_confidence(pre) == 0.4);
    CHECK_THROWS_AS(maxprob_confidence(testing::make_record("e", "img", "a", 4)), ValidationError);
}

TEST_CASE("calibrated confidence")
{
    const Record r = with_logits("x", {5, 0});
    const auto id = calibrated_confidence(VectorScaler::identity(2), r);
    CHECK(id.confidence == maxprob_confidence(r));
    CHECK(id.index == 0);

    VectorScaler flip = VectorScaler::identity(2);
    flip.bias(1) = 10;
    CHECK(calibrated_confidence(flip, r).index == 1);

    VectorScaler sharp = VectorScaler::identity(2);
    sharp.weight *= 2;
    const auto s = calibrated_confidence(sharp, r);
    CHECK(s.index == 0);
    CHECK(s.confidence > id.confidence);

    CHECK_THROWS_AS(calibrated_confidence(VectorScaler::identity(3), r), DimensionError);
}

TEST_CASE("calibrated scoring re-scores a changed argmax")
{
    RecordSet rs;
    rs.vocabulary = std::vector<AnswerText>{AnswerText("a"), AnswerText("b")};
    Record r = with_logits("x", {5, 0});
    r.annotations = testing::refs_with("b", 10);
    r.predicted_answer = AnswerText("a");
    rs.records.push_back(r);
    CHECK(score_calibrated(rs, VectorScaler::identity(2))[0].accuracy == 0.0);
    VectorScaler flip = VectorScaler::identity(2);
    flip.bias(1) = 10;
    CHECK(score_calibrated(rs, flip)[0].accuracy == 1.0);
}

TEST_CASE("vector scaling training")
{
    const auto data = small_synth(3);
    SUBCASE("zero epochs is the identity")
    {
        auto tc = calibration_train_config();
        tc.max_epochs = 0;
        const auto s = train_vector_scaling(data.records, tc);
        CHECK(s.weight == nn::Vector::Ones(8));
        CHECK(s.bias == nn::Vector::Zero(8));
        const auto a = score_calibrated(data.records, s);
        const auto b = score_maxprob(data.records);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(std::abs(a[i].confidence - b[i].confidence) <= 1e-12);
        }
    }
    SUBCASE("single-class vocabulary learns a positive bias")
    {
        RecordSet rs;
        rs.vocabulary = std::vector<AnswerText>{AnswerText("a")};
        for (int i = 0; i < 32; ++i) {
            rs.records.push_back(with_logits("r" + std::to_string(i), {0.0}));
        }
        auto tc = calibration_train_config();
        tc.max_epochs = 20;
        const auto s = train_vector_scaling(rs, tc);
        CHECK(s.bias(0) > 0.0);
    }
    SUBCASE("missing logits")
    {
        RecordSet rs;
        rs.vocabulary = std::vector<AnswerText>{AnswerText("a")};
        rs.records.push_back(testing::make_record("q", "i", "a", 3));
        CHECK_THROWS_AS(train_vector_scaling(rs, calibration_train_config()), ValidationError);
    }
}

TEST_CASE("overconfident logits become better calibrated")
{
    SynthConfig cfg;
    cfg.n = 6000;
    cfg.lattice = {{0.0, 0.5}, {1.0, 0.5}};
    cfg.distortion = 3.0;
    cfg.seed = 21;
    const auto data = generate(cfg);
    const auto s = split_by_image(data.records, SplitSpec{{0.4, 0.1, 0.5}, 21});
    const auto scaler = train_vector_scaling(s.dev, calibration_train_config(), &s.val);
    CHECK(ece(score_calibrated(s.test, scaler)) < ece(score_maxprob(s.test)));
}

TEST_CASE("selector learns an identity feature")
{
    RecordSet dev, val;
    Rng rng(5);
    for (int i = 0; i < 800; ++i) {
        const int k = static_cast<int>(rng.below(11));
        Record r = testing::make_record("q" + std::to_string(i), "img", "a", k);
        r.features.r = std::vector<double>{closed_form_accuracy(k)};
        (i % 4 ? dev : val).records.push_back(r);
    }
    TrainHistory h;
    auto tc = quick(200);
    tc.patience = 20;
    train_selector(dev, val, {Channel::r}, SelectorLoss::regression, tc, kTiny, &h);
    CHECK(*std::min_element(h.val_loss.begin(), h.val_loss.end()) < 1e-3);
}

TEST_CASE("selector basics")
{
    const auto data = small_synth(4);
    const auto s = split_by_image(data.records, SplitSpec{{0.6, 0.2, 0.2}, 4});
    const std::vector<Channel> all(kAllChannels.begin(), kAllChannels.end());

    SUBCASE("untrained outputs are in (0, 1) and deterministic")
    {
        const auto m = train_selector(s.dev, s.val, all, SelectorLoss::regression, quick(0), kTiny);
        for (const auto& r : s.test.records) {
            const double c = selector_confidence(m, r);
            CHECK(c > 0.0);
            CHECK(c < 1.0);
            CHECK(selector_confidence(m, r) == c);
        }
        const auto again = train_selector(s.dev, s.val, all, SelectorLoss::regression, quick(0), kTiny);
        CHECK(selector_confidence(again, s.test.records[0]) == selector_confidence(m, s.test.records[0]));
    }
    SUBCASE("training is deterministic per seed")
    {
        const auto a = train_selector(s.dev, s.val, all, SelectorLoss::classification, quick(3), kTiny);
        const auto b = train_selector(s.dev, s.val, all, SelectorLoss::classification, quick(3), kTiny);
        CHECK(a.confidences(s.test.records) == b.confidences(s.test.records));
    }
    SUBCASE("missing channel names the record")
    {
        RecordSet bad = s.dev;
        bad.records[0].features.q.reset();
        CHECK_THROWS_WITH_AS(train_selector(bad, s.val, all, SelectorLoss::regression, quick(1), kTiny),
                             doctest::Contains(bad.records[0].id.c_str()), ValidationError);
    }
    SUBCASE("checkpoint round trip")
    {
        const auto m = train_selector(s.dev, s.val, all, SelectorLoss::regression_bce, quick(2), kTiny);
        const auto path = std::filesystem::temp_directory_path() / "reliqa_selector.ckpt";
        save_selector(path, m);
        const auto back = load_selector(path);
        CHECK(back.loss == SelectorLoss::regression_bce);
        CHECK(back.channels == m.channels);
        CHECK(back.confidences(s.test.records) == m.confidences(s.test.records));
    }
    SUBCASE("scaler checkpoint round trip")
    {
        auto tc = calibration_train_config();
        tc.max_epochs = 2;
        const auto sc = train_vector_scaling(s.dev, tc);
        const auto path = std::filesystem::temp_directory_path() / "reliqa_scaler.ckpt";
        save_scaler(path, sc, 7);
        const auto back = load_scaler(path);
        CHECK(back.weight == sc.weight);
        CHECK(back.bias == sc.bias);
    }
}

TEST_CASE("pooled channel equals a pre-pooled one")
{
    const auto data = small_synth(6, 60);
    const auto m = train_selector(data.records, data.records, {Channel::v}, SelectorLoss::regression, quick(0), kTiny);
    Record r = data.records.records[0];
    r.features.v = std::vector<double>{0.5, -1.0, 2.0, 0.0};
    std::string line = serialize_record(r);
    const auto at = line.find("[0.5,-1.0,2.0,0.0]");
    REQUIRE(at != std::string::npos);
    line.replace(at, 18, "[[0.5,-3.0,1.0,0.0],[0.1,-1.0,2.0,-4.0]]");
    const Record pooled = parse_record(line, 1);
    CHECK(selector_confidence(m, pooled) == selector_confidence(m, r));
}

TEST_CASE("loss names")
{
    for (auto l : {SelectorLoss::regression, SelectorLoss::regression_bce, SelectorLoss::classification}) {
        CHECK(parse_selector_loss(selector_loss_name(l)) == l);
    }
    CHECK_THROWS_AS(parse_selector_loss("hinge"), ValidationError);
}
