#include "doctest.h"
#include "helpers.hpp"

#include "reliqa/cli.hpp"
#include "reliqa/errors.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace reliqa;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run run(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("reliqa_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text)
{
    std::ofstream(p, std::ios::binary) << text;
}

const char* kSmallConfig = R"(# small and fast
synth.n = 400
synth.vocab_size = 8
synth.q_dim = 4
synth.v_dim = 4
synth.v_tilde_dim = 4
synth.r_dim = 4
selector.encoder_hidden = 8
selector.trunk_hidden = 16
selector.max_epochs = 3
selector.lr = 0.001
calibration.max_epochs = 3
)";

} // namespace

TEST_CASE("fnv1a reference values")
{
    CHECK(cli::fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(cli::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("config parsing")
{
    const auto cfg = cli::Config::parse("# c\nsynth.n = 10  # trailing\n\nselector.channels = q, r\n");
    CHECK(cfg.get_size("synth.n", 0) == 10);
    CHECK(cfg.get_strings("selector.channels", {}) == std::vector<std::string>{"q", "r"});
    CHECK(cfg.get_double("synth.noise_std", 0.25) == 0.25);
    CHECK(cfg.canonical() == "selector.channels = q, r\nsynth.n = 10\n");
    CHECK(cfg.hash() == cli::Config::parse("selector.channels = q, r\nsynth.n=10").hash());
    CHECK_THROWS_WITH_AS(cli::Config::parse("a\n"), doctest::Contains("line 1"), ParseError);
    CHECK_THROWS_WITH_AS(cli::Config::parse("synth.n = 1\nbogus = 2\n"), doctest::Contains("line 2"), ParseError);
    CHECK_THROWS_AS(cli::Config::parse("synth.n = 1\nsynth.n = 2\n"), ParseError);
    CHECK_THROWS_AS(cli::Config::parse("synth.n = ten").get_size("synth.n", 0), ValidationError);
    CHECK_THROWS_AS(cli::train_config(cli::Config::parse("selector.lr = -1"), "selector", 0), ValidationError);
    const auto sc = cli::synth_config(cli::Config::parse("synth.lattice = 0:0.25, 1:0.75"), 3);
    CHECK(sc.lattice.size() == 2);
    CHECK(sc.lattice.at(1.0) == 0.75);
}

TEST_CASE("usage errors")
{
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"eval"}).code == 2);
}

TEST_CASE("accuracy command")
{
    const auto dir = scratch("accuracy");
    RecordSet rs;
    for (int i = 0; i < 3; ++i) {
        rs.records.push_back(testing::make_record("q" + std::to_string(i), "img", "yes", 10));
    }
    save_records(dir / "all.jsonl", rs);
    const auto ok = run({"--out", (dir / "out").string(), "accuracy", (dir / "all.jsonl").string()});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("mean accuracy 100.00") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "accuracy.csv"));

    write(dir / "bad.jsonl", slurp(dir / "all.jsonl") + "{broken\n");
    const auto bad = run({"--out", (dir / "out").string(), "accuracy", (dir / "bad.jsonl").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("line 4") != std::string::npos);

    CHECK(run({"accuracy", (dir / "missing.jsonl").string()}).code == 2);
}

TEST_CASE("synth, split, train and eval")
{
    const auto dir = scratch("pipeline");
    write(dir / "cfg.txt", kSmallConfig);
    const std::string cfg = (dir / "cfg.txt").string();
    const std::string data = (dir / "data").string();

    REQUIRE(run({"--seed", "4", "--config", cfg, "--out", data, "synth"}).code == 0);
    REQUIRE(fs::exists(dir / "data" / "synth.latent"));
    REQUIRE(run({"--seed", "4", "--config", cfg, "--out", data, "split", data + "/synth.jsonl"}).code == 0);
    for (const char* f : {"dev.jsonl", "val.jsonl", "test.jsonl", "dev.vocab", "test.latent"}) {
        CHECK(fs::exists(dir / "data" / f));
    }

    const std::string models = (dir / "models").string();
    REQUIRE(run({"--config", cfg, "--out", models, "train", "selector", "--dev", data + "/dev.jsonl", "--val",
                 data + "/val.jsonl"})
                .code == 0);
    CHECK(fs::exists(dir / "models" / "selector.ckpt"));
    CHECK(fs::exists(dir / "models" / "selector_history.csv"));

    SUBCASE("calibration with zero epochs is the identity")
    {
        write(dir / "zero.txt", "calibration.max_epochs = 0\n");
        REQUIRE(run({"--config", (dir / "zero.txt").string(), "--out", models, "train", "calibration", "--dev",
                     data + "/dev.jsonl", "--val", data + "/val.jsonl"})
                    .code == 0);
        const auto s = load_scaler(dir / "models" / "calibration.ckpt");
        CHECK(s.weight == nn::Vector::Ones(s.dim()));
        CHECK(s.bias == nn::Vector::Zero(s.dim()));
    }
    SUBCASE("negative learning rate")
    {
        write(dir / "neg.txt", "selector.lr = -0.1\n");
        CHECK(run({"--config", (dir / "neg.txt").string(), "--out", models, "train", "selector", "--dev",
                   data + "/dev.jsonl", "--val", data + "/val.jsonl"})
                  .code == 2);
    }
    SUBCASE("missing channel")
    {
        write(dir / "ch.txt", "selector.channels = q\n");
        RecordSet dev = load_records(data + "/dev.jsonl");
        for (auto& r : dev.records) {
            r.features.q.reset();
        }
        save_records(dir / "noq.jsonl", dev);
        CHECK(run({"--config", (dir / "ch.txt").string(), "--out", models, "train", "selector", "--dev",
                   (dir / "noq.jsonl").string(), "--val", data + "/val.jsonl"})
                  .code == 2);
    }
    SUBCASE("eval writes the report bundle")
    {
        const std::string out = (dir / "eval").string();
        const auto r = run({"--config", cfg, "--out", out, "eval", data + "/test.jsonl", "--selection", "selector",
                            "--checkpoint", models + "/selector.ckpt", "--val", data + "/val.jsonl", "--risks",
                            "0,5,20"});
        CHECK(r.code == 0);
        for (const char* f : {"metrics.csv", "metrics.full.csv", "curve.csv", "risk_targets.csv", "rc_curve.svg",
                              "eval.manifest"}) {
            CHECK(fs::exists(dir / "eval" / f));
        }
        const auto targets = slurp(dir / "eval" / "risk_targets.csv");
        CHECK(targets.rfind("target_risk,gamma,test_risk,test_coverage,status\n", 0) == 0);
        CHECK(std::count(targets.begin(), targets.end(), '\n') == 4);
        const auto metrics = slurp(dir / "eval" / "metrics.csv");
        CHECK(metrics.find("C@0%") != std::string::npos);
        CHECK(metrics.find(",val\n") != std::string::npos);
        CHECK(slurp(dir / "eval" / "eval.manifest").find("threshold_split = val") != std::string::npos);

        const auto rep = run({"--out", out, "report", out + "/metrics.csv"});
        CHECK(rep.code == 0);
        CHECK(rep.out.find("| model |") != std::string::npos);
    }
    SUBCASE("eval needs a checkpoint")
    {
        CHECK(run({"--out", (dir / "x").string(), "eval", data + "/test.jsonl", "--selection", "calibration"}).code ==
              2);
    }
    SUBCASE("bayes and maxprob selections")
    {
        CHECK(run({"--config", cfg, "--out", (dir / "b").string(), "eval", data + "/test.jsonl", "--selection",
                   "bayes"})
                  .code == 0);
        CHECK(run({"--out", (dir / "m").string(), "eval", data + "/test.jsonl"}).code == 0);
        CHECK(slurp(dir / "m" / "metrics.csv").find(",test\n") != std::string::npos);
    }
}

TEST_CASE("sweep-seeds")
{
    const auto dir = scratch("sweep");
    write(dir / "cfg.txt", kSmallConfig);
    const std::string cfg = (dir / "cfg.txt").string();

    SUBCASE("one seed has zero std")
    {
        REQUIRE(run({"--config", cfg, "--out", (dir / "one").string(), "sweep-seeds", "--seeds", "5"}).code == 0);
        std::istringstream in(slurp(dir / "one" / "sweep_summary.csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            CHECK(line.substr(line.rfind(',') + 1) == "0.00");
        }
    }
    SUBCASE("a repeated seed gives identical rows")
    {
        REQUIRE(run({"--config", cfg, "--out", (dir / "two").string(), "sweep-seeds", "--seeds", "5,5"}).code == 0);
        std::istringstream in(slurp(dir / "two" / "sweep_runs.full.csv"));
        std::vector<std::string> rows;
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            rows.push_back(line);
        }
        REQUIRE(rows.size() == 6);
        for (int i = 0; i < 3; ++i) {
            CHECK(rows[i] == rows[i + 3]);
        }
    }
}

TEST_CASE("report bundle")
{
    const std::vector<ScoredExample> e{testing::ex(0.9, 1, "a"), testing::ex(0.8, 1, "b"), testing::ex(0.7, 0, "c"),
                                       testing::ex(0.6, 1, "d")};
    const std::vector<double> risks{0.0, 0.1}, costs{1, 10};
    const auto b = cli::build_report("m", "maxprob", e, e, "val", risks, costs);
    CHECK(b.accuracy == 0.75);
    CHECK(b.coverage_at[0].coverage == 0.5);
    CHECK(b.coverage_at[1].coverage == 0.5);
    for (const auto& p : b.phi) {
        CHECK(p.report.phi <= b.accuracy);
    }
    REQUIRE(b.risk_targets.size() == 2);
    CHECK(b.risk_targets[0].gamma.has_value());   // the top two are both correct

    const std::vector<ScoredExample> worst_first{testing::ex(0.9, 0, "a"), testing::ex(0.8, 1, "b")};
    const auto w = cli::build_report("m", "maxprob", worst_first, worst_first, "test", risks, costs);
    CHECK_FALSE(w.risk_targets[0].gamma.has_value());
    CHECK_FALSE(w.coverage_at[0].reachable);
    CHECK(w.coverage_at[0].coverage == 0.0);
    const auto wdir = scratch("unreachable");
    cli::write_report(wdir, w);
    CHECK(slurp(wdir / "risk_targets.csv").find("0.00,,,,unreachable") != std::string::npos);

    const auto svg = cli::render_svg(b.curve, b.best_curve, "a & b");
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("a &amp; b") != std::string::npos);
    CHECK(svg.find(">95<") == std::string::npos);   // labels every 10%
    CHECK(svg.find(">90<") != std::string::npos);
}
