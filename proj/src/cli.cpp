#include "reliqa/cli.hpp"

#include "reliqa/accuracy.hpp"
#include "reliqa/errors.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#ifndef RELIQA_VERSION
#define RELIQA_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace reliqa::cli {

namespace {

/// Invariant violated inside the tool itself; maps to exit code 3.
class InternalError : public Error {
public:
    using Error::Error;
};

const std::set<std::string> kKnownKeys = {
    "model",
    "synth.n", "synth.vocab_size", "synth.lattice", "synth.distortion", "synth.q_dim", "synth.v_dim",
    "synth.v_tilde_dim", "synth.r_dim", "synth.signal_strength", "synth.noise_std", "synth.maxprob_noise",
    "synth.logit_spread", "synth.questions_per_image", "synth.unfair_rate",
    "split.ratios",
    "selector.channels", "selector.loss", "selector.encoder_hidden", "selector.trunk_hidden",
    "selector.lr", "selector.batch_size", "selector.max_epochs", "selector.patience", "selector.clip_norm",
    "selector.weight_decay",
    "calibration.lr", "calibration.batch_size", "calibration.max_epochs", "calibration.patience",
    "calibration.clip_norm", "calibration.weight_decay",
    "eval.risks", "eval.costs",
    "sweep.selections",
};

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s, char sep = ',')
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

double parse_number(const std::string& key, const std::string& text)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || !std::isfinite(v)) {
        throw ValidationError(key + ": not a number: '" + text + "'");
    }
    return v;
}

std::string pct(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
    std::string s = buf;
    return s == "-0.00" ? "0.00" : s;
}

std::string full(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string hex64(std::uint64_t x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

/// "1%" style label for a risk level.
std::string risk_label(double r)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g%%", 100.0 * r);
    return buf;
}

std::string cost_label(double c)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", c);
    return buf;
}

std::ofstream open_out(const fs::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    return out;
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_hash(const fs::path& path)
{
    return hex64(fnv1a(read_file(path)));
}

void require_file(const fs::path& path)
{
    if (!fs::is_regular_file(path)) {
        throw ValidationError("no such file: " + path.string());
    }
}

using Manifest = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const fs::path& path, const std::string& command, const Config& cfg, std::uint64_t seed,
                    const Manifest& extra)
{
    auto out = open_out(path);
    out << "version = " << version() << "\n";
    out << "command = " << command << "\n";
    out << "seed = " << seed << "\n";
    out << "config_hash = " << hex64(cfg.hash()) << "\n";
    for (const auto& [k, v] : extra) {
        out << k << " = " << v << "\n";
    }
    std::istringstream lines(cfg.canonical());
    std::string line;
    while (std::getline(lines, line)) {
        out << "config." << line << "\n";
    }
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

struct Globals {
    std::uint64_t seed = 0;
    std::string out = ".";
    std::string config;
};

Config load_config(const Globals& g)
{
    return g.config.empty() ? Config{} : Config::load(g.config);
}

fs::path out_dir(const Globals& g)
{
    fs::path dir(g.out);
    fs::create_directories(dir);
    return dir;
}

std::unordered_map<std::string, Latent> latents_for(const fs::path& records)
{
    const auto p = latent_path_for(records);
    if (!fs::exists(p)) {
        throw ValidationError("bayes selection needs the latent file " + p.string());
    }
    return load_latents(p);
}

std::vector<ScoredExample> score_bayes(const RecordSet& rs, const SynthConfig& cfg,
                                       const std::unordered_map<std::string, Latent>& latents)
{
    auto ex = score_maxprob(rs);
    for (std::size_t i = 0; i < ex.size(); ++i) {
        ex[i].confidence = bayes_confidence(cfg, rs.records[i], latents);
    }
    return ex;
}

/// Loads a checkpoint once and scores any number of record sets with it.
class Scorer {
public:
    Scorer(std::string selection, const std::optional<fs::path>& checkpoint, const SynthConfig& synth)
        : selection_(std::move(selection)), synth_(synth)
    {
        if (selection_ == "calibration" || selection_ == "selector") {
            if (!checkpoint) {
                throw ValidationError("selection '" + selection_ + "' requires --checkpoint");
            }
            require_file(*checkpoint);
            if (selection_ == "calibration") {
                scaler_ = load_scaler(*checkpoint);
            } else {
                selector_ = load_selector(*checkpoint);
            }
        } else if (selection_ != "maxprob" && selection_ != "precomputed" && selection_ != "bayes") {
            throw ValidationError("unknown selection function '" + selection_ + "'");
        }
    }

    std::vector<ScoredExample> operator()(const RecordSet& rs, const fs::path& source) const
    {
        if (selection_ == "maxprob") {
            return score_maxprob(rs);
        }
        if (selection_ == "precomputed") {
            return score_precomputed(rs);
        }
        if (selection_ == "calibration") {
            return score_calibrated(rs, *scaler_);
        }
        if (selection_ == "selector") {
            return score_selector(rs, *selector_);
        }
        return score_bayes(rs, synth_, latents_for(source));
    }

private:
    std::string selection_;
    SynthConfig synth_;
    std::optional<VectorScaler> scaler_;
    std::optional<SelectorModel> selector_;
};

double mean_accuracy(const RecordSet& rs)
{
    double sum = 0.0;
    for (const auto& r : rs.records) {
        sum += vqa_accuracy(r.predicted_answer, r.annotations);
    }
    return rs.empty() ? 0.0 : sum / static_cast<double>(rs.size());
}

void print_bundle(std::ostream& out, const ReportBundle& b)
{
    out << b.model << " / " << b.selection << " (n = " << b.n << ", thresholds on " << b.threshold_split << ")\n";
    for (const auto& [name, value] : b.metrics()) {
        out << "  " << name << " " << pct(value) << "\n";
    }
}

// --- subcommands ------------------------------------------------------------

int cmd_accuracy(const Globals& g, const std::string& records, const std::string& vocab, std::ostream& out)
{
    require_file(records);
    const Config cfg = load_config(g);
    const auto rs = load_records(records, vocab.empty() ? std::nullopt : std::optional<fs::path>(vocab));
    const auto dir = out_dir(g);

    auto csv = open_out(dir / "accuracy.csv");
    csv << "id,matches,accuracy,correct_top1\n";
    double sum = 0.0;
    for (const auto& r : rs.records) {
        const double acc = vqa_accuracy(r.predicted_answer, r.annotations);
        sum += acc;
        csv << r.id << "," << match_count(r.predicted_answer, r.annotations) << "," << full(acc) << ","
            << (correct_top1(r.predicted_answer, r.annotations) ? 1 : 0) << "\n";
    }
    const double mean = rs.empty() ? 0.0 : sum / static_cast<double>(rs.size());
    write_manifest(dir / "accuracy.manifest", "accuracy", cfg, g.seed,
                   {{"input", fs::path(records).filename().string()},
                    {"input_hash", file_hash(records)},
                    {"records", std::to_string(rs.size())},
                    {"mean_accuracy", full(mean)}});
    out << "records " << rs.size() << "\n";
    out << "mean accuracy " << pct(mean) << "\n";
    return 0;
}

int cmd_synth(const Globals& g, const std::string& name, std::ostream& out)
{
    const Config cfg = load_config(g);
    const SynthConfig sc = synth_config(cfg, g.seed);
    const auto data = generate(sc);
    const auto dir = out_dir(g);
    const auto path = dir / (name + ".jsonl");
    save_records(path, data.records);
    save_latents(latent_path_for(path), data.latents);
    write_manifest(dir / (name + ".manifest"), "synth", cfg, g.seed,
                   {{"records", std::to_string(data.records.size())},
                    {"records_hash", file_hash(path)},
                    {"lattice_mean", full(sc.lattice_mean())}});
    out << "wrote " << data.records.size() << " records to " << path.string() << "\n";
    out << "mean accuracy " << pct(mean_accuracy(data.records)) << " (lattice mean " << pct(sc.lattice_mean())
        << ")\n";
    return 0;
}

int cmd_split(const Globals& g, const std::string& records, std::ostream& out)
{
    require_file(records);
    const Config cfg = load_config(g);
    const auto rs = load_records(records);
    const auto splits = split_by_image(rs, split_spec(cfg, g.seed));
    const auto dir = out_dir(g);

    std::optional<std::unordered_map<std::string, Latent>> latents;
    if (fs::exists(latent_path_for(records))) {
        latents = load_latents(latent_path_for(records));
    }
    Manifest extra{{"input", fs::path(records).filename().string()}, {"input_hash", file_hash(records)}};
    for (const auto& [name, part] : {std::pair{"dev", &splits.dev}, {"val", &splits.val}, {"test", &splits.test}}) {
        const auto path = dir / (std::string(name) + ".jsonl");
        save_records(path, *part);
        if (latents) {
            std::vector<Latent> subset;
            for (const auto& r : part->records) {
                subset.push_back(latents->at(r.id));
            }
            save_latents(latent_path_for(path), subset);
        }
        extra.emplace_back(std::string(name) + "_records", std::to_string(part->size()));
        out << name << " " << part->size() << "\n";
    }
    write_manifest(dir / "split.manifest", "split", cfg, g.seed, extra);
    return 0;
}

int cmd_train(const Globals& g, const std::string& kind, const std::string& dev_path, const std::string& val_path,
              std::ostream& out)
{
    if (kind != "selector" && kind != "calibration") {
        throw ValidationError("train kind must be 'selector' or 'calibration', got '" + kind + "'");
    }
    require_file(dev_path);
    require_file(val_path);
    const Config cfg = load_config(g);
    const TrainConfig tc = train_config(cfg, kind, g.seed);
    const auto dev = load_records(dev_path);
    const auto val = load_records(val_path);
    const auto dir = out_dir(g);
    const auto ckpt = dir / (kind + ".ckpt");

    Manifest extra{{"kind", kind},
                   {"dev", fs::path(dev_path).filename().string()},
                   {"dev_hash", file_hash(dev_path)},
                   {"val", fs::path(val_path).filename().string()},
                   {"val_hash", file_hash(val_path)}};
    if (kind == "calibration") {
        const auto scaler = train_vector_scaling(dev, tc, &val);
        save_scaler(ckpt, scaler, g.seed);
    } else {
        const auto loss = parse_selector_loss(cfg.get_string("selector.loss", "regression"));
        TrainHistory history;
        const auto model =
            train_selector(dev, val, selector_channels(cfg), loss, tc, selector_architecture(cfg), &history);
        save_selector(ckpt, model);
        auto csv = open_out(dir / "selector_history.csv");
        csv << "epoch,train_loss,val_loss\n";
        for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
            csv << e + 1 << "," << full(history.train_loss[e]) << ","
                << (e < history.val_loss.size() ? full(history.val_loss[e]) : "") << "\n";
        }
        extra.emplace_back("epochs", std::to_string(history.train_loss.size()));
        extra.emplace_back("best_epoch", std::to_string(history.best_epoch));
        out << "trained " << history.train_loss.size() << " epochs, best " << history.best_epoch << "\n";
    }
    extra.emplace_back("checkpoint_hash", file_hash(ckpt));
    write_manifest(dir / (kind + ".manifest"), "train", cfg, g.seed, extra);
    out << "wrote " << ckpt.string() << "\n";
    return 0;
}

std::vector<double> percent_list(const std::vector<double>& values)
{
    std::vector<double> out;
    for (double v : values) {
        out.push_back(v / 100.0);
    }
    return out;
}

int cmd_eval(const Globals& g, const std::string& records, const std::string& selection,
             const std::string& checkpoint, const std::string& val_path, std::vector<double> risks_pct,
             std::vector<double> costs, std::string model, std::ostream& out)
{
    require_file(records);
    const Config cfg = load_config(g);
    if (risks_pct.empty()) {
        risks_pct = cfg.get_doubles("eval.risks", {1, 5, 10, 20});
    }
    if (costs.empty()) {
        costs = cfg.get_doubles("eval.costs", {1, 10, 100});
    }
    if (model.empty()) {
        model = cfg.get_string("model", "model");
    }
    const Scorer score(selection, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint),
                       synth_config(cfg, g.seed));
    const auto test = score(load_records(records), records);
    std::vector<ScoredExample> thresholds_on = test;
    std::string split = "test";
    if (!val_path.empty()) {
        require_file(val_path);
        thresholds_on = score(load_records(val_path), val_path);
        split = "val";
    }
    const auto risks = percent_list(risks_pct);
    const auto bundle = build_report(model, selection, test, thresholds_on, split, risks, costs);
    const auto dir = out_dir(g);
    write_report(dir, bundle);

    Manifest extra{{"records", fs::path(records).filename().string()},
                   {"records_hash", file_hash(records)},
                   {"selection", selection},
                   {"threshold_split", split}};
    if (!val_path.empty()) {
        extra.emplace_back("val", fs::path(val_path).filename().string());
        extra.emplace_back("val_hash", file_hash(val_path));
    }
    if (!checkpoint.empty()) {
        extra.emplace_back("checkpoint_hash", file_hash(checkpoint));
    }
    for (const auto& p : bundle.phi) {
        extra.emplace_back("gamma.phi_" + cost_label(p.cost), full(p.report.threshold.gamma));
    }
    write_manifest(dir / "eval.manifest", "eval", cfg, g.seed, extra);
    print_bundle(out, bundle);
    for (const auto& rt : bundle.risk_targets) {
        if (!rt.gamma) {
            out << "  risk target " << risk_label(rt.target_risk) << " unreachable\n";
        }
    }
    return 0;
}

int cmd_sweep(const Globals& g, const std::vector<std::uint64_t>& seeds, std::ostream& out)
{
    if (seeds.empty()) {
        throw ValidationError("sweep-seeds needs at least one seed");
    }
    const Config cfg = load_config(g);
    const auto selections = cfg.get_strings("sweep.selections", {"maxprob", "calibration", "selector"});
    const auto risks = percent_list(cfg.get_doubles("eval.risks", {1, 5, 10, 20}));
    const auto costs = cfg.get_doubles("eval.costs", {1, 10, 100});
    const std::string model = cfg.get_string("model", "synth");
    for (const auto& s : selections) {
        if (s != "maxprob" && s != "calibration" && s != "selector" && s != "bayes") {
            throw ValidationError("unknown selection function '" + s + "'");
        }
    }
    const auto dir = out_dir(g);

    std::vector<std::string> columns;
    std::map<std::string, std::vector<MetricMap>> per_selection;
    std::ostringstream runs, runs_full;
    for (std::uint64_t seed : seeds) {
        const SynthConfig sc = synth_config(cfg, seed);
        const auto data = generate(sc);
        const auto splits = split_by_image(data.records, split_spec(cfg, seed));
        std::unordered_map<std::string, Latent> latents;
        for (const auto& l : data.latents) {
            latents.emplace(l.id, l);
        }
        for (const auto& selection : selections) {
            std::vector<ScoredExample> val, test;
            if (selection == "maxprob") {
                val = score_maxprob(splits.val);
                test = score_maxprob(splits.test);
            } else if (selection == "bayes") {
                val = score_bayes(splits.val, sc, latents);
                test = score_bayes(splits.test, sc, latents);
            } else if (selection == "calibration") {
                const auto scaler = train_vector_scaling(splits.dev, train_config(cfg, "calibration", seed), &splits.val);
                val = score_calibrated(splits.val, scaler);
                test = score_calibrated(splits.test, scaler);
            } else {
                const auto m = train_selector(splits.dev, splits.val, selector_channels(cfg),
                                              parse_selector_loss(cfg.get_string("selector.loss", "regression")),
                                              train_config(cfg, "selector", seed), selector_architecture(cfg));
                val = score_selector(splits.val, m);
                test = score_selector(splits.test, m);
            }
            const auto bundle = build_report(model, selection, test, val, "val", risks, costs);
            const auto metrics = bundle.metrics();
            if (columns.empty()) {
                for (const auto& [name, v] : metrics) {
                    columns.push_back(name);
                }
                runs << "seed,selection";
                runs_full << "seed,selection";
                for (const auto& c : columns) {
                    runs << "," << c;
                    runs_full << "," << c;
                }
                runs << "\n";
                runs_full << "\n";
            }
            runs << seed << "," << selection;
            runs_full << seed << "," << selection;
            MetricMap row;
            for (const auto& [name, v] : metrics) {
                runs << "," << pct(v);
                runs_full << "," << full(v);
                row[name] = v;
            }
            runs << "\n";
            runs_full << "\n";
            per_selection[selection].push_back(std::move(row));
            out << "seed " << seed << " " << selection << " AUC " << pct(bundle.auc) << " C@"
                << (risks.empty() ? std::string("-") : risk_label(risks.front()) + " " + pct(bundle.coverage_at.front().coverage))
                << "\n";
        }
    }
    open_out(dir / "sweep_runs.csv") << runs.str();
    open_out(dir / "sweep_runs.full.csv") << runs_full.str();

    auto summary = open_out(dir / "sweep_summary.csv");
    auto summary_full = open_out(dir / "sweep_summary.full.csv");
    summary << "selection,metric,mean,std\n";
    summary_full << "selection,metric,mean,std\n";
    for (const auto& selection : selections) {
        const auto& reports = per_selection.at(selection);
        const auto [mean, sd] = aggregate_seeds(reports);
        for (const auto& c : columns) {
            summary << selection << "," << c << "," << pct(mean.at(c)) << "," << pct(sd.at(c)) << "\n";
            summary_full << selection << "," << c << "," << full(mean.at(c)) << "," << full(sd.at(c)) << "\n";
        }
    }
    std::string seed_list;
    for (auto s : seeds) {
        seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
    }
    write_manifest(dir / "sweep.manifest", "sweep-seeds", cfg, g.seed,
                   {{"seeds", seed_list}, {"threshold_split", "val"}});
    return 0;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) {
                cells.push_back(cell);
            }
            if (!line.empty() && line.back() == ',') {
                cells.emplace_back();
            }
            rows.push_back(std::move(cells));
        }
    }
    return rows;
}

int cmd_report(const Globals& g, const std::vector<std::string>& files, std::ostream& out)
{
    if (files.empty()) {
        throw ValidationError("report needs at least one CSV file");
    }
    std::ostringstream md;
    std::vector<std::string> header;
    for (const auto& f : files) {
        require_file(f);
        const auto rows = read_csv(f);
        if (rows.empty()) {
            throw ValidationError(f + ": empty table");
        }
        if (rows.front() != header) {
            header = rows.front();
            md << (md.tellp() > 0 ? "\n" : "") << "|";
            for (const auto& h : header) {
                md << " " << h << " |";
            }
            md << "\n|";
            for (std::size_t i = 0; i < header.size(); ++i) {
                md << (i < 2 ? " --- |" : " ---: |");
            }
            md << "\n";
        }
        for (std::size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() != header.size()) {
                throw ValidationError(f + ": row " + std::to_string(r + 1) + " has " +
                                      std::to_string(rows[r].size()) + " cells, expected " +
                                      std::to_string(header.size()));
            }
            md << "|";
            for (const auto& c : rows[r]) {
                md << " " << c << " |";
            }
            md << "\n";
        }
    }
    const auto dir = out_dir(g);
    open_out(dir / "report.md") << md.str();
    out << md.str();
    return 0;
}

} // namespace

const char* version()
{
    return RELIQA_VERSION;
}

std::uint64_t fnv1a(std::string_view bytes)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// --- Config -----------------------------------------------------------------

Config Config::parse(std::string_view text)
{
    Config cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(line_no, "expected 'key = value'");
        }
        const auto key = trim(std::string_view(line).substr(0, eq));
        const auto value = trim(std::string_view(line).substr(eq + 1));
        if (!kKnownKeys.count(key)) {
            throw ParseError(line_no, "unknown key '" + key + "'");
        }
        if (cfg.has(key)) {
            throw ParseError(line_no, "duplicate key '" + key + "'");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

Config Config::load(const fs::path& path)
{
    return parse(read_file(path));
}

void Config::set(const std::string& key, std::string value)
{
    if (!kKnownKeys.count(key)) {
        throw ValidationError("unknown config key '" + key + "'");
    }
    values_[key] = std::move(value);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const
{
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const
{
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_number(key, it->second);
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const
{
    auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    const double v = parse_number(key, it->second);
    if (v < 0.0 || v != std::floor(v)) {
        throw ValidationError(key + ": expected a non-negative integer, got '" + it->second + "'");
    }
    return static_cast<std::size_t>(v);
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const
{
    auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    std::vector<double> out;
    for (const auto& item : split_list(it->second)) {
        out.push_back(parse_number(key, item));
    }
    return out;
}

std::vector<std::string> Config::get_strings(const std::string& key, const std::vector<std::string>& fallback) const
{
    auto it = values_.find(key);
    return it == values_.end() ? fallback : split_list(it->second);
}

std::string Config::canonical() const
{
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k + " = " + v + "\n";
    }
    return out;
}

SynthConfig synth_config(const Config& cfg, std::uint64_t seed)
{
    SynthConfig sc;
    sc.seed = seed;
    sc.n = cfg.get_size("synth.n", sc.n);
    sc.vocab_size = cfg.get_size("synth.vocab_size", sc.vocab_size);
    if (cfg.has("synth.lattice")) {
        sc.lattice.clear();
        for (const auto& item : cfg.get_strings("synth.lattice", {})) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) {
                throw ValidationError("synth.lattice: expected level:probability, got '" + item + "'");
            }
            sc.lattice[parse_number("synth.lattice", trim(item.substr(0, colon)))] =
                parse_number("synth.lattice", trim(item.substr(colon + 1)));
        }
    }
    sc.distortion = cfg.get_double("synth.distortion", sc.distortion);
    sc.q_dim = cfg.get_size("synth.q_dim", sc.q_dim);
    sc.v_dim = cfg.get_size("synth.v_dim", sc.v_dim);
    sc.v_tilde_dim = cfg.get_size("synth.v_tilde_dim", sc.v_tilde_dim);
    sc.r_dim = cfg.get_size("synth.r_dim", sc.r_dim);
    sc.signal_strength = cfg.get_double("synth.signal_strength", sc.signal_strength);
    sc.noise_std = cfg.get_double("synth.noise_std", sc.noise_std);
    sc.maxprob_noise = cfg.get_double("synth.maxprob_noise", sc.maxprob_noise);
    sc.logit_spread = cfg.get_double("synth.logit_spread", sc.logit_spread);
    sc.questions_per_image = cfg.get_size("synth.questions_per_image", sc.questions_per_image);
    sc.unfair_rate = cfg.get_double("synth.unfair_rate", sc.unfair_rate);
    sc.validate();
    return sc;
}

SplitSpec split_spec(const Config& cfg, std::uint64_t seed)
{
    SplitSpec spec;
    spec.seed = seed;
    if (cfg.has("split.ratios")) {
        const auto r = cfg.get_doubles("split.ratios", {});
        if (r.size() != 3) {
            throw ValidationError("split.ratios: expected three values (dev, val, test)");
        }
        spec.ratios = {r[0], r[1], r[2]};
    }
    spec.validate();
    return spec;
}

TrainConfig train_config(const Config& cfg, const std::string& section, std::uint64_t seed)
{
    TrainConfig tc = section == "calibration" ? calibration_train_config() : TrainConfig{};
    tc.seed = seed;
    tc.learning_rate = cfg.get_double(section + ".lr", tc.learning_rate);
    tc.batch_size = cfg.get_size(section + ".batch_size", tc.batch_size);
    tc.max_epochs = cfg.get_size(section + ".max_epochs", tc.max_epochs);
    tc.patience = cfg.get_size(section + ".patience", tc.patience);
    tc.clip_norm = cfg.get_double(section + ".clip_norm", tc.clip_norm);
    tc.weight_decay = cfg.get_double(section + ".weight_decay", tc.weight_decay);
    tc.validate();
    return tc;
}

std::vector<Channel> selector_channels(const Config& cfg)
{
    std::vector<Channel> out;
    for (const auto& name : cfg.get_strings("selector.channels", {"logits", "q", "v", "v_tilde", "r"})) {
        out.push_back(parse_channel(name));
    }
    if (out.empty()) {
        throw ValidationError("selector.channels is empty");
    }
    return out;
}

SelectorArchitecture selector_architecture(const Config& cfg)
{
    SelectorArchitecture arch;
    arch.encoder_hidden = cfg.get_size("selector.encoder_hidden", arch.encoder_hidden);
    arch.trunk_hidden = cfg.get_size("selector.trunk_hidden", arch.trunk_hidden);
    if (arch.encoder_hidden == 0 || arch.trunk_hidden == 0) {
        throw ValidationError("selector hidden sizes must be positive");
    }
    return arch;
}

// --- reports ----------------------------------------------------------------

std::vector<std::pair<std::string, double>> ReportBundle::metrics() const
{
    std::vector<std::pair<std::string, double>> out;
    out.emplace_back("Acc", accuracy);
    for (const auto& c : coverage_at) {
        out.emplace_back("C@" + risk_label(c.target_risk), c.coverage);
    }
    out.emplace_back("AUC", auc);
    out.emplace_back("ECE", ece);
    for (const auto& p : phi) {
        out.emplace_back("Phi_" + cost_label(p.cost), p.report.phi);
        out.emplace_back("Phi_" + cost_label(p.cost) + "_coverage", p.report.coverage);
    }
    return out;
}

ReportBundle build_report(const std::string& model, const std::string& selection,
                          std::span<const ScoredExample> test, std::span<const ScoredExample> threshold_set,
                          const std::string& threshold_split, std::span<const double> risks,
                          std::span<const double> costs)
{
    if (test.empty() || threshold_set.empty()) {
        throw ValidationError("cannot evaluate on an empty record set");
    }
    ReportBundle b;
    b.model = model;
    b.selection = selection;
    b.threshold_split = threshold_split;
    b.n = test.size();
    for (const auto& e : test) {
        b.accuracy += e.accuracy;
    }
    b.accuracy /= static_cast<double>(test.size());

    b.curve = rc_curve(test);
    b.best_curve = best_possible_curve(test);
    b.auc = auc(b.curve);
    b.ece = ece(test);
    for (double r : risks) {
        const auto c = max_coverage_at_risk(b.curve, r);
        b.coverage_at.push_back({r, c.value_or(0.0), c.has_value()});
    }
    for (double c : costs) {
        const Cost cost(c);
        const auto gamma = choose_threshold_phi(threshold_set, cost);
        const auto report = evaluate_at_threshold(test, gamma, cost);
        if (report.phi > b.accuracy + 1e-12) {
            throw InternalError("phi_" + cost_label(c) + " = " + full(report.phi) + " exceeds accuracy " +
                                full(b.accuracy));
        }
        b.phi.push_back({c, report});
    }
    for (double r : risks) {
        RiskTargetEntry rt;
        rt.target_risk = r;
        try {
            rt.gamma = choose_threshold_risk(threshold_set, r).gamma;
        } catch (const UnreachableRiskError&) {
            b.risk_targets.push_back(rt);
            continue;
        }
        const auto decisions = decide(test, *rt.gamma);
        rt.test_coverage = coverage(decisions);
        if (rt.test_coverage > 0.0) {
            rt.test_risk = risk(test, decisions);
        }
        b.risk_targets.push_back(rt);
    }
    return b;
}

void write_report(const fs::path& dir, const ReportBundle& b)
{
    fs::create_directories(dir);
    auto head = [&](std::ostream& os) {
        os << "model,selection,n,Acc";
        for (const auto& c : b.coverage_at) {
            os << ",C@" << risk_label(c.target_risk);
        }
        os << ",AUC,ECE";
        for (const auto& p : b.phi) {
            const auto l = "Phi_" + cost_label(p.cost);
            os << "," << l << "," << l << "_risk," << l << "_coverage," << l << "_gamma";
        }
        os << ",threshold_split\n";
    };
    auto row = [&](std::ostream& os, auto num) {
        os << b.model << "," << b.selection << "," << b.n << "," << num(b.accuracy);
        for (const auto& c : b.coverage_at) {
            os << "," << num(c.coverage);
        }
        os << "," << num(b.auc) << "," << num(b.ece);
        for (const auto& p : b.phi) {
            os << "," << num(p.report.phi) << "," << (p.report.risk ? num(*p.report.risk) : "undefined") << ","
               << num(p.report.coverage) << "," << full(p.report.threshold.gamma);
        }
        os << "," << b.threshold_split << "\n";
    };
    {
        auto os = open_out(dir / "metrics.csv");
        head(os);
        row(os, pct);
    }
    {
        auto os = open_out(dir / "metrics.full.csv");
        head(os);
        row(os, full);
    }
    {
        auto os = open_out(dir / "curve.csv");
        os << "curve,coverage,risk,threshold\n";
        for (const auto& [name, curve] : {std::pair{"selection", &b.curve}, {"best_possible", &b.best_curve}}) {
            for (const auto& p : curve->points) {
                os << name << "," << full(p.coverage) << "," << full(p.risk) << "," << full(p.threshold) << "\n";
            }
        }
    }
    {
        auto os = open_out(dir / "risk_targets.csv");
        os << "target_risk,gamma,test_risk,test_coverage,status\n";
        for (const auto& rt : b.risk_targets) {
            os << pct(rt.target_risk) << ",";
            if (!rt.gamma) {
                os << ",,,unreachable\n";
                continue;
            }
            os << full(*rt.gamma) << "," << (rt.test_risk ? pct(*rt.test_risk) : "undefined") << ","
               << pct(rt.test_coverage) << ",ok\n";
        }
    }
    open_out(dir / "rc_curve.svg") << render_svg(b.curve, b.best_curve, b.model + " / " + b.selection);
}

std::string render_svg(const RCCurve& curve, const RCCurve& best, const std::string& title)
{
    constexpr double W = 480, H = 360, left = 60, right = 20, top = 36, bottom = 50;
    constexpr double pw = W - left - right, ph = H - top - bottom;
    double max_risk = 0.0;
    for (const auto* c : {&curve, &best}) {
        for (const auto& p : c->points) {
            max_risk = std::max(max_risk, p.risk);
        }
    }
    const int y_ticks = std::max(1, static_cast<int>(std::ceil(max_risk / 0.05 - 1e-9)));
    const double y_max = 0.05 * y_ticks;
    auto X = [&](double c) { return left + c * pw; };
    auto Y = [&](double r) { return top + ph * (1.0 - r / y_max); };

    std::string s;
    char buf[256];
    auto emit = [&](const char* fmt, auto... args) {
        std::snprintf(buf, sizeof buf, fmt, args...);
        s += buf;
    };
    emit("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", W, H,
         W, H);
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"240\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         xml_escape(title) + "</text>\n";
    emit("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"none\" stroke=\"black\"/>\n", left, top, pw,
         ph);
    s += "<g font-family=\"sans-serif\" font-size=\"10\" stroke=\"black\">\n";
    for (int i = 0; i <= 20; ++i) {
        const double x = X(0.05 * i);
        emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>\n", x, top + ph, x, top + ph + (i % 2 ? 3.0 : 6.0));
        if (i % 2 == 0) {
            emit("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" stroke=\"none\">%d</text>\n", x, top + ph + 18, 5 * i);
        }
    }
    for (int j = 0; j <= y_ticks; ++j) {
        const double y = Y(0.05 * j);
        emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>\n", left - 6, y, left, y);
        emit("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\" stroke=\"none\">%d</text>\n", left - 9, y + 3.5, 5 * j);
    }
    s += "</g>\n";
    emit("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">Coverage "
         "(%%)</text>\n",
         left + pw / 2, H - 12);
    emit("<text transform=\"translate(16 %.2f) rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"11\">Risk (%%)</text>\n",
         top + ph / 2);
    auto polyline = [&](const RCCurve& c, const char* style) {
        if (c.points.empty()) {
            return;
        }
        s += "<polyline fill=\"none\" ";
        s += style;
        s += " points=\"";
        emit("%.2f,%.2f", X(0.0), Y(c.points.front().risk));
        for (const auto& p : c.points) {
            emit(" %.2f,%.2f", X(p.coverage), Y(p.risk));
        }
        s += "\"/>\n";
    };
    polyline(best, "stroke=\"gray\" stroke-dasharray=\"4 3\"");
    polyline(curve, "stroke=\"steelblue\" stroke-width=\"1.5\"");
    emit("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"10\" fill=\"steelblue\">selection</text>\n",
         left + 8, top + 14);
    emit("<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"10\" fill=\"gray\">best possible</text>\n",
         left + 8, top + 28);
    s += "</svg>\n";
    return s;
}

// --- entry point --------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Selective prediction toolkit for multi-reference question answering", "reliqa"};
    app.set_version_flag("--version", std::string(version()));
    app.require_subcommand(1);

    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--config", g.config, "Key-value config file");

    std::string records, vocab, name = "synth", kind, dev, val, selection = "maxprob", checkpoint, model;
    std::vector<double> risks, costs;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> files;

    auto* acc = app.add_subcommand("accuracy", "Per-record VQA accuracy");
    acc->add_option("records", records, "Records file")->required();
    acc->add_option("--vocab", vocab, "Vocabulary sidecar");

    auto* syn = app.add_subcommand("synth", "Generate a synthetic benchmark");
    syn->add_option("--name", name, "Output file stem")->capture_default_str();

    auto* spl = app.add_subcommand("split", "Split records into dev/val/test by image");
    spl->add_option("records", records, "Records file")->required();

    auto* trn = app.add_subcommand("train", "Train a calibration scaler or a selector");
    trn->add_option("kind", kind, "calibration | selector")->required();
    trn->add_option("--dev", dev, "Training records")->required();
    trn->add_option("--val", val, "Validation records")->required();

    auto* evl = app.add_subcommand("eval", "Evaluate a selection function");
    evl->add_option("records", records, "Test records")->required();
    evl->add_option("--selection", selection, "maxprob | calibration | selector | precomputed | bayes")
        ->capture_default_str();
    evl->add_option("--checkpoint", checkpoint, "Checkpoint for calibration or selector");
    evl->add_option("--val", val, "Records on which thresholds are chosen");
    evl->add_option("--risks", risks, "Target risks in percent")->delimiter(',');
    evl->add_option("--costs", costs, "Costs for effective reliability")->delimiter(',');
    evl->add_option("--model", model, "Model name for the report");

    auto* swp = app.add_subcommand("sweep-seeds", "Synthesize, train and evaluate for several seeds");
    swp->add_option("--seeds", seeds, "Seeds")->required()->delimiter(',');

    auto* rep = app.add_subcommand("report", "Render CSV tables as markdown");
    rep->add_option("files", files, "CSV files")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (acc->parsed()) {
            return cmd_accuracy(g, records, vocab, out);
        }
        if (syn->parsed()) {
            return cmd_synth(g, name, out);
        }
        if (spl->parsed()) {
            return cmd_split(g, records, out);
        }
        if (trn->parsed()) {
            return cmd_train(g, kind, dev, val, out);
        }
        if (evl->parsed()) {
            return cmd_eval(g, records, selection, checkpoint, val, risks, costs, model, out);
        }
        if (swp->parsed()) {
            return cmd_sweep(g, seeds, out);
        }
        if (rep->parsed()) {
            return cmd_report(g, files, out);
        }
    } catch (const InternalError& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    }
    err << "no subcommand\n";
    return 2;
}

} // namespace reliqa::cli
