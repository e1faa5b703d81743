#include "reliqa/records.hpp"

#include "reliqa/errors.hpp"
#include "reliqa/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace reliqa {

using nlohmann::json;

std::string normalize_answer(std::string_view raw)
{
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char ch : raw) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(uc)));
    }
    return out;
}

AnswerText::AnswerText(std::string raw_text) : raw(std::move(raw_text)), normalized(normalize_answer(raw)) {}

AnswerText::AnswerText(std::string raw_text, const AnswerPreprocessor& pre) : raw(std::move(raw_text))
{
    normalized = pre ? normalize_answer(pre(raw)) : normalize_answer(raw);
}

AnnotationSet::AnnotationSet(std::vector<AnswerText> answers)
{
    if (answers.size() != kAnnotationCount) {
        throw ValidationError("annotation count " + std::to_string(answers.size()) + " ≠ 10");
    }
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (answers[i].normalized.empty()) {
            throw ValidationError("annotation " + std::to_string(i) + " is empty");
        }
        answers_[i] = std::move(answers[i]);
    }
}

AnnotationSet AnnotationSet::from_strings(const std::vector<std::string>& raw)
{
    std::vector<AnswerText> answers;
    answers.reserve(raw.size());
    for (const auto& s : raw) {
        answers.emplace_back(s);
    }
    return AnnotationSet(std::move(answers));
}

std::string_view channel_name(Channel c)
{
    switch (c) {
    case Channel::logits:
        return "logits";
    case Channel::q:
        return "q";
    case Channel::v:
        return "v";
    case Channel::v_tilde:
        return "v_tilde";
    case Channel::r:
        return "r";
    }
    return "?";
}

Channel parse_channel(std::string_view name)
{
    for (Channel c : kAllChannels) {
        if (channel_name(c) == name) {
            return c;
        }
    }
    throw ValidationError("unknown feature channel '" + std::string(name) + "'");
}

const std::optional<std::vector<double>>& FeatureBundle::get(Channel c) const
{
    switch (c) {
    case Channel::logits:
        return logits;
    case Channel::q:
        return q;
    case Channel::v:
        return v;
    case Channel::v_tilde:
        return v_tilde;
    case Channel::r:
        return r;
    }
    return logits;
}

std::optional<std::vector<double>>& FeatureBundle::get(Channel c)
{
    return const_cast<std::optional<std::vector<double>>&>(std::as_const(*this).get(c));
}

bool FeatureBundle::empty() const
{
    return std::none_of(kAllChannels.begin(), kAllChannels.end(), [this](Channel c) { return get(c).has_value(); });
}

void RecordSet::validate() const
{
    std::unordered_set<std::string_view> ids;
    std::map<Channel, std::size_t> dims;
    for (const auto& rec : records) {
        if (!ids.insert(rec.id).second) {
            throw ValidationError("duplicate id '" + rec.id + "'");
        }
        for (Channel c : kAllChannels) {
            const auto& ch = rec.features.get(c);
            if (!ch) {
                continue;
            }
            auto [it, inserted] = dims.emplace(c, ch->size());
            if (!inserted && it->second != ch->size()) {
                throw ValidationError("record '" + rec.id + "': channel " + std::string(channel_name(c)) +
                                      " has dimension " + std::to_string(ch->size()) + ", expected " +
                                      std::to_string(it->second));
            }
        }
    }
    if (auto it = dims.find(Channel::logits); it != dims.end()) {
        if (!vocabulary) {
            throw ValidationError("records carry logits but no vocabulary was supplied");
        }
        if (vocabulary->size() != it->second) {
            throw ValidationError("vocabulary size " + std::to_string(vocabulary->size()) +
                                  " does not match logits dimension " + std::to_string(it->second));
        }
    }
}

namespace {

std::vector<double> parse_vector(const json& j, std::size_t line, std::string_view name)
{
    auto fail = [&](const std::string& why) {
        throw ParseError(line, "features." + std::string(name) + ": " + why);
    };
    if (!j.is_array() || j.empty()) {
        fail("expected a non-empty array");
    }
    // A set of vectors is max-pooled into one.
    if (j.front().is_array()) {
        std::vector<std::vector<double>> set;
        set.reserve(j.size());
        for (const auto& row : j) {
            set.push_back(parse_vector(row, line, name));
        }
        try {
            return pool_features(set);
        } catch (const DimensionError& e) {
            fail(e.what());
        }
    }
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& x : j) {
        if (!x.is_number()) {
            fail("non-numeric entry");
        }
        const double d = x.get<double>();
        if (!std::isfinite(d)) {
            fail("non-finite entry");
        }
        out.push_back(d);
    }
    return out;
}

std::string require_string(const json& obj, const char* key, std::size_t line)
{
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw ParseError(line, std::string("missing required key '") + key + "'");
    }
    if (!it->is_string()) {
        throw ParseError(line, std::string("key '") + key + "' must be a string");
    }
    return it->get<std::string>();
}

json vector_json(const std::vector<double>& v)
{
    json arr = json::array();
    for (double x : v) {
        arr.push_back(x);
    }
    return arr;
}

} // namespace

Record parse_record(std::string_view line, std::size_t line_number, const AnswerPreprocessor& pre)
{
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(line_number, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) {
        throw ParseError(line_number, "expected a JSON object");
    }

    Record rec;
    rec.id = require_string(obj, "id", line_number);
    if (rec.id.empty()) {
        throw ParseError(line_number, "empty id");
    }
    rec.image_id = require_string(obj, "image_id", line_number);
    rec.predicted_answer = AnswerText(require_string(obj, "predicted_answer", line_number), pre);

    auto ann = obj.find("annotations");
    if (ann == obj.end() || !ann->is_array()) {
        throw ParseError(line_number, "missing required array 'annotations'");
    }
    std::vector<AnswerText> answers;
    for (const auto& a : *ann) {
        if (!a.is_string()) {
            throw ParseError(line_number, "annotations must be strings");
        }
        answers.emplace_back(a.get<std::string>(), pre);
    }
    try {
        rec.annotations = AnnotationSet(std::move(answers));
    } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line_number) + ": " + e.what());
    }

    if (auto it = obj.find("confidence"); it != obj.end() && !it->is_null()) {
        if (!it->is_number() || !std::isfinite(it->get<double>())) {
            throw ParseError(line_number, "confidence must be a finite number");
        }
        rec.confidence = it->get<double>();
    }
    if (auto it = obj.find("features"); it != obj.end() && !it->is_null()) {
        if (!it->is_object()) {
            throw ParseError(line_number, "features must be an object");
        }
        for (const auto& [key, value] : it->items()) {
            Channel c;
            try {
                c = parse_channel(key);
            } catch (const ValidationError& e) {
                throw ParseError(line_number, e.what());
            }
            rec.features.get(c) = parse_vector(value, line_number, key);
        }
    }
    if (auto it = obj.find("difficulty"); it != obj.end() && !it->is_null()) {
        if (!it->is_number_integer() || it->get<int>() < 1 || it->get<int>() > 3) {
            throw ParseError(line_number, "difficulty must be 1, 2 or 3");
        }
        rec.difficulty = it->get<int>();
    }
    if (auto it = obj.find("noise_override"); it != obj.end() && !it->is_null()) {
        if (!it->is_string() || (*it != "unfair" && *it != "none")) {
            throw ParseError(line_number, "noise_override must be \"unfair\"");
        }
        rec.noise_override = *it == "unfair" ? NoiseOverride::unfair : NoiseOverride::none;
    }
    return rec;
}

std::string serialize_record(const Record& rec)
{
    // ordered_json keeps a stable key order for byte-identical output.
    nlohmann::ordered_json obj;
    obj["id"] = rec.id;
    obj["image_id"] = rec.image_id;
    obj["predicted_answer"] = rec.predicted_answer.normalized;
    auto& ann = obj["annotations"] = nlohmann::ordered_json::array();
    for (const auto& a : rec.annotations.answers()) {
        ann.push_back(a.normalized);
    }
    if (rec.confidence) {
        obj["confidence"] = *rec.confidence;
    }
    if (!rec.features.empty()) {
        auto& f = obj["features"] = nlohmann::ordered_json::object();
        for (Channel c : kAllChannels) {
            if (const auto& ch = rec.features.get(c)) {
                f[std::string(channel_name(c))] = vector_json(*ch);
            }
        }
    }
    if (rec.difficulty) {
        obj["difficulty"] = *rec.difficulty;
    }
    if (rec.noise_override == NoiseOverride::unfair) {
        obj["noise_override"] = "unfair";
    }
    return obj.dump();
}

RecordSet read_records(std::istream& in, const AnswerPreprocessor& pre)
{
    RecordSet rs;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
            continue;
        }
        rs.records.push_back(parse_record(line, line_number, pre));
        if (!ids.insert(rs.records.back().id).second) {
            throw ValidationError("line " + std::to_string(line_number) + ": duplicate id '" +
                                  rs.records.back().id + "'");
        }
    }
    return rs;
}

std::filesystem::path vocabulary_path_for(const std::filesystem::path& records_path)
{
    auto p = records_path;
    p.replace_extension(".vocab");
    return p;
}

std::vector<AnswerText> load_vocabulary(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open vocabulary file " + path.string());
    }
    std::vector<AnswerText> vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        vocab.emplace_back(line);
    }
    return vocab;
}

void save_vocabulary(const std::filesystem::path& path, std::span<const AnswerText> vocab)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write vocabulary file " + path.string());
    }
    for (const auto& a : vocab) {
        out << a.normalized << '\n';
    }
}

RecordSet load_records(const std::filesystem::path& path, const std::optional<std::filesystem::path>& vocab_path,
                       const AnswerPreprocessor& pre)
{
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open records file " + path.string());
    }
    RecordSet rs = read_records(in, pre);
    if (vocab_path) {
        rs.vocabulary = load_vocabulary(*vocab_path);
    } else if (auto sidecar = vocabulary_path_for(path); sidecar != path && std::filesystem::exists(sidecar)) {
        rs.vocabulary = load_vocabulary(sidecar);
    }
    rs.validate();
    return rs;
}

void write_records(std::ostream& out, const RecordSet& rs)
{
    for (const auto& rec : rs.records) {
        out << serialize_record(rec) << '\n';
    }
}

void save_records(const std::filesystem::path& path, const RecordSet& rs)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write records file " + path.string());
    }
    write_records(out, rs);
    if (rs.vocabulary) {
        save_vocabulary(vocabulary_path_for(path), *rs.vocabulary);
    }
}

void SplitSpec::validate() const
{
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) {
            throw ValidationError("split ratios must be non-negative");
        }
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("split ratios must sum to 1");
    }
}

Splits split_by_image(const RecordSet& rs, const SplitSpec& spec)
{
    spec.validate();

    std::vector<std::string> images;
    {
        std::set<std::string> distinct;
        for (const auto& rec : rs.records) {
            if (rec.image_id.empty()) {
                throw ValidationError("record '" + rec.id + "' has no image_id");
            }
            distinct.insert(rec.image_id);
        }
        images.assign(distinct.begin(), distinct.end());
    }
    const std::size_t m = images.size();
    const bool all_positive = std::all_of(spec.ratios.begin(), spec.ratios.end(), [](double r) { return r > 0.0; });
    if (all_positive && m < 3) {
        throw ValidationError("cannot populate all splits: only " + std::to_string(m) + " distinct images");
    }

    Rng rng(spec.seed);
    rng.shuffle(std::span<std::string>(images));

    // Small epsilon so that e.g. 0.4 * 10 floors to 4 regardless of rounding.
    auto take = [m](double ratio) {
        return std::min(m, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(m) + 1e-9)));
    };
    const std::size_t n_dev = take(spec.ratios[0]);
    const std::size_t n_val = std::min(m - n_dev, take(spec.ratios[1]));

    std::unordered_map<std::string_view, int> assignment;
    for (std::size_t i = 0; i < m; ++i) {
        assignment[images[i]] = i < n_dev ? 0 : (i < n_dev + n_val ? 1 : 2);
    }

    Splits out;
    for (RecordSet* s : {&out.dev, &out.val, &out.test}) {
        s->vocabulary = rs.vocabulary;
    }
    for (const auto& rec : rs.records) {
        switch (assignment.at(rec.image_id)) {
        case 0:
            out.dev.records.push_back(rec);
            break;
        case 1:
            out.val.records.push_back(rec);
            break;
        default:
            out.test.records.push_back(rec);
            break;
        }
    }
    return out;
}

std::vector<double> pool_features(std::span<const std::vector<double>> vectors)
{
    if (vectors.empty()) {
        throw DimensionError("pool_features: empty vector set");
    }
    std::vector<double> out = vectors.front();
    for (std::size_t i = 1; i < vectors.size(); ++i) {
        if (vectors[i].size() != out.size()) {
            throw DimensionError("pool_features: vector " + std::to_string(i) + " has length " +
                                 std::to_string(vectors[i].size()) + ", expected " + std::to_string(out.size()));
        }
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] = std::max(out[j], vectors[i][j]);
        }
    }
    return out;
}

} // namespace reliqa
