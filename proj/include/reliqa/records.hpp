#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace reliqa {

/// Lowercase, trim, and collapse internal whitespace runs to one space.
std::string normalize_answer(std::string_view raw);

/// Optional pre-processing applied to raw answers before normalize_answer,
/// e.g. an official punctuation/number normalizer. Identity by default.
using AnswerPreprocessor = std::function<std::string(std::string_view)>;

struct AnswerText {
    std::string raw;
    std::string normalized;

    AnswerText() = default;
    explicit AnswerText(std::string raw_text);
    AnswerText(std::string raw_text, const AnswerPreprocessor& pre);

    friend bool operator==(const AnswerText& a, const AnswerText& b) { return a.normalized == b.normalized; }
};

inline constexpr std::size_t kAnnotationCount = 10;

/// Exactly ten human reference answers.
class AnnotationSet {
public:
    AnnotationSet() = default;
    explicit AnnotationSet(std::vector<AnswerText> answers);
    static AnnotationSet from_strings(const std::vector<std::string>& raw);

    const std::array<AnswerText, kAnnotationCount>& answers() const { return answers_; }
    std::size_t size() const { return answers_.size(); }
    const AnswerText& operator[](std::size_t i) const { return answers_[i]; }

private:
    std::array<AnswerText, kAnnotationCount> answers_;
};

/// Named representation channels a record may carry.
enum class Channel { logits, q, v, v_tilde, r };

inline constexpr std::array<Channel, 5> kAllChannels = {Channel::logits, Channel::q, Channel::v, Channel::v_tilde,
                                                        Channel::r};

std::string_view channel_name(Channel c);
Channel parse_channel(std::string_view name);

struct FeatureBundle {
    std::optional<std::vector<double>> q;
    std::optional<std::vector<double>> v;
    std::optional<std::vector<double>> v_tilde;
    std::optional<std::vector<double>> r;
    std::optional<std::vector<double>> logits;

    const std::optional<std::vector<double>>& get(Channel c) const;
    std::optional<std::vector<double>>& get(Channel c);
    bool empty() const;
};

enum class NoiseOverride { none, unfair };

struct Record {
    std::string id;
    std::string image_id;
    AnswerText predicted_answer;
    std::optional<double> confidence;
    FeatureBundle features;
    AnnotationSet annotations;
    std::optional<int> difficulty;
    NoiseOverride noise_override = NoiseOverride::none;
};

struct RecordSet {
    std::vector<Record> records;
    std::optional<std::vector<AnswerText>> vocabulary;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    /// Checks id uniqueness, channel dimensionality and vocabulary alignment.
    /// Throws ValidationError.
    void validate() const;
};

/// Parses one JSON record line. `line_number` is used in diagnostics only.
Record parse_record(std::string_view line, std::size_t line_number, const AnswerPreprocessor& pre = {});
std::string serialize_record(const Record& record);

/// Reads a line-delimited record file. A vocabulary sidecar is read from
/// `vocab_path` when given, otherwise from `vocabulary_path_for(path)` if it
/// exists.
RecordSet load_records(const std::filesystem::path& path,
                       const std::optional<std::filesystem::path>& vocab_path = std::nullopt,
                       const AnswerPreprocessor& pre = {});
RecordSet read_records(std::istream& in, const AnswerPreprocessor& pre = {});

/// Writes records (and the vocabulary sidecar when present).
void save_records(const std::filesystem::path& path, const RecordSet& rs);
void write_records(std::ostream& out, const RecordSet& rs);

std::vector<AnswerText> load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const std::filesystem::path& path, std::span<const AnswerText> vocab);

/// `dir/name.jsonl` -> `dir/name.vocab`
std::filesystem::path vocabulary_path_for(const std::filesystem::path& records_path);

struct SplitSpec {
    std::array<double, 3> ratios{0.40, 0.10, 0.50};
    std::uint64_t seed = 0;

    void validate() const;
};

struct Splits {
    RecordSet dev;
    RecordSet val;
    RecordSet test;
};

/// Partitions records by image so that no image appears in two splits.
///
/// Sorted distinct image ids are shuffled with Rng(seed); the first
/// floor(r0*m) go to dev, the next floor(r1*m) to val, the rest to test.
/// Records keep their relative file order within each split.
Splits split_by_image(const RecordSet& rs, const SplitSpec& spec);

/// Element-wise maximum over a set of equal-length vectors.
std::vector<double> pool_features(std::span<const std::vector<double>> vectors);

} // namespace reliqa
