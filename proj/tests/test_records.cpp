#include "doctest.h"
#include "helpers.hpp"

#include "reliqa/errors.hpp"
#include "reliqa/records.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

using namespace reliqa;

namespace {

std::string line(const std::string& id, const std::string& image, int n_refs = 10)
{
    std::string refs;
    for (int i = 0; i < n_refs; ++i) {
        refs += std::string(i ? "," : "") + "\"yes\"";
    }
    return R"({"id":")" + id + R"(","image_id":")" + image + R"(","predicted_answer":"Yes","annotations":[)" + refs +
           "]}";
}

RecordSet images(int m, int per_image = 2)
{
    RecordSet rs;
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < per_image; ++j) {
            rs.records.push_back(testing::make_record("q" + std::to_string(i) + "_" + std::to_string(j),
                                                      "img" + std::to_string(i), "a", 3));
        }
    }
    return rs;
}

std::set<std::string> image_set(const RecordSet& rs)
{
    std::set<std::string> out;
    for (const auto& r : rs.records) {
        out.insert(r.image_id);
    }
    return out;
}

} // namespace

TEST_CASE("normalization is lowercase plus whitespace")
{
    CHECK(normalize_answer("  Two   Dogs ") == "two dogs");
    CHECK(normalize_answer("a\tb") == "a b");
    CHECK(AnswerText("YES") == AnswerText("yes"));
    CHECK_FALSE(AnswerText("2") == AnswerText("two"));
}

TEST_CASE("read_records keeps file order")
{
    std::istringstream in(line("q1", "i1") + "\n" + line("q2", "i1") + "\n" + line("q3", "i2") + "\n");
    const auto rs = read_records(in);
    REQUIRE(rs.size() == 3);
    CHECK(rs.records[0].id == "q1");
    CHECK(rs.records[2].id == "q3");
    CHECK(rs.records[0].predicted_answer.normalized == "yes");
}

TEST_CASE("record errors")
{
    SUBCASE("nine annotations")
    {
        std::istringstream in(line("q1", "i1", 9) + "\n");
        CHECK_THROWS_WITH_AS(read_records(in), doctest::Contains("annotation count 9 ≠ 10"), ValidationError);
    }
    SUBCASE("duplicate id")
    {
        std::istringstream in(line("q1", "i1") + "\n" + line("q1", "i2") + "\n");
        CHECK_THROWS_AS(read_records(in), ValidationError);
    }
    SUBCASE("malformed line names its number")
    {
        std::istringstream in(line("q1", "i1") + "\n{not json\n");
        CHECK_THROWS_WITH_AS(read_records(in), doctest::Contains("line 2"), ParseError);
    }
}

TEST_CASE("serialize then parse is the identity")
{
    Record r = testing::make_record("q7", "img3", "Red Car", 4);
    r.confidence = 0.25;
    r.difficulty = 2;
    r.noise_override = NoiseOverride::unfair;
    r.features.q = std::vector<double>{0.1, -2.5};
    r.features.logits = std::vector<double>{1.0, 2.0, 3.0};
    const auto back = parse_record(serialize_record(r), 1);
    CHECK(back.id == r.id);
    CHECK(back.image_id == r.image_id);
    CHECK(back.predicted_answer == r.predicted_answer);
    CHECK(back.confidence == r.confidence);
    CHECK(back.difficulty == r.difficulty);
    CHECK(back.noise_override == NoiseOverride::unfair);
    CHECK(*back.features.q == *r.features.q);
    CHECK(*back.features.logits == *r.features.logits);
    CHECK(serialize_record(back) == serialize_record(r));
}

TEST_CASE("save and load with vocabulary sidecar")
{
    const auto dir = std::filesystem::temp_directory_path() / "reliqa_records_test";
    std::filesystem::create_directories(dir);
    RecordSet rs = images(2, 1);
    rs.vocabulary = std::vector<AnswerText>{AnswerText("a"), AnswerText("b")};
    for (auto& r : rs.records) {
        r.features.logits = std::vector<double>{0.5, -0.5};
    }
    save_records(dir / "x.jsonl", rs);
    CHECK(std::filesystem::exists(dir / "x.vocab"));
    const auto back = load_records(dir / "x.jsonl");
    REQUIRE(back.vocabulary);
    CHECK(back.vocabulary->size() == 2);
    CHECK(back.size() == 2);
}

TEST_CASE("split_by_image")
{
    SUBCASE("floor allocation with remainder to test")
    {
        const auto s = split_by_image(images(10), SplitSpec{{0.4, 0.1, 0.5}, 1});
        CHECK(image_set(s.dev).size() == 4);
        CHECK(image_set(s.val).size() == 1);
        CHECK(image_set(s.test).size() == 5);
    }
    SUBCASE("partition and image disjointness")
    {
        const auto rs = images(37, 3);
        const auto s = split_by_image(rs, SplitSpec{{0.4, 0.1, 0.5}, 9});
        CHECK(s.dev.size() + s.val.size() + s.test.size() == rs.size());
        std::set<std::string> all;
        for (const auto* part : {&s.dev, &s.val, &s.test}) {
            for (const auto& img : image_set(*part)) {
                CHECK(all.insert(img).second);
            }
        }
        CHECK(all.size() == 37);
    }
    SUBCASE("deterministic per seed")
    {
        const auto rs = images(50);
        const auto a = split_by_image(rs, SplitSpec{{0.4, 0.1, 0.5}, 3});
        const auto b = split_by_image(rs, SplitSpec{{0.4, 0.1, 0.5}, 3});
        const auto c = split_by_image(rs, SplitSpec{{0.4, 0.1, 0.5}, 4});
        CHECK(image_set(a.dev) == image_set(b.dev));
        CHECK(image_set(a.test) == image_set(b.test));
        CHECK(image_set(a.dev) != image_set(c.dev));
    }
    SUBCASE("degenerate ratios")
    {
        const auto s = split_by_image(images(2), SplitSpec{{1.0, 0.0, 0.0}, 0});
        CHECK(s.dev.size() == 4);
        CHECK(s.val.empty());
        CHECK(s.test.empty());
    }
    SUBCASE("too few images")
    {
        CHECK_THROWS_WITH(split_by_image(images(2), SplitSpec{{0.4, 0.1, 0.5}, 0}),
                          doctest::Contains("cannot populate all splits"));
    }
}

TEST_CASE("pool_features")
{
    using V = std::vector<double>;
    CHECK(pool_features(std::vector<V>{{1, 2}, {3, 0}}) == V{3, 2});
    CHECK(pool_features(std::vector<V>{{5, 6}}) == V{5, 6});
    CHECK(pool_features(std::vector<V>{{-1, -2}, {-3, -1}}) == V{-1, -1});
    CHECK(pool_features(std::vector<V>{{-3, -1}, {-1, -2}}) == V{-1, -1});
    CHECK_THROWS_AS(pool_features(std::vector<V>{{1, 2}, {3}}), DimensionError);
}

TEST_CASE("nested feature arrays are max-pooled on load")
{
    const std::string base = line("q1", "i1");
    const std::string nested = base.substr(0, base.size() - 1) + R"(,"features":{"v":[[1,5],[4,2]]}})";
    const auto r = parse_record(nested, 1);
    REQUIRE(r.features.v);
    CHECK(*r.features.v == std::vector<double>{4, 5});
}
