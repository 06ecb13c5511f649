#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "stepqa/datamodel.hpp"
#include "support/fixtures.hpp"

using namespace stepqa;
using datamodel::MultiHopExample;
using datamodel::Paragraph;

namespace {

MultiHopExample yes_example() {
    MultiHopExample ex;
    ex.id = "yes-1";
    ex.question = "Are the Amber Gallery and the Birch Gallery in the same city?";
    ex.answer = "yes";
    for (int p = 0; p < 10; ++p) {
        Paragraph para;
        para.title = "Filler " + std::to_string(p);
        para.sentences = {"Filler sentence " + std::to_string(p) + "."};
        para.source_index = p;
        ex.paragraphs.push_back(para);
    }
    ex.paragraphs[0].title = "Amber Gallery";
    ex.paragraphs[0].sentences = {"The Amber Gallery is in Cedar City."};
    ex.paragraphs[3].title = "Birch Gallery";
    ex.paragraphs[3].sentences = {"The Birch Gallery is in Cedar City."};
    ex.gold_supports = {{"Amber Gallery", 0}, {"Birch Gallery", 0}};
    return ex;
}

}  // namespace

TEST_CASE("dataset round-trips through the record layout", "[datamodel]") {
    auto dir = std::filesystem::temp_directory_path() / "stepqa_datamodel";
    std::filesystem::create_directories(dir);
    const auto path = dir / "fixture.json";

    std::vector<MultiHopExample> examples;
    examples.push_back(yes_example());
    examples.push_back(fixtures::bridge_example(1));
    datamodel::write_dataset(path, examples);

    auto loaded = datamodel::load_dataset(path, datamodel::DatasetFormat::hotpot);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].id == examples[0].id);
    CHECK(loaded[0].question == examples[0].question);
    CHECK(loaded[0].answer == "yes");
    CHECK(loaded[0].paragraphs.size() == 10);
    CHECK(loaded[0].gold_supports == examples[0].gold_supports);
    CHECK(loaded[1].paragraphs.size() == examples[1].paragraphs.size());
    CHECK(loaded[1].qtype == examples[1].qtype);

    // Distinct support titles of the yes/no record.
    std::set<std::string> titles;
    for (const auto& [t, i] : loaded[0].gold_supports) {
        titles.insert(t);
    }
    CHECK(titles.size() == 2);
}

TEST_CASE("load rejects supports naming a missing title", "[datamodel]") {
    auto dir = std::filesystem::temp_directory_path() / "stepqa_datamodel";
    std::filesystem::create_directories(dir);
    const auto path = dir / "dangling.json";
    auto ex = fixtures::bridge_example(0);
    ex.gold_supports.insert({"No Such Paragraph", 0});
    // Bypass the writer-side validation by writing the raw record.
    datamodel::write_dataset(path, {ex});
    CHECK_THROWS_AS(datamodel::load_dataset(path), ValidationError);
}

TEST_CASE("validate_example reports violations without throwing", "[datamodel]") {
    auto good = fixtures::bridge_example(2);
    CHECK(datamodel::validate_example(good).empty());

    auto bad_index = good;
    bad_index.gold_supports.insert({good.paragraphs[0].title, 99});
    auto violations = datamodel::validate_example(bad_index);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("out of range") != std::string::npos);

    auto empty_answer = good;
    empty_answer.answer = "";
    violations = datamodel::validate_example(empty_answer);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("empty answer") != std::string::npos);
}

TEST_CASE("bridge labels put the answer paragraph in the final hop", "[datamodel]") {
    auto ex = fixtures::bridge_example(0);
    auto sup = datamodel::derive_hop_labels(ex, 2);
    // Hop 1 is the gallery paragraph (no answer span), final covers all gold.
    const std::string gallery = ex.paragraphs[0].title;
    REQUIRE(sup.end_hop == 1);
    CHECK(sup.end_labels == std::vector<int>{1});
    CHECK(sup.per_hop_sentence_labels[0] ==
          std::set<datamodel::SupportFact>{{gallery, 0}});
    CHECK(sup.final_labels == ex.gold_supports);
}

TEST_CASE("yes/no labels start from the title mentioned first in the question", "[datamodel]") {
    auto ex = yes_example();
    auto sup = datamodel::derive_hop_labels(ex, 2);
    REQUIRE(sup.end_hop == 1);
    // "Amber Gallery" appears before "Birch Gallery" in the question.
    CHECK(sup.per_hop_sentence_labels[0] ==
          std::set<datamodel::SupportFact>{{"Amber Gallery", 0}});
    CHECK(sup.final_labels == ex.gold_supports);
}

TEST_CASE("single gold paragraph degenerates to one hop", "[datamodel]") {
    auto ex = fixtures::bridge_example(3);
    ex.gold_supports = {{ex.paragraphs[1].title, 0}};
    auto sup = datamodel::derive_hop_labels(ex, 2);
    CHECK(sup.end_hop == 1);
    CHECK(sup.per_hop_sentence_labels[0] == ex.gold_supports);
    CHECK(sup.final_labels == ex.gold_supports);
}

TEST_CASE("3-paragraph chains order intermediate hops by question mention", "[datamodel]") {
    auto ex = fixtures::three_hop_example(0);
    const std::string gallery = ex.paragraphs[0].title;
    const std::string castle = ex.paragraphs[1].title;
    const std::string tower = ex.paragraphs[2].title;

    auto sup3 = datamodel::derive_hop_labels(ex, 3);
    REQUIRE(sup3.end_hop == 2);
    CHECK(sup3.end_labels == std::vector<int>{0, 1});
    CHECK(sup3.per_hop_sentence_labels[0] == std::set<datamodel::SupportFact>{{gallery, 0}});
    CHECK(sup3.per_hop_sentence_labels[1] == std::set<datamodel::SupportFact>{{castle, 0}});
    CHECK(sup3.final_labels == ex.gold_supports);

    // A larger hop budget keeps the same chain and end hop.
    auto sup4 = datamodel::derive_hop_labels(ex, 4);
    CHECK(sup4.end_hop == 2);
    CHECK(sup4.end_labels == std::vector<int>{0, 1, 0});
    CHECK(sup4.per_hop_sentence_labels[2].empty());

    // A tight budget collapses the castle into the final hop.
    auto sup2 = datamodel::derive_hop_labels(ex, 2);
    CHECK(sup2.end_hop == 1);
    CHECK(sup2.per_hop_sentence_labels[0] == std::set<datamodel::SupportFact>{{gallery, 0}});
    CHECK(sup2.final_labels.count({tower, 0}) == 1);
}

TEST_CASE("label derivation is deterministic and one-hot on end labels", "[datamodel]") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 25; ++i) {
        auto ex = fixtures::random_example(rng, i);
        for (int k = 2; k <= 4; ++k) {
            auto a = datamodel::derive_hop_labels(ex, k);
            auto b = datamodel::derive_hop_labels(ex, k);
            CHECK(a.end_hop == b.end_hop);
            CHECK(a.per_hop_sentence_labels == b.per_hop_sentence_labels);
            int ones = 0;
            for (int label : a.end_labels) {
                ones += label;
            }
            CHECK(ones == 1);
            CHECK(a.end_labels[static_cast<std::size_t>(a.end_hop - 1)] == 1);
            // Union of intermediate and final labels covers the gold set.
            std::set<datamodel::SupportFact> covered = a.final_labels;
            for (const auto& hop : a.per_hop_sentence_labels) {
                covered.insert(hop.begin(), hop.end());
            }
            for (const auto& fact : ex.gold_supports) {
                CHECK(covered.count(fact) == 1);
            }
        }
    }
}

TEST_CASE("gold chains longer than the hop budget collapse into the final hop", "[datamodel]") {
    std::mt19937_64 rng(11);
    // Find a random example with 4 gold paragraphs and derive with K=2.
    for (int i = 0; i < 50; ++i) {
        auto ex = fixtures::random_example(rng, 100 + i);
        std::set<std::string> gold_titles;
        for (const auto& [t, s] : ex.gold_supports) {
            gold_titles.insert(t);
        }
        if (gold_titles.size() < 3) {
            continue;
        }
        auto sup = datamodel::derive_hop_labels(ex, 2);
        CHECK(sup.end_hop == 1);
        CHECK(sup.per_hop_sentence_labels.size() == 1);
        CHECK(sup.final_labels == ex.gold_supports);
        return;
    }
    FAIL("no multi-paragraph fixture generated");
}

// Counted against the published split sizes; runs only when the real
// dataset is present.
TEST_CASE("full training file has the published example count", "[datamodel][.hotpot]") {
    const char* path = std::getenv("STEPQA_HOTPOT_TRAIN");
    if (path == nullptr) {
        SKIP("STEPQA_HOTPOT_TRAIN not set");
    }
    auto examples = datamodel::load_dataset(path, datamodel::DatasetFormat::hotpot);
    CHECK(examples.size() == 90447);
}
