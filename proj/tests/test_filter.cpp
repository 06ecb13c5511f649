#include <catch2/catch_amalgamated.hpp>

#include "stepqa/filter.hpp"
#include "stepqa/filter_model.hpp"
#include "support/fixtures.hpp"

using namespace stepqa;
using datamodel::Paragraph;
using filter::ParagraphScore;

namespace {

std::vector<Paragraph> five_paragraphs() {
    return {
        {"P1", {"The Falcon Opera was written by Harbor Quill."}, 0},
        {"P2", {"Cedar City lies in a valley."}, 1},
        {"P3", {"The Nimbus Line carries freight."}, 2},
        {"P4", {"Harbor Quill lived near the Falcon Opera house."}, 3},
        {"P5", {"Unrelated filler text sits here."}, 4},
    };
}

std::vector<ParagraphScore> fixed_scores(std::vector<double> values) {
    std::vector<ParagraphScore> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.push_back({static_cast<int>(i), values[i]});
    }
    return out;
}

}  // namespace

TEST_CASE("word-overlap scorer ranks the topical paragraph highest", "[filter]") {
    filter::WordOverlapScorer scorer;
    std::vector<Paragraph> paragraphs = {
        {"A", {"The Falcon Opera was written by Harbor Quill."}, 0},
        {"B", {"Cedar City lies in a valley."}, 1},
        {"C", {"Nothing related at all."}, 2},
    };
    auto scores = filter::score_paragraphs("who wrote the Falcon Opera", paragraphs, scorer);
    REQUIRE(scores.size() == 3);
    // Question content tokens: who, wrote, falcon, opera. Paragraph A holds
    // falcon and opera ("wrote" does not match "written" without stemming).
    CHECK(scores[0].score == Catch::Approx(2.0 / 4.0));
    CHECK(scores[1].score == 0.0);
    CHECK(scores[2].score == 0.0);
    CHECK(scores[0].score > scores[1].score);

    // Determinism: identical paragraphs score identically.
    auto again = filter::score_paragraphs("who wrote the Falcon Opera", paragraphs, scorer);
    CHECK(again[0].score == scores[0].score);

    // Empty-question edge: scores still one per paragraph, all in [0, 1].
    auto empty_q = filter::score_paragraphs("", paragraphs, scorer);
    REQUIRE(empty_q.size() == 3);
    for (const auto& s : empty_q) {
        CHECK(s.score >= 0.0);
        CHECK(s.score <= 1.0);
    }
}

TEST_CASE("2-hop strategy follows phrase overlap then hyperlinks", "[filter]") {
    const auto paragraphs = five_paragraphs();
    const auto scores = fixed_scores({0.9, 0.8, 0.7, 0.6, 0.5});
    const std::string question = "who wrote the Falcon Opera";

    filter::HyperlinkMap links;
    links["P1"] = {"P4"};
    auto ctx = filter::select_hotpot(question, paragraphs, scores, links);
    REQUIRE(ctx.paragraphs.size() == 4);
    CHECK(ctx.paragraphs[0].title == "P1");  // highest score with phrase overlap
    CHECK(ctx.paragraphs[1].title == "P4");  // hyperlink target of the first pick
    CHECK(ctx.paragraphs[2].title == "P2");  // next best scores
    CHECK(ctx.paragraphs[3].title == "P3");

    // Without hyperlinks the second pick falls back to score order.
    auto ctx2 = filter::select_hotpot(question, paragraphs, scores);
    REQUIRE(ctx2.paragraphs.size() == 4);
    CHECK(ctx2.paragraphs[0].title == "P1");
    CHECK(ctx2.paragraphs[1].title == "P2");
    CHECK(ctx2.paragraphs[2].title == "P3");
    CHECK(ctx2.paragraphs[3].title == "P4");

    // An overlap holder that is not the score leader still goes first. Only
    // P1 and P4 share a phrase with the question; P4 is the better scored.
    auto low_first = filter::select_hotpot(question, paragraphs,
                                           fixed_scores({0.5, 0.9, 0.8, 0.7, 0.6}));
    REQUIRE(low_first.paragraphs.size() == 4);
    CHECK(low_first.paragraphs[0].title == "P4");
    CHECK(low_first.paragraphs[1].title == "P2");
    CHECK(low_first.paragraphs[2].title == "P3");
    CHECK(low_first.paragraphs[3].title == "P5");

    // No paragraph shares a phrase: the global score leader goes first.
    auto no_overlap = filter::select_hotpot("entirely disjoint words", paragraphs, scores);
    CHECK(no_overlap.paragraphs[0].title == "P1");

    // Four candidates: everything is returned.
    std::vector<Paragraph> four(paragraphs.begin(), paragraphs.begin() + 4);
    auto ctx3 = filter::select_hotpot(question, four, fixed_scores({0.9, 0.8, 0.7, 0.6}));
    CHECK(ctx3.paragraphs.size() == 4);

    std::vector<Paragraph> one(paragraphs.begin(), paragraphs.begin() + 1);
    CHECK_THROWS_AS(filter::select_hotpot(question, one, fixed_scores({0.9})), ContractError);
}

TEST_CASE("top-k selection takes the k best with index tie-break", "[filter]") {
    std::vector<Paragraph> paragraphs;
    for (int i = 0; i < 10; ++i) {
        paragraphs.push_back({"T" + std::to_string(i), {"Sentence."}, i});
    }
    auto scores = fixed_scores({0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.4, 0.6, 0.05, 0.5});
    auto ctx = filter::select_topk(scores, paragraphs, 5);
    REQUIRE(ctx.paragraphs.size() == 5);
    CHECK(ctx.paragraphs[0].title == "T1");
    CHECK(ctx.paragraphs[1].title == "T3");
    CHECK(ctx.paragraphs[2].title == "T5");
    CHECK(ctx.paragraphs[3].title == "T7");
    CHECK(ctx.paragraphs[4].title == "T9");

    // k >= n returns everything.
    CHECK(filter::select_topk(scores, paragraphs, 50).paragraphs.size() == 10);

    // Tie at the cut: the lower source_index wins.
    std::vector<Paragraph> tied = {{"A", {"s"}, 0}, {"B", {"s"}, 1}, {"C", {"s"}, 2}};
    auto tie_ctx = filter::select_topk(fixed_scores({0.5, 0.5, 0.9}), tied, 2);
    REQUIRE(tie_ctx.paragraphs.size() == 2);
    CHECK(tie_ctx.paragraphs[0].title == "C");
    CHECK(tie_ctx.paragraphs[1].title == "A");
}

TEST_CASE("top-k output is invariant to input permutation", "[filter]") {
    std::vector<Paragraph> paragraphs;
    for (int i = 0; i < 8; ++i) {
        paragraphs.push_back({"T" + std::to_string(i), {"Sentence."}, i});
    }
    std::vector<double> values = {0.3, 0.3, 0.9, 0.1, 0.5, 0.3, 0.8, 0.2};
    std::vector<ParagraphScore> scores;
    for (std::size_t i = 0; i < values.size(); ++i) {
        scores.push_back({static_cast<int>(i), values[i]});
    }
    auto base = filter::select_topk(scores, paragraphs, 4);

    std::vector<std::size_t> perm = {5, 2, 7, 0, 3, 6, 1, 4};
    std::vector<Paragraph> shuffled;
    std::vector<ParagraphScore> shuffled_scores;
    for (std::size_t i : perm) {
        shuffled.push_back(paragraphs[i]);
        shuffled_scores.push_back(scores[i]);
    }
    auto permuted = filter::select_topk(shuffled_scores, shuffled, 4);
    REQUIRE(base.paragraphs.size() == permuted.paragraphs.size());
    for (std::size_t i = 0; i < base.paragraphs.size(); ++i) {
        CHECK(base.paragraphs[i].title == permuted.paragraphs[i].title);
    }
}

TEST_CASE("gold recall is 1.0 when the scorer ranks gold paragraphs on top", "[filter]") {
    std::vector<datamodel::MultiHopExample> examples;
    std::vector<filter::RelevantContext> contexts;
    for (int i = 0; i < 6; ++i) {
        auto ex = fixtures::bridge_example(i);
        contexts.push_back(fixtures::filtered_context(ex));
        examples.push_back(std::move(ex));
    }
    CHECK(filter::gold_recall(examples, contexts) == 1.0);
}

TEST_CASE("trainable scorer learns gold-support membership on a tiny set", "[filter][slow]") {
    std::vector<datamodel::MultiHopExample> examples;
    for (int i = 0; i < 6; ++i) {
        examples.push_back(fixtures::bridge_example(i));
    }
    nn::TransformerConfig cfg;
    cfg.width = 32;
    cfg.heads = 2;
    cfg.ffn = 64;
    cfg.layers = 1;
    cfg.max_len = 160;
    cfg.seed = 5;
    filter::NeuralParagraphScorer scorer(filter::NeuralParagraphScorer::build_vocab(examples),
                                         cfg);
    scorer.fit(examples, /*epochs=*/40, /*lr=*/3e-3, /*batch_size=*/6, /*seed=*/5);
    // After training, gold paragraphs outscore distractors.
    for (const auto& ex : examples) {
        auto scores = scorer.score(ex.question, ex.paragraphs);
        CHECK(scores[0] > scores[2]);
        CHECK(scores[1] > scores[3]);
    }
}
