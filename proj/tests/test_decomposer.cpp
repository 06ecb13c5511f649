#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "stepqa/decomposer.hpp"
#include "support/fixtures.hpp"

using namespace stepqa;
using decomposer::intersection_prompt;
using decomposer::make_qg_input;

TEST_CASE("intersection prompt keeps shared content tokens in question order", "[decomposer]") {
    const std::string question = "Where is Marine Air Control Group 28 based?";
    const std::vector<std::string> supports = {
        "Marine Air Control Group 28 is based at Cherry Point."};
    CHECK(intersection_prompt(question, supports) ==
          std::vector<std::string>{"marine", "air", "control", "group", "28", "based"});

    CHECK(intersection_prompt("what links the harbor?", {"unrelated words entirely"}).empty());

    // Question equal to the support: all non-stopword tokens, question order.
    CHECK(intersection_prompt("The falcon guards the tower.", {"The falcon guards the tower."}) ==
          std::vector<std::string>{"falcon", "guards", "tower"});
}

TEST_CASE("prompt soundness holds on random question/support pairs", "[decomposer]") {
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 1000; ++trial) {
        auto ex = fixtures::random_example(rng, trial);
        std::vector<std::string> supports;
        for (const auto& s : ex.paragraphs[trial % ex.paragraphs.size()].sentences) {
            supports.push_back(s);
        }
        auto prompt = intersection_prompt(ex.question, supports);
        std::set<std::string> q_tokens;
        for (const auto& t : text::content_tokens(ex.question)) {
            q_tokens.insert(t);
        }
        std::set<std::string> s_tokens;
        for (const auto& s : supports) {
            for (const auto& t : text::content_tokens(s)) {
                s_tokens.insert(t);
            }
        }
        std::set<std::string> seen;
        for (const auto& tok : prompt) {
            CHECK(q_tokens.count(tok) == 1);
            CHECK(s_tokens.count(tok) == 1);
            CHECK(seen.insert(tok).second);  // deduplicated
        }
    }
}

TEST_CASE("stub generator reproduces the location question", "[decomposer]") {
    decomposer::StubGenerator generator;
    auto input = make_qg_input("Where is Marine Air Control Group 28 based?",
                               {"Marine Air Control Group 28 is based at Cherry Point."});
    const std::string q = decomposer::generate_subquestion(input, generator);
    CHECK(q == "where is marine air control group 28 based?");

    // Deterministic under repeated calls.
    CHECK(decomposer::generate_subquestion(input, generator) == q);
}

TEST_CASE("stub generator asks about the subject when the prompt is empty", "[decomposer]") {
    decomposer::StubGenerator generator;
    auto input = make_qg_input("completely unrelated query?",
                               {"Marine Air Control Group 28 is based at Cherry Point."});
    REQUIRE(input.prompt.empty());
    const std::string q = decomposer::generate_subquestion(input, generator);
    CHECK_FALSE(q.empty());
    CHECK(q.back() == '?');
    CHECK(q.find("marine") != std::string::npos);
}

TEST_CASE("generated sub-questions stay grounded in their inputs", "[decomposer]") {
    decomposer::StubGenerator generator;
    std::set<std::string> inventory;
    for (const auto& w : decomposer::StubGenerator::template_inventory()) {
        inventory.insert(w);
    }
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        auto ex = fixtures::random_example(rng, trial);
        std::vector<std::string> supports =
            ex.paragraphs[trial % ex.paragraphs.size()].sentences;
        auto input = make_qg_input(ex.question, supports);
        const std::string q = decomposer::generate_subquestion(input, generator);
        std::set<std::string> allowed = inventory;
        for (const auto& t : input.prompt) {
            allowed.insert(t);
        }
        for (const auto& s : supports) {
            for (const auto& t : text::tokenize(s)) {
                allowed.insert(text::lowercase(t));
            }
        }
        for (const auto& tok : text::tokenize(q)) {
            INFO("question: " << q);
            CHECK(allowed.count(text::lowercase(tok)) == 1);
        }
    }
}

TEST_CASE("empty generations fall back to a prompt question", "[decomposer]") {
    struct EmptyGenerator final : decomposer::SubQuestionGenerator {
        std::string generate(const decomposer::PromptedQGInput&) const override { return "  "; }
    };
    EmptyGenerator generator;
    auto input = make_qg_input("where is the harbor located?", {"The harbor located north."});
    const std::string q = decomposer::generate_subquestion(input, generator);
    CHECK(q == "what is harbor located?");
}

TEST_CASE("stub answerer extracts the novel span", "[decomposer]") {
    decomposer::StubAnswerer answerer;
    CHECK(decomposer::answer_subquestion(
              "where is marine air control group 28 based?",
              {"Marine Air Control Group 28 is based at Cherry Point."}, answerer) ==
          "Cherry Point");

    // Single-token support: the only candidate.
    CHECK(decomposer::answer_subquestion("what is it?", {"Granite"}, answerer) == "Granite");

    // Support that repeats the question: still a span of the support.
    const std::string echo = "where is the harbor";
    const std::string a = decomposer::answer_subquestion(echo + "?", {echo}, answerer);
    CHECK_FALSE(a.empty());
    CHECK(echo.find(a) != std::string::npos);

    // No supports at all: empty answer with a warning.
    CHECK(decomposer::answer_subquestion("what?", {}, answerer).empty());
}

TEST_CASE("pretraining pairs mirror the prompting scheme", "[decomposer]") {
    std::vector<decomposer::SimpleQARecord> corpus = {
        {"Marine Air Control Group 28 is based at Cherry Point.",
         "where is marine air control group 28 based?", "Cherry Point", 40},
        {"The Amber Gallery opened in 1901.", "when did the amber gallery open?", "1901", 28},
        {"Granite is hard.", "entirely disjoint words?", "hard", 11},
    };
    auto pairs = decomposer::build_qg_pretraining(corpus);
    REQUIRE(pairs.size() == corpus.size());
    CHECK(pairs[0].first ==
          "[CLS] marine air control group 28 based [SEP] "
          "Marine Air Control Group 28 is based at Cherry Point. [SEP]");
    CHECK(pairs[0].second == corpus[0].question);
    // Zero-overlap record still yields a pair with an empty prompt.
    CHECK(pairs[2].first == "[CLS] [SEP] Granite is hard. [SEP]");
}

TEST_CASE("trainable answerer honors the span contract and can overfit", "[decomposer][slow]") {
    std::vector<decomposer::SimpleQARecord> corpus = {
        {"The Amber Gallery is in Cedar City.", "where is the amber gallery?", "Cedar City", 24},
        {"The Birch Museum is in Delta Harbor.", "where is the birch museum?", "Delta Harbor",
         23},
        {"The Ember Press prints journals.", "what does the ember press print?", "journals", 23},
        {"The Falcon Film was directed by Garnet Reed.", "who directed the falcon film?",
         "Garnet Reed", 32},
    };
    nn::TransformerConfig cfg;
    cfg.width = 32;
    cfg.heads = 2;
    cfg.ffn = 64;
    cfg.layers = 1;
    cfg.max_len = 64;
    cfg.seed = 3;
    decomposer::NeuralAnswerer answerer(decomposer::NeuralAnswerer::build_vocab(corpus), cfg);

    // Untrained, the output must already be a contiguous span of the supports.
    const std::string before =
        answerer.answer("where is the amber gallery?", {corpus[0].context_sentence});
    CHECK(corpus[0].context_sentence.find(before) != std::string::npos);

    answerer.fit(corpus, /*epochs=*/60, /*lr=*/3e-3, /*batch_size=*/4, /*seed=*/3);
    for (const auto& rec : corpus) {
        CHECK(answerer.answer(rec.question, {rec.context_sentence}) == rec.answer_text);
    }
}
