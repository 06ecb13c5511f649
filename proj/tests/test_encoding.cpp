#include <catch2/catch_amalgamated.hpp>

#include "stepqa/encoding.hpp"
#include "support/fixtures.hpp"
#include "support/golden.hpp"

using namespace stepqa;
using encoding::EncodedSequence;
using encoding::SubQA;

TEST_CASE("rendered sequences match the stored golden strings", "[encoding]") {
    for (const auto& fixture : golden::all()) {
        INFO(fixture.name);
        CHECK(encoding::render(fixture.sequence) == fixture.expected);
    }
}

TEST_CASE("sequence structure: markers, yes/no, counts", "[encoding]") {
    auto f1 = golden::intermediate_empty_history();
    CHECK(f1.sequence.n_sentences == 2);
    CHECK(f1.sequence.cls_position == 0);
    CHECK_FALSE(f1.sequence.yes_position.has_value());
    REQUIRE(f1.sequence.sent_positions.size() == 2);
    CHECK(f1.sequence.tokens[f1.sequence.sent_positions[0].token_index] == encoding::kSent);
    CHECK(f1.sequence.tokens[f1.sequence.sent_positions[1].token_index] == encoding::kSent);

    auto f3 = golden::final_with_yes_no();
    REQUIRE(f3.sequence.yes_position.has_value());
    REQUIRE(f3.sequence.no_position.has_value());
    CHECK(*f3.sequence.yes_position < *f3.sequence.no_position);
    REQUIRE(f3.sequence.context_span.has_value());
    CHECK(*f3.sequence.no_position < f3.sequence.context_span->first);
    CHECK(f3.sequence.tokens[*f3.sequence.yes_position] == "yes");
    CHECK(f3.sequence.tokens[*f3.sequence.no_position] == "no");

    auto f5 = golden::zero_sentences();
    CHECK(f5.sequence.n_sentences == 0);
    CHECK_FALSE(f5.sequence.context_span.has_value());
}

TEST_CASE("offset map round-trips context tokens to paragraph text", "[encoding]") {
    for (const auto& fixture : golden::all()) {
        if (!fixture.sequence.context_span) {
            continue;
        }
        // Rebuild the paragraph texts the fixture encoded.
        const auto& seq = fixture.sequence;
        for (std::size_t i = seq.context_span->first; i <= seq.context_span->second; ++i) {
            if (!seq.offset_map[i]) {
                continue;
            }
            INFO(fixture.name << " token " << i);
            CHECK(seq.offset_map[i]->end > seq.offset_map[i]->begin);
        }
    }
    // Direct check against a known paragraph.
    auto fixture = golden::intermediate_empty_history();
    const auto& seq = fixture.sequence;
    datamodel::Paragraph para{
        "Marine Air Control Group 28",
        {"Marine Air Control Group 28 is based at Cherry Point.",
         " It is a unit of the United States Marine Corps."},
        0};
    const std::string text = para.text();
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        if (!seq.offset_map[i]) {
            continue;
        }
        CHECK(text.substr(seq.offset_map[i]->begin,
                          seq.offset_map[i]->end - seq.offset_map[i]->begin) == seq.tokens[i]);
    }
}

TEST_CASE("truncate drops whole trailing sentences and records them", "[encoding]") {
    auto fixture = golden::truncated();
    CHECK(fixture.sequence.n_sentences == 3);
    REQUIRE(fixture.sequence.dropped.size() == 1);
    CHECK(fixture.sequence.dropped[0] == datamodel::SupportFact{"Cedar Valley", 1});
    CHECK(fixture.sequence.tokens.size() <= 33);

    // Identity below the limit.
    auto f1 = golden::intermediate_empty_history();
    auto same = encoding::truncate(f1.sequence, 512);
    CHECK(same == f1.sequence);

    // Idempotence at a fixed limit.
    auto once = fixture.sequence;
    auto twice = encoding::truncate(once, 33);
    CHECK(twice == once);

    // Header too large for the limit.
    CHECK_THROWS_AS(encoding::truncate(f1.sequence, 5), ContractError);
}

TEST_CASE("offset round-trip and truncation idempotence hold on random contexts", "[encoding]") {
    std::mt19937_64 rng(57);
    for (int trial = 0; trial < 40; ++trial) {
        auto ex = fixtures::random_example(rng, trial);
        auto ctx = fixtures::full_context(ex);
        const bool final_hop = trial % 2 == 0;
        std::vector<SubQA> history;
        if (trial % 3 == 0) {
            history.push_back({"what is near the " + ex.paragraphs[0].title + "?",
                               fixtures::name(trial), 1});
        }
        auto seq = encoding::build_sequence(final_hop ? 4 : 2, ex.question, history, ctx,
                                            final_hop);
        // Every context token decodes to its paragraph substring.
        for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
            if (!seq.offset_map[i]) {
                continue;
            }
            const auto& o = *seq.offset_map[i];
            const std::string text =
                ctx.paragraphs[static_cast<std::size_t>(o.paragraph)].text();
            REQUIRE(o.end <= text.size());
            CHECK(text.substr(o.begin, o.end - o.begin) == seq.tokens[i]);
        }
        // Truncation to a random cap (at least the header) is idempotent
        // and in bounds.
        const std::size_t header_len =
            seq.context_span ? seq.context_span->first : seq.tokens.size();
        const std::size_t cap = header_len + rng() % (seq.tokens.size() + 4);
        auto once = encoding::truncate(seq, cap);
        CHECK(once.tokens.size() <= cap);
        CHECK(encoding::truncate(once, cap) == once);
        CHECK(once.n_sentences + once.dropped.size() == seq.n_sentences);
    }
}

TEST_CASE("truncation can drop whole paragraphs down to a header-only sequence", "[encoding]") {
    auto fixture = golden::truncated();  // built from 2 paragraphs x 2 sentences
    auto full = encoding::build_sequence(
        1, "Where is the castle?", {},
        golden::ctx({datamodel::Paragraph{
                         "Keystone Castle",
                         {"Keystone Castle stands on a hill.", " It was built long ago."},
                         0},
                     datamodel::Paragraph{
                         "Cedar Valley",
                         {"Cedar Valley lies below.", " Farms cover the valley."},
                         1}}),
        false);
    // Keep only the first sentence: the second paragraph vanishes entirely.
    auto tight = encoding::truncate(full, 18);
    CHECK(tight.n_sentences == 1);
    REQUIRE(tight.dropped.size() == 3);
    CHECK(tight.dropped[0] == datamodel::SupportFact{"Keystone Castle", 1});
    CHECK(tight.dropped[1] == datamodel::SupportFact{"Cedar Valley", 0});
    CHECK(tight.dropped[2] == datamodel::SupportFact{"Cedar Valley", 1});
    CHECK(encoding::render(tight) ==
          "[CLS] HOP=1 [SEP] Where is the castle ? [SEP] "
          "[SENT] Keystone Castle stands on a hill . [SEP]");

    // Below the first sentence: header only, everything dropped.
    auto header_only = encoding::truncate(full, 10);
    CHECK(header_only.n_sentences == 0);
    CHECK_FALSE(header_only.context_span.has_value());
    CHECK(header_only.dropped.size() == 4);
}

TEST_CASE("sentence markers look up their origin", "[encoding]") {
    auto fixture = golden::intermediate_empty_history();
    const auto& seq = fixture.sequence;
    CHECK(encoding::sentence_lookup(seq, seq.sent_positions[0].token_index) ==
          datamodel::SupportFact{"Marine Air Control Group 28", 0});
    CHECK(encoding::sentence_lookup(seq, seq.sent_positions[1].token_index) ==
          datamodel::SupportFact{"Marine Air Control Group 28", 1});
    CHECK_THROWS_AS(encoding::sentence_lookup(seq, 0), ContractError);
}

TEST_CASE("sub-answers are capped with a tail ellipsis", "[encoding]") {
    std::string long_answer;
    for (int i = 0; i < 25; ++i) {
        long_answer += (i ? " word" : "word") + std::to_string(i);
    }
    std::vector<SubQA> history = {{"what is it?", long_answer, 1}};
    auto seq = encoding::build_sequence(2, "Q?", history, golden::ctx({}), false);
    const std::string rendered = encoding::render(seq);
    CHECK(rendered.find("word19 ...") != std::string::npos);
    CHECK(rendered.find("word20") == std::string::npos);
}

TEST_CASE("contract violations are rejected", "[encoding]") {
    CHECK_THROWS_AS(encoding::build_sequence(0, "Q", {}, golden::ctx({}), true), ContractError);
    std::vector<SubQA> bad_history = {{"q2?", "a2", 2}};
    CHECK_THROWS_AS(encoding::build_sequence(2, "Q", bad_history, golden::ctx({}), false),
                    ContractError);
    std::vector<SubQA> decreasing = {{"q2?", "a2", 2}, {"q1?", "a1", 1}};
    CHECK_THROWS_AS(encoding::build_sequence(4, "Q", decreasing, golden::ctx({}), false),
                    ContractError);
}

TEST_CASE("token manifest lists markers and hop tokens", "[encoding]") {
    auto manifest = encoding::token_manifest(4);
    CHECK(manifest["special_tokens"].size() == 5);
    CHECK(manifest["hop_tokens"].size() == 4);
    CHECK(manifest["hop_tokens"][3] == "HOP=4");
    CHECK(manifest["answer_tokens"][0] == "yes");
    CHECK_FALSE(encoding::manifest_hash(2) == encoding::manifest_hash(4));
}
