#pragma once

// Deterministic synthetic corpora shared by the unit and acceptance suites.

#include <random>
#include <set>
#include <string>
#include <vector>

#include "stepqa/datamodel.hpp"
#include "stepqa/decomposer.hpp"
#include "stepqa/filter.hpp"
#include "stepqa/objective.hpp"

namespace fixtures {

using stepqa::datamodel::MultiHopExample;
using stepqa::datamodel::Paragraph;
using stepqa::datamodel::SupportFact;

inline const std::vector<std::string>& names() {
    static const std::vector<std::string> pool = {
        "Amber",    "Birch",   "Cedar",  "Delta",  "Ember",   "Falcon",
        "Garnet",   "Harbor",  "Indigo", "Juniper", "Keystone", "Lantern",
        "Maple",    "Nimbus",  "Opal",   "Pinnacle"};
    return pool;
}

inline std::string name(int i) {
    return names()[static_cast<std::size_t>(i) % names().size()];
}

// 2-hop bridge example: the question names the gallery, the gallery sentence
// names the castle, the castle sentence holds the answer span.
inline MultiHopExample bridge_example(int i) {
    const std::string a = name(i);
    const std::string b = name(i + 5);
    const std::string c = name(i + 11);
    MultiHopExample ex;
    ex.id = "bridge-" + std::to_string(i);
    ex.question = "Where is the castle linked to the " + a + " Gallery located?";
    ex.answer = c + " Valley";
    Paragraph p1{a + " Gallery",
                 {"The " + a + " Gallery is linked to " + b + " Castle.",
                  " Many visitors admire the " + a + " Gallery every year."},
                 0};
    Paragraph p2{b + " Castle",
                 {b + " Castle is located in " + c + " Valley.",
                  " The grounds include an old orchard."},
                 1};
    Paragraph d1{name(i + 3) + " Museum",
                 {"The " + name(i + 3) + " Museum exhibits early paintings."},
                 2};
    Paragraph d2{name(i + 7) + " River",
                 {"The " + name(i + 7) + " River flows north through the plains."},
                 3};
    ex.paragraphs = {p1, p2, d1, d2};
    ex.gold_supports = {{p1.title, 0}, {p2.title, 0}};
    ex.qtype = "bridge";
    return ex;
}

// 3-hop chain: gallery names the castle, castle names the tower, tower
// holds the answer span. Supervision under a hop budget of 3 ends at hop 2.
inline MultiHopExample three_hop_example(int i) {
    const std::string a = name(i);
    const std::string b = name(i + 5);
    const std::string c = name(i + 11);
    const std::string d = name(i + 7);
    MultiHopExample ex;
    ex.id = "chain-" + std::to_string(i);
    ex.question =
        "Where is the tower beside the castle linked to the " + a + " Gallery located?";
    ex.answer = d + " Harbor";
    Paragraph p1{a + " Gallery", {"The " + a + " Gallery is linked to " + b + " Castle."}, 0};
    Paragraph p2{b + " Castle", {b + " Castle stands beside " + c + " Tower."}, 1};
    Paragraph p3{c + " Tower", {c + " Tower is located in " + d + " Harbor."}, 2};
    Paragraph d1{name(i + 3) + " Museum",
                 {"The " + name(i + 3) + " Museum exhibits early paintings."},
                 3};
    ex.paragraphs = {p1, p2, p3, d1};
    ex.gold_supports = {{p1.title, 0}, {p2.title, 0}, {p3.title, 0}};
    ex.qtype = "bridge";
    return ex;
}

// Yes/no comparison example over two gallery paragraphs.
inline MultiHopExample comparison_example(int i, bool same_city) {
    const std::string a = name(i);
    const std::string b = name(i + 4);
    const std::string c = name(i + 9);
    const std::string d = same_city ? c : name(i + 13);
    MultiHopExample ex;
    ex.id = "cmp-" + std::to_string(i) + (same_city ? "-yes" : "-no");
    ex.question =
        "Are the " + a + " Gallery and the " + b + " Gallery in the same city?";
    ex.answer = same_city ? "yes" : "no";
    Paragraph p1{a + " Gallery", {"The " + a + " Gallery is in " + c + " City."}, 0};
    Paragraph p2{b + " Gallery", {"The " + b + " Gallery is in " + d + " City."}, 1};
    Paragraph d1{name(i + 2) + " Museum",
                 {"The " + name(i + 2) + " Museum exhibits early paintings."},
                 2};
    Paragraph d2{name(i + 6) + " River",
                 {"The " + name(i + 6) + " River flows north through the plains."},
                 3};
    ex.paragraphs = {p1, p2, d1, d2};
    ex.gold_supports = {{p1.title, 0}, {p2.title, 0}};
    ex.qtype = "comparison";
    return ex;
}

// The 16-example overfit corpus: 12 bridge + 4 comparison questions.
inline std::vector<MultiHopExample> overfit_set() {
    std::vector<MultiHopExample> out;
    for (int i = 0; i < 12; ++i) {
        out.push_back(bridge_example(i));
    }
    for (int i = 0; i < 4; ++i) {
        out.push_back(comparison_example(i, i % 2 == 0));
    }
    return out;
}

// Randomized example for property and halting tests: 2-4 gold paragraphs,
// random sentence counts, span or yes/no answers.
inline MultiHopExample random_example(std::mt19937_64& rng, int index) {
    auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
    MultiHopExample ex;
    ex.id = "rand-" + std::to_string(index);
    const int n_paragraphs = 4 + pick(3);            // 4..6
    const int n_gold = 2 + pick(3);                  // 2..4
    static const std::vector<std::string> kinds = {"Gallery", "Castle", "Museum", "River",
                                                   "Harbor", "Bridge"};
    std::vector<std::string> titles;
    for (int p = 0; p < n_paragraphs; ++p) {
        const std::string title =
            name(index + p * 3) + " " + kinds[static_cast<std::size_t>(p) % kinds.size()];
        titles.push_back(title);
        Paragraph para;
        para.title = title;
        para.source_index = p;
        const int n_sent = 1 + pick(3);
        for (int s = 0; s < n_sent; ++s) {
            para.sentences.push_back((s == 0 ? "" : " ") + title + " is near " +
                                     name(index + p + s + 1) + " " +
                                     kinds[static_cast<std::size_t>(pick(6))] + " number " +
                                     std::to_string(pick(90) + 10) + ".");
        }
        ex.paragraphs.push_back(std::move(para));
    }
    for (int g = 0; g < n_gold; ++g) {
        const auto& para = ex.paragraphs[static_cast<std::size_t>(g)];
        ex.gold_supports.insert(
            {para.title, pick(static_cast<int>(para.sentences.size()))});
    }
    if (pick(5) == 0) {
        ex.answer = pick(2) == 0 ? "yes" : "no";
    } else {
        // A token guaranteed to occur in a gold paragraph.
        const auto& para = ex.paragraphs[static_cast<std::size_t>(pick(n_gold))];
        ex.answer = name(index + para.source_index + 1);
    }
    ex.question = "Which place is near the " + titles[0] + " and the " + titles[1] + "?";
    return ex;
}

// Full-context shortcut for tests that do not exercise the filter.
inline stepqa::filter::RelevantContext full_context(const MultiHopExample& ex) {
    return stepqa::filter::RelevantContext::from_paragraphs(ex.paragraphs);
}

// Filtered context via the word-overlap scorer and the 2-hop strategy.
inline stepqa::filter::RelevantContext filtered_context(const MultiHopExample& ex) {
    stepqa::filter::WordOverlapScorer scorer;
    auto scores = stepqa::filter::score_paragraphs(ex.question, ex.paragraphs, scorer);
    return stepqa::filter::select_hotpot(ex.question, ex.paragraphs, scores);
}

inline std::vector<stepqa::objective::PreparedExample> prepare_records(
    const std::vector<MultiHopExample>& examples, int max_hops,
    const stepqa::decomposer::SubQuestionGenerator& generator,
    const stepqa::decomposer::SubAnswerer& answerer, bool use_filter = true) {
    std::vector<stepqa::objective::PreparedExample> records;
    for (const auto& ex : examples) {
        stepqa::objective::PreparedExample rec;
        rec.example = ex;
        rec.supervision = stepqa::datamodel::derive_hop_labels(ex, max_hops);
        rec.context = use_filter ? filtered_context(ex) : full_context(ex);
        rec.teacher_qa = stepqa::objective::build_teacher_qa(
            rec.example, rec.context, rec.supervision.per_hop_sentence_labels,
            rec.supervision.end_hop, generator, answerer);
        records.push_back(std::move(rec));
    }
    return records;
}

// Reader vocabulary over a prepared record set (specials first).
inline stepqa::nn::Vocabulary reader_vocab(
    const std::vector<stepqa::objective::PreparedExample>& records, int max_hops) {
    namespace enc = stepqa::encoding;
    stepqa::nn::Vocabulary vocab;
    vocab.add(enc::kCls);
    vocab.add(enc::kSep);
    vocab.add(enc::kSent);
    vocab.add(enc::kSub);
    vocab.add(enc::kBdg);
    for (int k = 1; k <= max_hops; ++k) {
        vocab.add(enc::hop_token(k));
    }
    vocab.add(enc::kYes);
    vocab.add(enc::kNo);
    for (const auto& rec : records) {
        for (const auto& t : stepqa::text::tokenize(rec.example.question)) {
            vocab.add(t);
        }
        for (const auto& p : rec.context.paragraphs) {
            for (const auto& s : p.sentences) {
                for (const auto& t : stepqa::text::tokenize(s)) {
                    vocab.add(t);
                }
            }
        }
        for (const auto& sub : rec.teacher_qa) {
            for (const auto& t : stepqa::text::tokenize(sub.question)) {
                vocab.add(t);
            }
            for (const auto& t : stepqa::text::tokenize(sub.answer)) {
                vocab.add(t);
            }
        }
    }
    return vocab;
}

}  // namespace fixtures
