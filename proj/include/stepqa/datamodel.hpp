#pragma once

// Corpus-facing types, dataset parsing, and per-hop supervision derivation.
//
// Both supported datasets share one record layout: an array of objects with
// fields `_id`, `question`, `answer`, `supporting_facts` ([title, sentence
// index] pairs), `context` ([title, sentence list] pairs) and the optional
// `type` / `level` labels.

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stepqa/common.hpp"
#include "stepqa/text.hpp"

namespace stepqa::datamodel {

using SupportFact = std::pair<std::string, int>;  // (paragraph title, sentence index)

struct Paragraph {
    std::string title;
    std::vector<std::string> sentences;
    int source_index = 0;  // position in the original candidate context

    // Canonical paragraph text: the concatenation of its sentences. Dataset
    // sentences carry their own spacing, so no separator is inserted.
    std::string text() const {
        std::string out;
        for (const auto& s : sentences) {
            out += s;
        }
        return out;
    }
};

struct MultiHopExample {
    std::string id;
    std::string question;
    std::vector<Paragraph> paragraphs;
    std::string answer;  // free text, or the literals "yes"/"no"
    std::set<SupportFact> gold_supports;
    std::optional<std::string> qtype;
    std::optional<std::string> level;

    const Paragraph* find_paragraph(const std::string& title) const {
        for (const auto& p : paragraphs) {
            if (p.title == title) {
                return &p;
            }
        }
        return nullptr;
    }
};

// Per-hop supervision labels derived from the gold supporting facts.
// `per_hop_sentence_labels[k-1]` holds the oracle supports of intermediate
// hop k; entries past the end hop are empty. `end_labels` is one-hot at the
// end hop.
struct HopSupervision {
    int max_hops = 2;  // K
    std::vector<std::set<SupportFact>> per_hop_sentence_labels;  // size K-1
    std::vector<int> end_labels;                                 // size K-1
    int end_hop = 1;                                             // k_e
    std::set<SupportFact> final_labels;
};

enum class DatasetFormat { hotpot, twowiki };

inline DatasetFormat parse_format(std::string_view name) {
    if (name == "hotpot") {
        return DatasetFormat::hotpot;
    }
    if (name == "twowiki" || name == "2wiki") {
        return DatasetFormat::twowiki;
    }
    throw ContractError("unknown dataset format: " + std::string(name));
}

inline std::vector<std::string> validate_example(const MultiHopExample& ex) {
    std::vector<std::string> violations;
    if (ex.answer.empty()) {
        violations.push_back("example " + ex.id + ": empty answer");
    }
    std::set<std::string> titles;
    std::set<int> source_indices;
    for (const auto& p : ex.paragraphs) {
        if (p.title.empty()) {
            violations.push_back("example " + ex.id + ": paragraph with empty title");
        }
        if (p.sentences.empty()) {
            violations.push_back("example " + ex.id + ": paragraph '" + p.title +
                                 "' has no sentences");
        }
        if (p.source_index < 0) {
            violations.push_back("example " + ex.id + ": paragraph '" + p.title +
                                 "' has negative source_index");
        }
        if (!source_indices.insert(p.source_index).second) {
            violations.push_back("example " + ex.id + ": duplicate source_index " +
                                 std::to_string(p.source_index));
        }
        if (!titles.insert(p.title).second) {
            violations.push_back("example " + ex.id + ": duplicate paragraph title '" +
                                 p.title + "'");
        }
    }
    for (const auto& [title, idx] : ex.gold_supports) {
        const Paragraph* p = ex.find_paragraph(title);
        if (p == nullptr) {
            violations.push_back("example " + ex.id + ": supporting fact ('" + title + "', " +
                                 std::to_string(idx) + ") names a missing paragraph");
        } else if (idx < 0 || static_cast<std::size_t>(idx) >= p->sentences.size()) {
            violations.push_back("example " + ex.id + ": supporting fact ('" + title + "', " +
                                 std::to_string(idx) + ") is out of range (paragraph has " +
                                 std::to_string(p->sentences.size()) + " sentences)");
        }
    }
    return violations;
}

namespace detail {

inline MultiHopExample parse_record(const nlohmann::json& rec) {
    MultiHopExample ex;
    std::string id = rec.contains("_id") && rec["_id"].is_string()
                         ? rec["_id"].get<std::string>()
                         : std::string("<missing _id>");
    auto field = [&](const char* name) -> const nlohmann::json& {
        auto it = rec.find(name);
        if (it == rec.end()) {
            throw ParseError("record " + id + ": missing field '" + name + "'");
        }
        return *it;
    };
    ex.id = id;
    try {
        ex.question = field("question").get<std::string>();
        ex.answer = field("answer").get<std::string>();
        const auto& ctx = field("context");
        if (!ctx.is_array()) {
            throw ParseError("record " + id + ": field 'context' is not an array");
        }
        int pos = 0;
        for (const auto& entry : ctx) {
            if (!entry.is_array() || entry.size() != 2) {
                throw ParseError("record " + id + ": malformed 'context' entry at index " +
                                 std::to_string(pos));
            }
            Paragraph p;
            p.title = entry[0].get<std::string>();
            for (const auto& s : entry[1]) {
                p.sentences.push_back(s.get<std::string>());
            }
            p.source_index = pos++;
            ex.paragraphs.push_back(std::move(p));
        }
        const auto& sf = field("supporting_facts");
        if (!sf.is_array()) {
            throw ParseError("record " + id + ": field 'supporting_facts' is not an array");
        }
        for (const auto& pair : sf) {
            if (!pair.is_array() || pair.size() != 2) {
                throw ParseError("record " + id + ": malformed 'supporting_facts' entry");
            }
            ex.gold_supports.emplace(pair[0].get<std::string>(), pair[1].get<int>());
        }
        if (rec.contains("type") && rec["type"].is_string()) {
            ex.qtype = rec["type"].get<std::string>();
        }
        if (rec.contains("level") && rec["level"].is_string()) {
            ex.level = rec["level"].get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("record " + id + ": " + e.what());
    }
    return ex;
}

}  // namespace detail

inline std::vector<MultiHopExample> load_dataset(const std::filesystem::path& path,
                                                 DatasetFormat /*format*/ = DatasetFormat::hotpot) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("dataset " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw ParseError("dataset " + path.string() + ": top-level value is not an array");
    }
    std::vector<MultiHopExample> out;
    out.reserve(doc.size());
    for (const auto& rec : doc) {
        MultiHopExample ex = detail::parse_record(rec);
        auto violations = validate_example(ex);
        if (!violations.empty()) {
            std::string msg = "dataset " + path.string() + ": invalid record";
            for (const auto& v : violations) {
                msg += "\n  " + v;
            }
            throw ValidationError(msg);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline nlohmann::json example_to_json(const MultiHopExample& ex) {
    nlohmann::json rec;
    rec["_id"] = ex.id;
    rec["question"] = ex.question;
    rec["answer"] = ex.answer;
    nlohmann::json sf = nlohmann::json::array();
    for (const auto& [title, idx] : ex.gold_supports) {
        sf.push_back(nlohmann::json::array({title, idx}));
    }
    rec["supporting_facts"] = std::move(sf);
    nlohmann::json ctx = nlohmann::json::array();
    for (const auto& p : ex.paragraphs) {
        ctx.push_back(nlohmann::json::array({p.title, p.sentences}));
    }
    rec["context"] = std::move(ctx);
    if (ex.qtype) {
        rec["type"] = *ex.qtype;
    }
    if (ex.level) {
        rec["level"] = *ex.level;
    }
    return rec;
}

// Emits the shared record layout; used for fixtures and round-trips.
inline void write_dataset(const std::filesystem::path& path,
                          const std::vector<MultiHopExample>& examples) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& ex : examples) {
        doc.push_back(example_to_json(ex));
    }
    write_file(path, doc.dump(1));
}

namespace detail {

// Position key used to chain gold paragraphs: earliest occurrence of the
// paragraph title in the question (full normalized title first, then any
// content token of the title), with source_index as the last tie-break.
inline std::pair<std::size_t, int> question_mention_key(const MultiHopExample& ex,
                                                        const Paragraph& p) {
    const std::string q_norm = text::normalize_answer(ex.question);
    const std::string t_norm = text::normalize_answer(p.title);
    std::size_t pos = std::string::npos;
    if (!t_norm.empty()) {
        pos = q_norm.find(t_norm);
    }
    if (pos == std::string::npos) {
        auto q_tokens = text::word_tokens_with_pos(ex.question);
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (const auto& tok : text::content_tokens(p.title)) {
            for (const auto& [qt, qpos] : q_tokens) {
                if (qt == tok) {
                    best = std::min(best, qpos);
                    break;
                }
            }
        }
        // Token positions are offset past any full-title match so that full
        // matches always order first.
        pos = best == std::numeric_limits<std::size_t>::max()
                  ? std::numeric_limits<std::size_t>::max()
                  : best + q_norm.size();
    }
    return {pos, p.source_index};
}

inline bool paragraph_contains_answer(const Paragraph& p, const std::string& answer) {
    const std::string needle = text::normalize_answer(answer);
    if (needle.empty()) {
        return false;
    }
    return text::normalize_answer(p.text()).find(needle) != std::string::npos;
}

}  // namespace detail

// Derives per-hop supervision from the gold supporting facts. Gold paragraphs
// are chained: when exactly one of them contains the answer string it becomes
// the final hop and the rest are ordered by their question mention; otherwise
// (yes/no answers, or the answer appearing in zero or several paragraphs) the
// whole chain is ordered by question mention. Chains longer than the K-1
// intermediate slots collapse their tail into the final hop.
inline HopSupervision derive_hop_labels(const MultiHopExample& ex, int max_hops) {
    if (max_hops < 2) {
        throw ContractError("derive_hop_labels: max_hops must be >= 2 (example " + ex.id + ")");
    }
    auto violations = validate_example(ex);
    if (!violations.empty()) {
        throw ValidationError("derive_hop_labels: invalid example " + ex.id + ": " +
                              violations.front());
    }

    if (ex.gold_supports.empty()) {
        throw ValidationError("derive_hop_labels: example " + ex.id + " has no supporting facts");
    }

    // Gold sentence sets grouped by paragraph, in source order.
    std::vector<const Paragraph*> gold_paragraphs;
    std::map<std::string, std::set<SupportFact>> by_title;
    for (const auto& fact : ex.gold_supports) {
        if (by_title.find(fact.first) == by_title.end()) {
            gold_paragraphs.push_back(ex.find_paragraph(fact.first));
        }
        by_title[fact.first].insert(fact);
    }
    std::sort(gold_paragraphs.begin(), gold_paragraphs.end(),
              [](const Paragraph* a, const Paragraph* b) {
                  return a->source_index < b->source_index;
              });

    const bool yes_no = ex.answer == "yes" || ex.answer == "no";
    const Paragraph* answer_paragraph = nullptr;
    if (!yes_no) {
        int holders = 0;
        for (const Paragraph* p : gold_paragraphs) {
            if (detail::paragraph_contains_answer(*p, ex.answer)) {
                ++holders;
                answer_paragraph = p;
            }
        }
        if (holders != 1) {
            answer_paragraph = nullptr;
        }
    }

    std::vector<const Paragraph*> chain;
    for (const Paragraph* p : gold_paragraphs) {
        if (p != answer_paragraph) {
            chain.push_back(p);
        }
    }
    std::stable_sort(chain.begin(), chain.end(),
                     [&](const Paragraph* a, const Paragraph* b) {
                         return detail::question_mention_key(ex, *a) <
                                detail::question_mention_key(ex, *b);
                     });
    if (answer_paragraph != nullptr) {
        chain.push_back(answer_paragraph);
    }

    HopSupervision sup;
    sup.max_hops = max_hops;
    const int m = static_cast<int>(chain.size());
    sup.end_hop = std::max(1, std::min(m - 1, max_hops - 1));
    sup.per_hop_sentence_labels.assign(static_cast<std::size_t>(max_hops - 1), {});
    sup.end_labels.assign(static_cast<std::size_t>(max_hops - 1), 0);
    sup.end_labels[static_cast<std::size_t>(sup.end_hop - 1)] = 1;
    for (int k = 1; k <= sup.end_hop; ++k) {
        // Degenerate single-paragraph chains label hop 1 with that paragraph.
        const Paragraph* p = chain[static_cast<std::size_t>(std::min(k - 1, m - 1))];
        sup.per_hop_sentence_labels[static_cast<std::size_t>(k - 1)] = by_title[p->title];
    }
    sup.final_labels = ex.gold_supports;
    return sup;
}

}  // namespace stepqa::datamodel
