#pragma once

// Paragraph relevance scoring and the dataset-specific context selection
// strategies. Scoring goes through a pluggable scorer handle; the 2-hop
// strategy additionally consults an optional hyperlink sidecar.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepqa/common.hpp"
#include "stepqa/datamodel.hpp"
#include "stepqa/text.hpp"

namespace stepqa::filter {

using datamodel::MultiHopExample;
using datamodel::Paragraph;
using datamodel::SupportFact;

struct ParagraphScore {
    int paragraph_ref = 0;  // source_index of the scored paragraph
    double score = 0.0;     // relevance probability in [0, 1]
};

// The question-relevant context C. `origin` maps retained (paragraph
// position, sentence index) pairs back to the original (title, sentence
// index) identity so labels survive filtering.
struct RelevantContext {
    std::vector<Paragraph> paragraphs;
    std::map<std::pair<int, int>, SupportFact> origin;

    static RelevantContext from_paragraphs(std::vector<Paragraph> picked) {
        RelevantContext ctx;
        ctx.paragraphs = std::move(picked);
        for (int pi = 0; pi < static_cast<int>(ctx.paragraphs.size()); ++pi) {
            const auto& p = ctx.paragraphs[static_cast<std::size_t>(pi)];
            for (int j = 0; j < static_cast<int>(p.sentences.size()); ++j) {
                ctx.origin[{pi, j}] = {p.title, j};
            }
        }
        return ctx;
    }
};

class RelevanceScorer {
public:
    virtual ~RelevanceScorer() = default;
    virtual std::vector<double> score(const std::string& question,
                                      const std::vector<Paragraph>& paragraphs) const = 0;
};

// Normalized word-overlap scorer: the fraction of the question's distinct
// content tokens that occur in the paragraph (title included).
class WordOverlapScorer final : public RelevanceScorer {
public:
    std::vector<double> score(const std::string& question,
                              const std::vector<Paragraph>& paragraphs) const override {
        std::set<std::string> q_tokens;
        for (auto& t : text::content_tokens(question)) {
            q_tokens.insert(std::move(t));
        }
        std::vector<double> out;
        out.reserve(paragraphs.size());
        for (const auto& p : paragraphs) {
            std::set<std::string> p_tokens;
            for (auto& t : text::content_tokens(p.title)) {
                p_tokens.insert(std::move(t));
            }
            for (const auto& s : p.sentences) {
                for (auto& t : text::content_tokens(s)) {
                    p_tokens.insert(std::move(t));
                }
            }
            std::size_t hits = 0;
            for (const auto& t : q_tokens) {
                if (p_tokens.count(t)) {
                    ++hits;
                }
            }
            out.push_back(static_cast<double>(hits) /
                          static_cast<double>(std::max<std::size_t>(1, q_tokens.size())));
        }
        return out;
    }
};

inline std::vector<ParagraphScore> score_paragraphs(const std::string& question,
                                                    const std::vector<Paragraph>& paragraphs,
                                                    const RelevanceScorer& scorer) {
    if (paragraphs.empty()) {
        throw ContractError("score_paragraphs: no paragraphs to score");
    }
    std::vector<double> raw = scorer.score(question, paragraphs);
    if (raw.size() != paragraphs.size()) {
        throw BackendError("score_paragraphs: scorer returned " + std::to_string(raw.size()) +
                           " scores for " + std::to_string(paragraphs.size()) + " paragraphs");
    }
    std::vector<ParagraphScore> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!(raw[i] >= 0.0 && raw[i] <= 1.0)) {
            throw BackendError("score_paragraphs: score out of [0,1] at paragraph " +
                               std::to_string(i));
        }
        out.push_back({paragraphs[i].source_index, raw[i]});
    }
    return out;
}

using HyperlinkMap = std::map<std::string, std::vector<std::string>>;

// Sidecar layout: one JSON object mapping paragraph title to linked titles.
inline HyperlinkMap load_hyperlinks(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("hyperlinks " + path.string() + ": " + e.what());
    }
    HyperlinkMap out;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        out[it.key()] = it.value().get<std::vector<std::string>>();
    }
    return out;
}

namespace detail {

inline std::vector<std::size_t> order_by_score(const std::vector<Paragraph>& paragraphs,
                                               const std::vector<ParagraphScore>& scores) {
    if (scores.size() != paragraphs.size()) {
        throw ContractError("selection: scores are not aligned with paragraphs");
    }
    std::vector<std::size_t> idx(paragraphs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a].score != scores[b].score) {
            return scores[a].score > scores[b].score;
        }
        return paragraphs[a].source_index < paragraphs[b].source_index;
    });
    return idx;
}

inline std::string paragraph_full_text(const Paragraph& p) {
    std::string t = p.title;
    for (const auto& s : p.sentences) {
        t += " ";
        t += s;
    }
    return t;
}

}  // namespace detail

// 2-hop selection strategy: highest-scoring paragraph sharing a phrase with
// the question, then its best-scored hyperlink target, then the next two by
// score. Absent or empty hyperlinks degrade to plain score order.
inline RelevantContext select_hotpot(const std::string& question,
                                     const std::vector<Paragraph>& paragraphs,
                                     const std::vector<ParagraphScore>& scores,
                                     const std::optional<HyperlinkMap>& hyperlinks = std::nullopt) {
    if (paragraphs.size() < 2) {
        throw ContractError("select_hotpot: need at least 2 candidate paragraphs, got " +
                            std::to_string(paragraphs.size()));
    }
    const auto order = detail::order_by_score(paragraphs, scores);
    std::vector<bool> picked(paragraphs.size(), false);
    std::vector<std::size_t> pick_order;

    // First hop: best scored paragraph with phrase overlap, else best overall.
    std::size_t first = order[0];
    for (std::size_t i : order) {
        if (text::shares_phrase(question, detail::paragraph_full_text(paragraphs[i]))) {
            first = i;
            break;
        }
    }
    picked[first] = true;
    pick_order.push_back(first);

    // Second hop: highest-scoring hyperlink target of the first pick.
    std::optional<std::size_t> second;
    if (hyperlinks) {
        auto it = hyperlinks->find(paragraphs[first].title);
        if (it != hyperlinks->end()) {
            for (std::size_t i : order) {
                if (picked[i]) {
                    continue;
                }
                if (std::find(it->second.begin(), it->second.end(), paragraphs[i].title) !=
                    it->second.end()) {
                    second = i;
                    break;
                }
            }
        }
    }
    if (!second) {
        for (std::size_t i : order) {
            if (!picked[i]) {
                second = i;
                break;
            }
        }
    }
    picked[*second] = true;
    pick_order.push_back(*second);

    // Two more by score.
    for (std::size_t i : order) {
        if (pick_order.size() >= 4) {
            break;
        }
        if (!picked[i]) {
            picked[i] = true;
            pick_order.push_back(i);
        }
    }

    std::vector<Paragraph> chosen;
    for (std::size_t i : pick_order) {
        chosen.push_back(paragraphs[i]);
    }
    return RelevantContext::from_paragraphs(std::move(chosen));
}

// Top-k selection (the 2~4-hop dataset strategy uses k = 5). Ties at the cut
// boundary are broken by ascending source_index.
inline RelevantContext select_topk(const std::vector<ParagraphScore>& scores,
                                   const std::vector<Paragraph>& paragraphs, int k) {
    if (k < 1) {
        throw ContractError("select_topk: k must be >= 1");
    }
    const auto order = detail::order_by_score(paragraphs, scores);
    std::vector<Paragraph> chosen;
    for (std::size_t i : order) {
        if (static_cast<int>(chosen.size()) >= k) {
            break;
        }
        chosen.push_back(paragraphs[i]);
    }
    return RelevantContext::from_paragraphs(std::move(chosen));
}

// Fraction of examples whose gold-support paragraphs all survive filtering.
inline double gold_recall(const std::vector<MultiHopExample>& examples,
                          const std::vector<RelevantContext>& contexts) {
    if (examples.size() != contexts.size()) {
        throw ContractError("gold_recall: examples and contexts differ in length");
    }
    if (examples.empty()) {
        return 0.0;
    }
    std::size_t covered = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        std::set<std::string> retained;
        for (const auto& p : contexts[i].paragraphs) {
            retained.insert(p.title);
        }
        bool all = true;
        for (const auto& [title, idx] : examples[i].gold_supports) {
            if (!retained.count(title)) {
                all = false;
                break;
            }
        }
        covered += all ? 1 : 0;
    }
    return static_cast<double>(covered) / static_cast<double>(examples.size());
}

}  // namespace stepqa::filter
