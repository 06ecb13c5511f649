#pragma once

// Hop-indexed token sequences for the reader. An intermediate hop renders as
//
//   [CLS] HOP=k [SEP] Q [SUB] q1 [BDG] a1 ... [SEP] [SENT] s11 [SENT] s12 ... [SEP] [SENT] s21 ... [SEP]
//
// and the final hop additionally inserts `yes no [SEP]` between the header
// and the context. Hop 1 has no sub question-answer history. A [SEP] also
// terminates the whole sequence (after the last paragraph).

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stepqa/common.hpp"
#include "stepqa/filter.hpp"
#include "stepqa/text.hpp"

namespace stepqa::encoding {

using datamodel::SupportFact;

inline constexpr const char* kCls = "[CLS]";
inline constexpr const char* kSep = "[SEP]";
inline constexpr const char* kSent = "[SENT]";
inline constexpr const char* kSub = "[SUB]";
inline constexpr const char* kBdg = "[BDG]";
inline constexpr const char* kYes = "yes";
inline constexpr const char* kNo = "no";

// HOP=k is a single atomic token per hop number.
inline std::string hop_token(int k) {
    return "HOP=" + std::to_string(k);
}

// Sub-answers longer than this many tokens are cut with a tail ellipsis to
// bound header growth across hops.
inline constexpr std::size_t kMaxSubAnswerTokens = 20;

struct SubQA {
    std::string question;  // q_k
    std::string answer;    // a_k
    int hop = 1;
};

struct SentMarker {
    std::size_t token_index = 0;
    std::string title;
    int sentence_index = 0;
};

struct TokenOrigin {
    int paragraph = 0;       // position within the relevant context
    std::size_t begin = 0;   // character range into Paragraph::text()
    std::size_t end = 0;
};

struct EncodedSequence {
    std::vector<std::string> tokens;
    std::size_t cls_position = 0;
    std::vector<SentMarker> sent_positions;
    std::optional<std::size_t> yes_position;
    std::optional<std::size_t> no_position;
    std::optional<std::pair<std::size_t, std::size_t>> context_span;  // inclusive token range
    int hop = 1;
    bool is_final = false;
    std::vector<std::optional<TokenOrigin>> offset_map;  // aligned with tokens
    std::size_t n_sentences = 0;                         // N_s
    std::vector<SupportFact> dropped;                    // sentences removed by truncation

    bool operator==(const EncodedSequence& other) const {
        auto key = [](const EncodedSequence& s) {
            return std::tie(s.tokens, s.cls_position, s.yes_position, s.no_position,
                            s.context_span, s.hop, s.is_final, s.n_sentences, s.dropped);
        };
        if (key(*this) != key(other)) {
            return false;
        }
        if (sent_positions.size() != other.sent_positions.size()) {
            return false;
        }
        for (std::size_t i = 0; i < sent_positions.size(); ++i) {
            const auto& a = sent_positions[i];
            const auto& b = other.sent_positions[i];
            if (a.token_index != b.token_index || a.title != b.title ||
                a.sentence_index != b.sentence_index) {
                return false;
            }
        }
        if (offset_map.size() != other.offset_map.size()) {
            return false;
        }
        for (std::size_t i = 0; i < offset_map.size(); ++i) {
            const auto& a = offset_map[i];
            const auto& b = other.offset_map[i];
            if (a.has_value() != b.has_value()) {
                return false;
            }
            if (a && (a->paragraph != b->paragraph || a->begin != b->begin || a->end != b->end)) {
                return false;
            }
        }
        return true;
    }
};

inline std::string render(const EncodedSequence& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        if (i) {
            out.push_back(' ');
        }
        out += seq.tokens[i];
    }
    return out;
}

inline EncodedSequence build_sequence(int hop, const std::string& question,
                                      const std::vector<SubQA>& history,
                                      const filter::RelevantContext& context, bool is_final) {
    if (hop < 1) {
        throw ContractError("build_sequence: hop must be >= 1");
    }
    int prev = 0;
    for (const auto& sub : history) {
        if (sub.hop <= prev || sub.hop >= hop) {
            throw ContractError("build_sequence: history hops must be strictly increasing and "
                                "precede the current hop");
        }
        prev = sub.hop;
    }

    EncodedSequence seq;
    seq.hop = hop;
    seq.is_final = is_final;
    auto push = [&seq](std::string tok, std::optional<TokenOrigin> origin = std::nullopt) {
        seq.tokens.push_back(std::move(tok));
        seq.offset_map.push_back(origin);
    };

    seq.cls_position = 0;
    push(kCls);
    push(hop_token(hop));
    push(kSep);
    for (auto& tok : text::tokenize(question)) {
        push(std::move(tok));
    }
    for (const auto& sub : history) {
        push(kSub);
        for (auto& tok : text::tokenize(sub.question)) {
            push(std::move(tok));
        }
        push(kBdg);
        auto answer_tokens = text::tokenize(sub.answer);
        if (answer_tokens.size() > kMaxSubAnswerTokens) {
            answer_tokens.resize(kMaxSubAnswerTokens);
            answer_tokens.push_back("...");
        }
        for (auto& tok : answer_tokens) {
            push(std::move(tok));
        }
    }
    push(kSep);
    if (is_final) {
        seq.yes_position = seq.tokens.size();
        push(kYes);
        seq.no_position = seq.tokens.size();
        push(kNo);
        push(kSep);
    }

    const std::size_t context_first = seq.tokens.size();
    for (int pi = 0; pi < static_cast<int>(context.paragraphs.size()); ++pi) {
        const auto& para = context.paragraphs[static_cast<std::size_t>(pi)];
        std::size_t char_base = 0;
        for (int j = 0; j < static_cast<int>(para.sentences.size()); ++j) {
            const std::string& sent = para.sentences[static_cast<std::size_t>(j)];
            SupportFact identity{para.title, j};
            auto it = context.origin.find({pi, j});
            if (it != context.origin.end()) {
                identity = it->second;
            }
            seq.sent_positions.push_back({seq.tokens.size(), identity.first, identity.second});
            push(kSent);
            for (auto& span : text::tokenize_spans(sent)) {
                push(std::move(span.text),
                     TokenOrigin{pi, char_base + span.begin, char_base + span.end});
            }
            char_base += sent.size();
        }
        push(kSep);
    }
    if (!context.paragraphs.empty()) {
        seq.context_span = {context_first, seq.tokens.size() - 1};
    }
    seq.n_sentences = seq.sent_positions.size();
    return seq;
}

namespace detail {

struct SentenceBlock {
    int paragraph = 0;  // ordinal within the context region
    SentMarker marker;
    std::vector<std::string> tokens;                         // excludes the marker
    std::vector<std::optional<TokenOrigin>> origins;
};

struct SequenceParts {
    std::vector<std::string> header;  // everything before the context region
    std::vector<SentenceBlock> sentences;
};

inline SequenceParts split_sequence(const EncodedSequence& seq) {
    SequenceParts parts;
    const std::size_t context_first =
        seq.context_span ? seq.context_span->first : seq.tokens.size();
    parts.header.assign(seq.tokens.begin(),
                        seq.tokens.begin() + static_cast<std::ptrdiff_t>(context_first));
    std::size_t next_marker = 0;
    int paragraph = 0;
    for (std::size_t i = context_first; i < seq.tokens.size(); ++i) {
        if (next_marker < seq.sent_positions.size() &&
            seq.sent_positions[next_marker].token_index == i) {
            parts.sentences.push_back({paragraph, seq.sent_positions[next_marker], {}, {}});
            ++next_marker;
            continue;
        }
        if (seq.tokens[i] == kSep) {
            ++paragraph;
            continue;
        }
        if (parts.sentences.empty()) {
            throw ContractError("truncate: context token precedes its sentence marker");
        }
        parts.sentences.back().tokens.push_back(seq.tokens[i]);
        parts.sentences.back().origins.push_back(seq.offset_map[i]);
    }
    return parts;
}

inline EncodedSequence assemble(const EncodedSequence& seq, const SequenceParts& parts,
                                std::size_t keep_sentences) {
    EncodedSequence out;
    out.hop = seq.hop;
    out.is_final = seq.is_final;
    out.cls_position = seq.cls_position;
    out.yes_position = seq.yes_position;
    out.no_position = seq.no_position;
    out.dropped = seq.dropped;
    out.tokens = parts.header;
    out.offset_map.assign(parts.header.size(), std::nullopt);

    const std::size_t context_first = out.tokens.size();
    int current_paragraph = -1;
    for (std::size_t s = 0; s < parts.sentences.size(); ++s) {
        const auto& block = parts.sentences[s];
        if (s >= keep_sentences) {
            out.dropped.push_back({block.marker.title, block.marker.sentence_index});
            continue;
        }
        if (block.paragraph != current_paragraph) {
            if (current_paragraph >= 0) {
                out.tokens.push_back(kSep);
                out.offset_map.push_back(std::nullopt);
            }
            current_paragraph = block.paragraph;
        }
        out.sent_positions.push_back(
            {out.tokens.size(), block.marker.title, block.marker.sentence_index});
        out.tokens.push_back(kSent);
        out.offset_map.push_back(std::nullopt);
        for (std::size_t t = 0; t < block.tokens.size(); ++t) {
            out.tokens.push_back(block.tokens[t]);
            out.offset_map.push_back(block.origins[t]);
        }
    }
    if (current_paragraph >= 0) {
        out.tokens.push_back(kSep);
        out.offset_map.push_back(std::nullopt);
        out.context_span = {context_first, out.tokens.size() - 1};
    }
    out.n_sentences = out.sent_positions.size();
    return out;
}

}  // namespace detail

// Drops whole trailing sentences until the sequence fits max_len. Dropped
// sentence identities accumulate in `dropped` so supervision can mask them.
inline EncodedSequence truncate(const EncodedSequence& seq, std::size_t max_len) {
    if (seq.tokens.size() <= max_len) {
        return seq;
    }
    const auto parts = detail::split_sequence(seq);
    if (parts.header.size() > max_len) {
        throw ContractError("truncate: header alone exceeds max_len (" +
                            std::to_string(parts.header.size()) + " > " +
                            std::to_string(max_len) + " tokens)");
    }
    for (std::size_t keep = parts.sentences.size(); keep-- > 0;) {
        EncodedSequence candidate = detail::assemble(seq, parts, keep);
        if (candidate.tokens.size() <= max_len) {
            return candidate;
        }
    }
    return detail::assemble(seq, parts, 0);
}

inline SupportFact sentence_lookup(const EncodedSequence& seq, std::size_t marker_index) {
    for (const auto& m : seq.sent_positions) {
        if (m.token_index == marker_index) {
            return {m.title, m.sentence_index};
        }
    }
    throw ContractError("sentence_lookup: token index " + std::to_string(marker_index) +
                        " is not a sentence marker");
}

// Special-token inventory shared with the generator/answerer tokenizers.
inline nlohmann::json token_manifest(int max_hops) {
    nlohmann::json manifest;
    manifest["special_tokens"] = {kCls, kSep, kSent, kSub, kBdg};
    nlohmann::json hops = nlohmann::json::array();
    for (int k = 1; k <= max_hops; ++k) {
        hops.push_back(hop_token(k));
    }
    manifest["hop_tokens"] = std::move(hops);
    manifest["answer_tokens"] = {kYes, kNo};
    return manifest;
}

inline std::string manifest_hash(int max_hops) {
    return to_hex(fnv1a64(token_manifest(max_hops).dump()));
}

inline void write_token_manifest(const std::filesystem::path& path, int max_hops) {
    write_file(path, token_manifest(max_hops).dump(1) + "\n");
}

}  // namespace stepqa::encoding
