#pragma once

// Tokenization and text normalization shared by the sequence builder, the
// decomposer, the paragraph filter and the evaluation metrics. Everything
// here is pure and deterministic.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace stepqa::text {

struct TokenSpan {
    std::string text;
    std::size_t begin = 0;  // character offsets into the source string
    std::size_t end = 0;
};

inline bool is_word_byte(unsigned char c) {
    // Bytes >= 0x80 keep multi-byte UTF-8 sequences inside one token.
    return std::isalnum(c) != 0 || c >= 0x80;
}

// Splits into alphanumeric runs and single punctuation characters.
inline std::vector<TokenSpan> tokenize_spans(std::string_view s) {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (is_word_byte(c)) {
            std::size_t j = i + 1;
            while (j < s.size() && is_word_byte(static_cast<unsigned char>(s[j]))) {
                ++j;
            }
            out.push_back({std::string(s.substr(i, j - i)), i, j});
            i = j;
        } else {
            out.push_back({std::string(s.substr(i, 1)), i, i + 1});
            ++i;
        }
    }
    return out;
}

inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    for (auto& t : tokenize_spans(s)) {
        out.push_back(std::move(t.text));
    }
    return out;
}

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Fixed 50-word stopword list used for prompt intersection and phrase overlap.
inline const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "a",    "an",    "the",  "is",    "are",  "was",  "were", "be",   "been", "being",
        "am",   "do",    "does", "did",   "have", "has",  "had",  "of",   "in",   "on",
        "at",   "to",    "for",  "from",  "by",   "with", "about", "as",  "into", "than",
        "and",  "or",    "but",  "not",   "no",   "so",   "if",    "then", "that", "this",
        "these", "those", "it",  "its",   "he",   "she",  "they",  "we",   "you",  "i"};
    return words;
}

inline bool is_stopword(std::string_view token) {
    return stopwords().count(lowercase(token)) > 0;
}

inline bool is_word_token(std::string_view token) {
    return !token.empty() && is_word_byte(static_cast<unsigned char>(token.front()));
}

// Lowercased word tokens with punctuation and stopwords removed.
inline std::vector<std::string> content_tokens(std::string_view s) {
    std::vector<std::string> out;
    for (const auto& tok : tokenize(s)) {
        if (!is_word_token(tok)) {
            continue;
        }
        std::string low = lowercase(tok);
        if (stopwords().count(low)) {
            continue;
        }
        out.push_back(std::move(low));
    }
    return out;
}

// Lowercased word tokens (stopwords kept), paired with their position in the
// token stream of `s`.
inline std::vector<std::pair<std::string, std::size_t>> word_tokens_with_pos(std::string_view s) {
    std::vector<std::pair<std::string, std::size_t>> out;
    std::size_t pos = 0;
    for (const auto& tok : tokenize(s)) {
        if (is_word_token(tok)) {
            out.emplace_back(lowercase(tok), pos);
        }
        ++pos;
    }
    return out;
}

// Adjacent lowercased word-token pairs where both members are non-stopwords.
// Punctuation tokens are removed before pairing.
inline std::vector<std::pair<std::string, std::string>> content_bigrams(std::string_view s) {
    std::vector<std::string> words;
    for (const auto& tok : tokenize(s)) {
        if (is_word_token(tok)) {
            words.push_back(lowercase(tok));
        }
    }
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
        if (!stopwords().count(words[i]) && !stopwords().count(words[i + 1])) {
            out.emplace_back(words[i], words[i + 1]);
        }
    }
    return out;
}

// True when `a` and `b` share at least one contiguous bigram of non-stopword
// tokens after lowercasing.
inline bool shares_phrase(std::string_view a, std::string_view b) {
    auto ba = content_bigrams(a);
    if (ba.empty()) {
        return false;
    }
    auto bb = content_bigrams(b);
    for (const auto& pa : ba) {
        for (const auto& pb : bb) {
            if (pa == pb) {
                return true;
            }
        }
    }
    return false;
}

// Answer normalization used by the official evaluation protocol: lowercase,
// strip punctuation, drop articles (a/an/the), collapse whitespace.
inline std::string normalize_answer(std::string_view s) {
    std::string lowered = lowercase(s);
    std::string no_punct;
    no_punct.reserve(lowered.size());
    for (unsigned char c : lowered) {
        if (std::ispunct(c)) {
            continue;
        }
        no_punct.push_back(static_cast<char>(c));
    }
    // Split on whitespace, drop articles, re-join with single spaces.
    std::string out;
    std::size_t i = 0;
    while (i < no_punct.size()) {
        while (i < no_punct.size() && std::isspace(static_cast<unsigned char>(no_punct[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < no_punct.size() && !std::isspace(static_cast<unsigned char>(no_punct[j]))) {
            ++j;
        }
        if (j > i) {
            std::string word = no_punct.substr(i, j - i);
            if (word != "a" && word != "an" && word != "the") {
                if (!out.empty()) {
                    out.push_back(' ');
                }
                out += word;
            }
        }
        i = j;
    }
    return out;
}

inline std::vector<std::string> normalized_answer_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string norm = normalize_answer(s);
    std::size_t i = 0;
    while (i < norm.size()) {
        std::size_t j = norm.find(' ', i);
        if (j == std::string::npos) {
            j = norm.size();
        }
        if (j > i) {
            out.push_back(norm.substr(i, j - i));
        }
        i = j + 1;
    }
    return out;
}

}  // namespace stepqa::text
