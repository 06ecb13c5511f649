#pragma once

// Grounded single-hop question generation and answering. Sub-questions are
// prompted with the tokens shared by the multi-hop question and the hop's
// supporting sentences; both the generator and the answerer sit behind
// handles with a deterministic rule-based stub and a trainable model each.

#include <algorithm>
#include <cstddef>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stepqa/common.hpp"
#include "stepqa/model.hpp"
#include "stepqa/reader.hpp"
#include "stepqa/seq2seq.hpp"
#include "stepqa/text.hpp"

namespace stepqa::decomposer {

// Case-folded, punctuation-stripped non-stopword tokens present in both the
// question and the supports, in question order, deduplicated.
inline std::vector<std::string> intersection_prompt(const std::string& question,
                                                    const std::vector<std::string>& supports) {
    std::set<std::string> support_tokens;
    for (const auto& s : supports) {
        for (auto& t : text::content_tokens(s)) {
            support_tokens.insert(std::move(t));
        }
    }
    std::vector<std::string> prompt;
    std::set<std::string> taken;
    for (const auto& tok : text::content_tokens(question)) {
        if (support_tokens.count(tok) && taken.insert(tok).second) {
            prompt.push_back(tok);
        }
    }
    return prompt;
}

struct PromptedQGInput {
    std::vector<std::string> prompt;     // Q ∩ S_k, question order
    std::vector<std::string> supports;   // S_k sentence texts
    std::string rendered;                // "[CLS] <prompt> [SEP] <supports> [SEP]"
};

inline std::string render_qg_input(const std::vector<std::string>& prompt,
                                   const std::vector<std::string>& supports) {
    std::string out = "[CLS]";
    for (const auto& t : prompt) {
        out += " " + t;
    }
    out += " [SEP]";
    for (const auto& s : supports) {
        out += " " + s;
    }
    out += " [SEP]";
    return out;
}

inline PromptedQGInput make_qg_input(const std::string& question,
                                     const std::vector<std::string>& supports) {
    PromptedQGInput inp;
    inp.prompt = intersection_prompt(question, supports);
    inp.supports = supports;
    inp.rendered = render_qg_input(inp.prompt, inp.supports);
    return inp;
}

class SubQuestionGenerator {
public:
    virtual ~SubQuestionGenerator() = default;
    virtual std::string generate(const PromptedQGInput& input) const = 0;
};

class SubAnswerer {
public:
    virtual ~SubAnswerer() = default;
    virtual std::string answer(const std::string& question,
                               const std::vector<std::string>& supports) const = 0;
};

namespace detail {

// The support sentence with the highest prompt-token coverage (earliest wins
// ties); falls back to the first sentence.
inline std::size_t answer_bearing_sentence(const PromptedQGInput& input) {
    std::size_t best = 0;
    std::size_t best_hits = 0;
    for (std::size_t i = 0; i < input.supports.size(); ++i) {
        std::set<std::string> toks;
        for (auto& t : text::content_tokens(input.supports[i])) {
            toks.insert(std::move(t));
        }
        std::size_t hits = 0;
        for (const auto& p : input.prompt) {
            if (toks.count(p)) {
                ++hits;
            }
        }
        if (hits > best_hits) {
            best_hits = hits;
            best = i;
        }
    }
    return best;
}

struct TokenRun {
    std::vector<std::string> tokens;  // original casing
    std::size_t start = 0;            // position in the sentence's word tokens
};

// Maximal runs of word tokens that are neither stopwords nor members of the
// exclusion set (lowercased comparison).
inline std::vector<TokenRun> novel_runs(const std::string& sentence,
                                        const std::set<std::string>& excluded) {
    std::vector<TokenRun> runs;
    std::size_t pos = 0;
    TokenRun current;
    bool open = false;
    for (const auto& tok : text::tokenize(sentence)) {
        const bool word = text::is_word_token(tok);
        const std::string low = text::lowercase(tok);
        const bool novel = word && !text::stopwords().count(low) && !excluded.count(low);
        if (novel) {
            if (!open) {
                current = TokenRun{{}, pos};
                open = true;
            }
            current.tokens.push_back(tok);
        } else if (open) {
            runs.push_back(current);
            open = false;
        }
        if (word) {
            ++pos;
        }
    }
    if (open) {
        runs.push_back(current);
    }
    return runs;
}

inline bool looks_like_year(const std::string& tok) {
    if (tok.size() != 4) {
        return false;
    }
    return std::all_of(tok.begin(), tok.end(),
                       [](unsigned char c) { return std::isdigit(c) != 0; });
}

}  // namespace detail

// Template generator: picks the answer-bearing support sentence, finds the
// most prominent span not covered by the prompt, and asks about the prompt
// with a cue-selected wh-word. Uses only tokens from the prompt, the
// supports, and the fixed template inventory.
class StubGenerator final : public SubQuestionGenerator {
public:
    static const std::vector<std::string>& template_inventory() {
        static const std::vector<std::string> words = {"what", "where", "when", "is", "?"};
        return words;
    }

    std::string generate(const PromptedQGInput& input) const override {
        if (input.prompt.empty()) {
            return subject_question(input);
        }
        std::string wh = "what";
        if (!input.supports.empty()) {
            const auto& sentence = input.supports[detail::answer_bearing_sentence(input)];
            std::set<std::string> excluded(input.prompt.begin(), input.prompt.end());
            auto runs = detail::novel_runs(sentence, excluded);
            if (!runs.empty()) {
                const auto& best = *std::max_element(
                    runs.begin(), runs.end(), [](const auto& a, const auto& b) {
                        if (a.tokens.size() != b.tokens.size()) {
                            return a.tokens.size() < b.tokens.size();
                        }
                        return a.start > b.start;  // earlier run wins ties
                    });
                wh = wh_for_run(sentence, best);
            }
        }
        std::string q = wh + " is";
        for (const auto& t : input.prompt) {
            q += " " + t;
        }
        q += "?";
        return q;
    }

private:
    static std::string wh_for_run(const std::string& sentence, const detail::TokenRun& run) {
        if (!run.tokens.empty() && detail::looks_like_year(run.tokens.front())) {
            return "when";
        }
        // Location cue: the word token immediately before the run.
        std::vector<std::string> words;
        for (const auto& tok : text::tokenize(sentence)) {
            if (text::is_word_token(tok)) {
                words.push_back(text::lowercase(tok));
            }
        }
        if (run.start > 0 && run.start - 1 < words.size()) {
            const std::string& prev = words[run.start - 1];
            if (prev == "at" || prev == "in" || prev == "on" || prev == "near") {
                return "where";
            }
        }
        return "what";
    }

    // Empty prompt: ask about the subject of the first support sentence (its
    // word tokens up to the first copula, capped at six).
    static std::string subject_question(const PromptedQGInput& input) {
        std::vector<std::string> subject;
        if (!input.supports.empty()) {
            static const std::set<std::string> copulas = {"is",  "are", "was", "were",
                                                          "has", "had", "have"};
            for (const auto& tok : text::tokenize(input.supports.front())) {
                if (!text::is_word_token(tok)) {
                    continue;
                }
                const std::string low = text::lowercase(tok);
                if (copulas.count(low)) {
                    break;
                }
                if (low == "the" || low == "a" || low == "an") {
                    continue;
                }
                subject.push_back(low);
                if (subject.size() >= 6) {
                    break;
                }
            }
        }
        std::string q = "what is";
        for (const auto& t : subject) {
            q += " " + t;
        }
        q += "?";
        return q;
    }
};

// Lexical-overlap span scorer: prefers the longest novel token run in the
// support sentence that best matches the question.
class StubAnswerer final : public SubAnswerer {
public:
    std::string answer(const std::string& question,
                       const std::vector<std::string>& supports) const override {
        std::set<std::string> q_tokens;
        for (const auto& tok : text::tokenize(question)) {
            if (text::is_word_token(tok)) {
                q_tokens.insert(text::lowercase(tok));
            }
        }
        std::string best_answer;
        long best_key[3] = {-1, -1, 1};  // (sentence overlap, run length, -index)
        for (const auto& sentence : supports) {
            long overlap = 0;
            for (const auto& t : text::content_tokens(sentence)) {
                if (q_tokens.count(t)) {
                    ++overlap;
                }
            }
            auto runs = detail::novel_runs(sentence, q_tokens);
            for (std::size_t r = 0; r < runs.size(); ++r) {
                auto tokens = runs[r].tokens;
                if (tokens.size() > 20) {
                    tokens.resize(20);
                }
                const long key[3] = {overlap, static_cast<long>(tokens.size()),
                                     -static_cast<long>(r)};
                if (std::lexicographical_compare(std::begin(best_key), std::end(best_key),
                                                 std::begin(key), std::end(key))) {
                    best_key[0] = key[0];
                    best_key[1] = key[1];
                    best_key[2] = key[2];
                    best_answer = join(tokens);
                }
            }
        }
        if (best_answer.empty()) {
            // Everything overlaps the question: fall back to the last word
            // token of the first support sentence.
            for (auto it = supports.begin(); it != supports.end(); ++it) {
                const auto toks = text::tokenize(*it);
                for (auto rit = toks.rbegin(); rit != toks.rend(); ++rit) {
                    if (text::is_word_token(*rit)) {
                        return *rit;
                    }
                }
            }
        }
        return best_answer;
    }

private:
    static std::string join(const std::vector<std::string>& tokens) {
        std::string out;
        for (const auto& t : tokens) {
            if (!out.empty()) {
                out.push_back(' ');
            }
            out += t;
        }
        return out;
    }
};

// Postprocessing shared by every generator: non-empty output ending in "?",
// with a prompt-based fallback for empty generations.
inline std::string generate_subquestion(const PromptedQGInput& input,
                                        const SubQuestionGenerator& generator) {
    std::string q = generator.generate(input);
    while (!q.empty() && std::isspace(static_cast<unsigned char>(q.back()))) {
        q.pop_back();
    }
    if (q.empty()) {
        std::cerr << "[stepqa] warning: empty sub-question generation, using prompt fallback\n";
        q = "what is";
        for (const auto& t : input.prompt) {
            q += " " + t;
        }
        q += "?";
        return q;
    }
    if (q.back() != '?') {
        q += "?";
    }
    return q;
}

inline std::string answer_subquestion(const std::string& question,
                                      const std::vector<std::string>& supports,
                                      const SubAnswerer& answerer) {
    if (supports.empty()) {
        std::cerr << "[stepqa] warning: answering without supports, returning empty answer\n";
        return "";
    }
    return answerer.answer(question, supports);
}

// ---- simple-question corpus ----

struct SimpleQARecord {
    std::string context_sentence;
    std::string question;
    std::string answer_text;
    std::size_t answer_start = 0;  // character offset into context_sentence
};

// Standard extractive-QA layout: array of records with fields `context`,
// `question`, `answer`, `answer_start`.
inline std::vector<SimpleQARecord> load_simple_corpus(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("simple corpus " + path.string() + ": " + e.what());
    }
    std::vector<SimpleQARecord> out;
    for (const auto& rec : doc) {
        SimpleQARecord r;
        r.context_sentence = rec.at("context").get<std::string>();
        r.question = rec.at("question").get<std::string>();
        r.answer_text = rec.at("answer").get<std::string>();
        r.answer_start = rec.value("answer_start", std::size_t{0});
        if (r.context_sentence.find(r.answer_text) == std::string::npos) {
            throw ValidationError("simple corpus: answer '" + r.answer_text +
                                  "' does not occur in its context sentence");
        }
        out.push_back(std::move(r));
    }
    return out;
}

// One (prompted input, target question) pair per record, mirroring the
// inference-time prompt construction.
inline std::vector<std::pair<std::string, std::string>> build_qg_pretraining(
    const std::vector<SimpleQARecord>& corpus) {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(corpus.size());
    for (const auto& rec : corpus) {
        auto inp = make_qg_input(rec.question, {rec.context_sentence});
        out.emplace_back(inp.rendered, rec.question);
    }
    return out;
}

// ---- trainable implementations ----

class NeuralGenerator final : public SubQuestionGenerator {
public:
    explicit NeuralGenerator(nn::Seq2Seq model) : model_(std::move(model)) {}

    static NeuralGenerator for_corpus(const std::vector<std::pair<std::string, std::string>>& pairs,
                                      nn::TransformerConfig cfg) {
        std::vector<std::string> texts;
        for (const auto& [in, tgt] : pairs) {
            texts.push_back(in);
            texts.push_back(tgt);
        }
        return NeuralGenerator(nn::Seq2Seq(nn::Seq2Seq::build_vocab(texts), cfg));
    }

    std::string generate(const PromptedQGInput& input) const override {
        return model_.generate_text(input.rendered);
    }

    double fit(const std::vector<std::pair<std::string, std::string>>& pairs,
               const nn::Seq2SeqFitOptions& opt) {
        return model_.fit(pairs, opt);
    }

    const nn::Seq2Seq& model() const { return model_; }
    void save(const std::filesystem::path& dir) const { model_.save(dir); }
    static NeuralGenerator load(const std::filesystem::path& dir) {
        return NeuralGenerator(nn::Seq2Seq::load(dir));
    }

private:
    nn::Seq2Seq model_;
};

// Extractive single-hop answerer: encoder with span start/end heads over a
// `[CLS] question [SEP] supports [SEP]` sequence.
class NeuralAnswerer final : public SubAnswerer {
public:
    NeuralAnswerer(nn::Vocabulary vocab, nn::TransformerConfig cfg)
        : vocab_(std::move(vocab)), encoder_(with_vocab(cfg, vocab_.size())) {
        nn::NormalSampler sampler(cfg.seed + 31337);
        heads_.add("start.w", nn::randn(encoder_.config().width, 1, 0.02, sampler));
        heads_.add("start.b", nn::Matrix::Zero(1, 1));
        heads_.add("end.w", nn::randn(encoder_.config().width, 1, 0.02, sampler));
        heads_.add("end.b", nn::Matrix::Zero(1, 1));
    }

    static nn::Vocabulary build_vocab(const std::vector<SimpleQARecord>& corpus) {
        nn::Vocabulary v;
        v.add("[CLS]");
        v.add("[SEP]");
        for (const auto& rec : corpus) {
            for (const auto& t : text::tokenize(rec.context_sentence)) {
                v.add(t);
            }
            for (const auto& t : text::tokenize(rec.question)) {
                v.add(t);
            }
        }
        return v;
    }

    std::string answer(const std::string& question,
                       const std::vector<std::string>& supports) const override {
        const Encoded enc = encode(question, supports);
        if (enc.context_token_count == 0) {
            return "";
        }
        auto [log_start, log_end] = span_logprobs(enc);
        // Argmax over start*end with start <= end, length <= 20 tokens,
        // within one support sentence.
        double best = -std::numeric_limits<double>::infinity();
        std::pair<std::size_t, std::size_t> best_pair{0, 0};
        bool found = false;
        for (std::size_t x = 0; x < enc.tokens.size(); ++x) {
            if (!enc.origin[x]) {
                continue;
            }
            for (std::size_t y = x; y < std::min(enc.tokens.size(), x + 20); ++y) {
                if (!enc.origin[y] || enc.origin[y]->first != enc.origin[x]->first) {
                    continue;
                }
                const double score = log_start(static_cast<Eigen::Index>(x)) +
                                     log_end(static_cast<Eigen::Index>(y));
                if (score > best) {
                    best = score;
                    best_pair = {x, y};
                    found = true;
                }
            }
        }
        if (!found) {
            return "";
        }
        const std::size_t sentence = enc.origin[best_pair.first]->first;
        const std::size_t begin = enc.origin[best_pair.first]->second.first;
        const std::size_t end = enc.origin[best_pair.second]->second.second;
        return supports[sentence].substr(begin, end - begin);
    }

    // Trains the span heads (and encoder) on the simple-question corpus.
    double fit(const std::vector<SimpleQARecord>& corpus, int epochs, double lr, int batch_size,
               std::uint64_t seed) {
        if (corpus.empty()) {
            throw ContractError("NeuralAnswerer::fit: empty corpus");
        }
        nn::Adam adam(parameters());
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), 0);
        double last = 0.0;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t at = 0; at < order.size();
                 at += static_cast<std::size_t>(batch_size)) {
                std::vector<nn::Var> losses;
                for (std::size_t b = at;
                     b < std::min(order.size(), at + static_cast<std::size_t>(batch_size)); ++b) {
                    auto l = example_loss(corpus[order[b]]);
                    if (l) {
                        losses.push_back(*l);
                    }
                }
                if (losses.empty()) {
                    continue;
                }
                nn::Var loss =
                    nn::scale(nn::sum_scalars(losses), 1.0 / static_cast<double>(losses.size()));
                nn::backward(loss);
                adam.step(lr, 1.0);
                last = nn::scalar(loss);
                if (!std::isfinite(last)) {
                    throw Error("NeuralAnswerer::fit: non-finite loss");
                }
            }
        }
        return last;
    }

    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json cfg;
        cfg["backbone"] = encoder_.config().to_json();
        write_file(dir / "config.json", cfg.dump(1) + "\n");
        write_file(dir / "vocab.json", vocab_.to_json().dump() + "\n");
        std::ofstream out(dir / "params.bin", std::ios::binary);
        encoder_.params().save(out);
        heads_.save(out);
    }

    static NeuralAnswerer load(const std::filesystem::path& dir) {
        nlohmann::json cfg = nlohmann::json::parse(read_file(dir / "config.json"));
        auto backbone = nn::TransformerConfig::from_json(cfg.at("backbone"));
        auto vocab =
            nn::Vocabulary::from_json(nlohmann::json::parse(read_file(dir / "vocab.json")));
        NeuralAnswerer model(std::move(vocab), backbone);
        std::ifstream in(dir / "params.bin", std::ios::binary);
        if (!in) {
            throw ParseError("NeuralAnswerer: missing params.bin in " + dir.string());
        }
        model.encoder_.params().load(in);
        model.heads_.load(in);
        return model;
    }

    std::vector<nn::Var> parameters() const {
        std::vector<nn::Var> out = encoder_.params().vars();
        for (const auto& v : heads_.vars()) {
            out.push_back(v);
        }
        return out;
    }

private:
    struct Encoded {
        std::vector<std::string> tokens;
        // (support sentence index, [begin, end) character range)
        std::vector<std::optional<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>>>
            origin;
        std::size_t context_token_count = 0;
    };

    static nn::TransformerConfig with_vocab(nn::TransformerConfig cfg, int vocab_size) {
        cfg.vocab_size = vocab_size;
        return cfg;
    }

    Encoded encode(const std::string& question, const std::vector<std::string>& supports) const {
        Encoded enc;
        auto push = [&](std::string tok,
                        std::optional<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>>
                            origin = std::nullopt) {
            enc.tokens.push_back(std::move(tok));
            enc.origin.push_back(origin);
        };
        push("[CLS]");
        for (auto& t : text::tokenize(question)) {
            push(std::move(t));
        }
        push("[SEP]");
        for (std::size_t si = 0; si < supports.size(); ++si) {
            for (auto& span : text::tokenize_spans(supports[si])) {
                push(std::move(span.text), std::make_pair(si, std::make_pair(span.begin, span.end)));
                ++enc.context_token_count;
            }
        }
        push("[SEP]");
        const std::size_t cap = static_cast<std::size_t>(encoder_.config().max_len);
        if (enc.tokens.size() > cap) {
            enc.tokens.resize(cap);
            enc.origin.resize(cap);
        }
        return enc;
    }

    std::pair<Eigen::VectorXd, Eigen::VectorXd> span_logprobs(const Encoded& enc) const {
        nn::Var hidden = encoder_.forward(vocab_.encode(enc.tokens));
        std::vector<std::uint8_t> allowed(enc.tokens.size(), 0);
        for (std::size_t i = 0; i < enc.tokens.size(); ++i) {
            allowed[i] = enc.origin[i].has_value() ? 1 : 0;
        }
        nn::Var ls = nn::log_softmax_masked(
            nn::add_rowvec(nn::matmul(hidden, heads_.get("start.w")), heads_.get("start.b")),
            allowed);
        nn::Var le = nn::log_softmax_masked(
            nn::add_rowvec(nn::matmul(hidden, heads_.get("end.w")), heads_.get("end.b")), allowed);
        return {ls->value.col(0), le->value.col(0)};
    }

    std::optional<nn::Var> example_loss(const SimpleQARecord& rec) const {
        const Encoded enc = encode(rec.question, {rec.context_sentence});
        // Locate the answer tokens by character range.
        const std::size_t a_begin = rec.answer_start;
        const std::size_t a_end = a_begin + rec.answer_text.size();
        std::optional<std::size_t> x, y;
        for (std::size_t i = 0; i < enc.tokens.size(); ++i) {
            if (!enc.origin[i]) {
                continue;
            }
            const auto& [si, range] = *enc.origin[i];
            if (range.first >= a_begin && range.second <= a_end) {
                if (!x) {
                    x = i;
                }
                y = i;
            }
        }
        if (!x || !y) {
            return std::nullopt;  // answer fell outside the encoded window
        }
        nn::Var hidden = encoder_.forward(vocab_.encode(enc.tokens));
        std::vector<std::uint8_t> allowed(enc.tokens.size(), 0);
        for (std::size_t i = 0; i < enc.tokens.size(); ++i) {
            allowed[i] = enc.origin[i].has_value() ? 1 : 0;
        }
        nn::Var ls = nn::log_softmax_masked(
            nn::add_rowvec(nn::matmul(hidden, heads_.get("start.w")), heads_.get("start.b")),
            allowed);
        nn::Var le = nn::log_softmax_masked(
            nn::add_rowvec(nn::matmul(hidden, heads_.get("end.w")), heads_.get("end.b")), allowed);
        return reader::loss_span_v(ls, le, *x, *y);
    }

    nn::Vocabulary vocab_;
    nn::TransformerEncoder encoder_;
    nn::ParamStore heads_;
};

}  // namespace stepqa::decomposer
