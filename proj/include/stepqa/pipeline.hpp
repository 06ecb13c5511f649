#pragma once

// Dynamic stepwise inference: per-hop support prediction, end decision,
// sub question/answer message passing, then final answer decoding and the
// overall supporting-sentence output. Traces record every hop for
// explanation dumps.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stepqa/common.hpp"
#include "stepqa/decomposer.hpp"
#include "stepqa/encoding.hpp"
#include "stepqa/objective.hpp"
#include "stepqa/reader.hpp"

namespace stepqa::pipeline {

using datamodel::MultiHopExample;
using datamodel::SupportFact;
using encoding::EncodedSequence;
using encoding::SubQA;
using filter::RelevantContext;
using objective::TrainingConfig;
using reader::ReaderOutputs;

struct PipelineConfig {
    double support_threshold = 0.5;
    double end_threshold = 0.5;
    int max_answer_tokens = 30;
    int min_final_supports = 2;
    // Single-shot ablation: skip intermediate hops and run the final hop
    // with an empty message history.
    bool ablate_intermediate = false;
};

struct HopStep {
    int hop = 1;
    std::set<SupportFact> predicted_supports;
    std::string sub_question;
    std::string sub_answer;
    double end_prob = 0.0;
};

struct Prediction {
    std::string example_id;
    std::string answer;
    std::set<SupportFact> supports;
    std::vector<HopStep> trace;
};

// All sentences above the threshold; falls back to the single argmax
// sentence (lowest marker position on ties) when none clears it.
inline std::set<SupportFact> select_supports(const ReaderOutputs& outputs,
                                             const EncodedSequence& seq, double threshold) {
    if (outputs.sentence_probs.size() != seq.sent_positions.size()) {
        throw ContractError("select_supports: outputs are not aligned with the sequence");
    }
    if (seq.sent_positions.empty()) {
        std::cerr << "[stepqa] warning: selecting supports over a sequence with no sentences\n";
        return {};
    }
    std::set<SupportFact> out;
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < outputs.sentence_probs.size(); ++i) {
        if (outputs.sentence_probs[i] > threshold) {
            out.insert({seq.sent_positions[i].title, seq.sent_positions[i].sentence_index});
        }
        if (outputs.sentence_probs[i] > outputs.sentence_probs[argmax]) {
            argmax = i;
        }
    }
    if (out.empty()) {
        out.insert({seq.sent_positions[argmax].title, seq.sent_positions[argmax].sentence_index});
    }
    return out;
}

// Final-hop variant: enforces a minimum number of supporting sentences by
// topping up with the highest-probability remainder.
inline std::set<SupportFact> select_supports_min(const ReaderOutputs& outputs,
                                                 const EncodedSequence& seq, double threshold,
                                                 int min_supports) {
    std::set<SupportFact> out = select_supports(outputs, seq, threshold);
    if (static_cast<int>(out.size()) >= min_supports || seq.sent_positions.empty()) {
        return out;
    }
    std::vector<std::size_t> order(outputs.sentence_probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return outputs.sentence_probs[a] > outputs.sentence_probs[b];
    });
    for (std::size_t i : order) {
        if (static_cast<int>(out.size()) >= min_supports) {
            break;
        }
        out.insert({seq.sent_positions[i].title, seq.sent_positions[i].sentence_index});
    }
    return out;
}

inline bool end_decision(double end_prob, int hop, const TrainingConfig& cfg,
                         double end_threshold = 0.5) {
    if (hop > cfg.max_hops - 1) {
        throw ContractError("end_decision: hop exceeds K-1");
    }
    return end_prob > end_threshold || hop == cfg.max_hops - 1;
}

// Searches candidate (start, end) pairs for the highest start*end probability
// product. Real spans must start and end on word tokens of one paragraph and
// respect the length cap; the inserted yes/no tokens are zero-length
// candidates decoding to their literals.
inline std::string decode_answer(const ReaderOutputs& outputs, const EncodedSequence& seq,
                                 int max_answer_tokens,
                                 const std::vector<datamodel::Paragraph>& paragraphs) {
    if (!seq.is_final) {
        throw ContractError("decode_answer: sequence is not a final-hop encoding");
    }
    if (outputs.span_start.size() != seq.tokens.size() ||
        outputs.span_end.size() != seq.tokens.size()) {
        throw ContractError("decode_answer: span distributions are not aligned");
    }
    double best = -1.0;
    std::optional<std::pair<std::size_t, std::size_t>> best_pair;
    bool best_is_literal = false;
    std::string literal;
    auto consider_literal = [&](std::optional<std::size_t> pos, const char* word) {
        if (!pos) {
            return;
        }
        const double p = outputs.span_start[*pos] * outputs.span_end[*pos];
        if (p > best) {
            best = p;
            best_pair = {*pos, *pos};
            best_is_literal = true;
            literal = word;
        }
    };
    consider_literal(seq.yes_position, "yes");
    consider_literal(seq.no_position, "no");
    if (seq.context_span) {
        for (std::size_t x = seq.context_span->first; x <= seq.context_span->second; ++x) {
            if (!seq.offset_map[x]) {
                continue;
            }
            const std::size_t y_cap = std::min<std::size_t>(
                seq.context_span->second, x + static_cast<std::size_t>(max_answer_tokens) - 1);
            for (std::size_t y = x; y <= y_cap; ++y) {
                if (!seq.offset_map[y] ||
                    seq.offset_map[y]->paragraph != seq.offset_map[x]->paragraph) {
                    continue;
                }
                const double p = outputs.span_start[x] * outputs.span_end[y];
                if (p > best) {
                    best = p;
                    best_pair = {x, y};
                    best_is_literal = false;
                }
            }
        }
    }
    if (!best_pair) {
        throw ContractError("decode_answer: no valid answer candidate");
    }
    if (best_is_literal) {
        return literal;
    }
    const auto& start = *seq.offset_map[best_pair->first];
    const auto& end = *seq.offset_map[best_pair->second];
    if (start.paragraph < 0 || start.paragraph >= static_cast<int>(paragraphs.size())) {
        throw ContractError("decode_answer: span paragraph out of range");
    }
    const std::string para_text = paragraphs[static_cast<std::size_t>(start.paragraph)].text();
    return para_text.substr(start.begin, end.end - start.begin);
}

// The stepwise loop: at most K-1 intermediate hops, then one final hop with
// the accumulated sub question/answer history.
inline Prediction run_stepwise(const MultiHopExample& example, const RelevantContext& context,
                               const reader::Reader& rdr,
                               const decomposer::SubQuestionGenerator& generator,
                               const decomposer::SubAnswerer& answerer,
                               const TrainingConfig& cfg, const PipelineConfig& pcfg = {}) {
    Prediction pred;
    pred.example_id = example.id;
    std::vector<SubQA> history;
    try {
        if (!pcfg.ablate_intermediate) {
            for (int hop = 1; hop <= cfg.max_hops - 1; ++hop) {
                EncodedSequence seq = encoding::truncate(
                    encoding::build_sequence(hop, example.question, history, context, false),
                    static_cast<std::size_t>(cfg.max_seq_len));
                ReaderOutputs outputs = rdr.forward_one(seq);
                std::set<SupportFact> supports =
                    select_supports(outputs, seq, pcfg.support_threshold);
                const auto sentences = objective::support_sentences(context, supports);
                const auto qg_input = decomposer::make_qg_input(example.question, sentences);
                std::string q = decomposer::generate_subquestion(qg_input, generator);
                std::string a = decomposer::answer_subquestion(q, sentences, answerer);
                pred.trace.push_back(HopStep{hop, supports, q, a, outputs.end_prob});
                history.push_back(SubQA{std::move(q), std::move(a), hop});
                if (end_decision(outputs.end_prob, hop, cfg, pcfg.end_threshold)) {
                    break;
                }
            }
        }
        EncodedSequence final_seq = encoding::truncate(
            encoding::build_sequence(cfg.max_hops, example.question, history, context, true),
            static_cast<std::size_t>(cfg.max_seq_len));
        ReaderOutputs outputs = rdr.forward_one(final_seq);
        pred.answer = decode_answer(outputs, final_seq, pcfg.max_answer_tokens,
                                    context.paragraphs);
        pred.supports = select_supports_min(outputs, final_seq, pcfg.support_threshold,
                                            pcfg.min_final_supports);
    } catch (const Error& e) {
        throw Error("run_stepwise: example " + example.id + " failed after " +
                    std::to_string(pred.trace.size()) + " hop(s): " + e.what());
    }
    return pred;
}

// ---- prediction and trace files ----

struct PredictionFile {
    std::map<std::string, std::string> answer;
    std::map<std::string, std::vector<SupportFact>> sp;
};

inline nlohmann::json predictions_to_json(const std::vector<Prediction>& preds) {
    nlohmann::json answer = nlohmann::json::object();
    nlohmann::json sp = nlohmann::json::object();
    for (const auto& p : preds) {
        answer[p.example_id] = p.answer;
        nlohmann::json facts = nlohmann::json::array();
        for (const auto& [title, idx] : p.supports) {
            facts.push_back(nlohmann::json::array({title, idx}));
        }
        sp[p.example_id] = std::move(facts);
    }
    return nlohmann::json{{"answer", std::move(answer)}, {"sp", std::move(sp)}};
}

inline void write_predictions(const std::filesystem::path& path,
                              const std::vector<Prediction>& preds) {
    write_file(path, predictions_to_json(preds).dump(1) + "\n");
}

inline PredictionFile read_predictions(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("predictions " + path.string() + ": " + e.what());
    }
    PredictionFile out;
    for (auto it = doc.at("answer").begin(); it != doc.at("answer").end(); ++it) {
        out.answer[it.key()] = it.value().get<std::string>();
    }
    for (auto it = doc.at("sp").begin(); it != doc.at("sp").end(); ++it) {
        std::vector<SupportFact> facts;
        for (const auto& pair : it.value()) {
            facts.emplace_back(pair[0].get<std::string>(), pair[1].get<int>());
        }
        out.sp[it.key()] = std::move(facts);
    }
    return out;
}

inline nlohmann::json traces_to_json(const std::vector<Prediction>& preds) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& p : preds) {
        nlohmann::json steps = nlohmann::json::array();
        for (const auto& step : p.trace) {
            nlohmann::json supports = nlohmann::json::array();
            for (const auto& [title, idx] : step.predicted_supports) {
                supports.push_back(nlohmann::json::array({title, idx}));
            }
            steps.push_back({{"hop", step.hop},
                             {"supports", std::move(supports)},
                             {"sub_question", step.sub_question},
                             {"sub_answer", step.sub_answer},
                             {"end_prob", step.end_prob}});
        }
        doc[p.example_id] = std::move(steps);
    }
    return doc;
}

inline void write_traces(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
    write_file(path, traces_to_json(preds).dump(1) + "\n");
}

}  // namespace stepqa::pipeline
