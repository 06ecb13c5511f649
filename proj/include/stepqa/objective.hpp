#pragma once

// Joint training objective and loop. The total loss combines the masked
// average of intermediate supporting-fact losses, the average end-prediction
// loss over hops up to the end hop, the final supporting-fact loss, and the
// span loss:
//
//   L = lambda1 * L_sf_int + lambda2 * L_end_int + lambda3 * L_sf_final + L_span
//
// Hops past the end hop are never reached during training, so their
// supporting-fact losses carry zero weight in the intermediate average.
// Also hosts the two exposure-bias mitigation pipelines: re-predicting
// training supports with an intermediate-only reader, and building
// generator-repair pairs whose targets depend only on gold supports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stepqa/common.hpp"
#include "stepqa/datamodel.hpp"
#include "stepqa/decomposer.hpp"
#include "stepqa/encoding.hpp"
#include "stepqa/filter.hpp"
#include "stepqa/reader.hpp"

namespace stepqa::objective {

using datamodel::HopSupervision;
using datamodel::MultiHopExample;
using datamodel::SupportFact;
using encoding::EncodedSequence;
using encoding::SubQA;
using filter::RelevantContext;

struct TrainingConfig {
    int max_hops = 2;  // K
    double lambda1 = 10.0;
    double lambda2 = 2.0;
    double lambda3 = 5.0;
    int batch_size = 48;
    int epochs = 10;
    double learning_rate = 3e-5;
    double warmup_fraction = 0.1;
    int max_seq_len = 512;
    std::uint64_t seed = 42;

    void validate() const {
        if (max_hops < 2) {
            throw ContractError("TrainingConfig: max_hops must be >= 2");
        }
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) {
            throw ContractError("TrainingConfig: loss weights must be nonnegative");
        }
    }
};

// Published defaults for the 2-hop benchmark.
inline TrainingConfig hotpot_defaults() {
    TrainingConfig cfg;
    cfg.max_hops = 2;
    cfg.lambda1 = 10.0;
    cfg.lambda2 = 2.0;
    cfg.lambda3 = 5.0;
    cfg.batch_size = 48;
    cfg.epochs = 10;
    cfg.learning_rate = 3e-5;
    return cfg;
}

// Published defaults for the 2~4-hop benchmark.
inline TrainingConfig twowiki_defaults() {
    TrainingConfig cfg;
    cfg.max_hops = 4;
    cfg.lambda1 = 5.0;
    cfg.lambda2 = 2.0;
    cfg.lambda3 = 5.0;
    cfg.batch_size = 24;
    cfg.epochs = 5;
    cfg.learning_rate = 5e-5;
    return cfg;
}

struct LossBreakdown {
    std::vector<double> per_hop_sf;   // K-1 entries
    std::vector<double> per_hop_end;  // K-1 entries
    double final_sf = 0.0;
    double span = 0.0;
    double int_sf = 0.0;
    double int_end = 0.0;
    double total = 0.0;

    nlohmann::json to_json() const {
        return {{"per_hop_sf", per_hop_sf}, {"per_hop_end", per_hop_end},
                {"final_sf", final_sf},     {"span", span},
                {"int_sf", int_sf},         {"int_end", int_end},
                {"total", total}};
    }
};

// Combines per-hop components into the weighted joint loss. `end_labels` is
// the one-hot end supervision over hops 1..K-1; a hop contributes to the
// intermediate averages only while reasoning has not yet ended, so entries
// past the end hop are masked out entirely.
inline LossBreakdown joint_loss(const std::vector<double>& per_hop_sf,
                                const std::vector<double>& per_hop_end,
                                const std::vector<int>& end_labels, double final_sf, double span,
                                const TrainingConfig& cfg) {
    cfg.validate();
    const auto slots = static_cast<std::size_t>(cfg.max_hops - 1);
    if (per_hop_sf.size() != slots || per_hop_end.size() != slots ||
        end_labels.size() != slots) {
        throw ContractError("joint_loss: lists must have K-1 entries");
    }
    int end_hop = 0;
    for (std::size_t k = 0; k < slots; ++k) {
        if (end_labels[k] == 1) {
            if (end_hop != 0) {
                throw ContractError("joint_loss: multiple end labels set");
            }
            end_hop = static_cast<int>(k) + 1;
        }
    }
    if (end_hop == 0) {
        throw ContractError("joint_loss: no end label set");
    }

    LossBreakdown out;
    out.per_hop_sf = per_hop_sf;
    out.per_hop_end = per_hop_end;
    out.final_sf = final_sf;
    out.span = span;
    double sf_sum = 0.0;
    double end_sum = 0.0;
    for (int k = 1; k <= end_hop; ++k) {
        sf_sum += per_hop_sf[static_cast<std::size_t>(k - 1)];
        end_sum += per_hop_end[static_cast<std::size_t>(k - 1)];
    }
    out.int_sf = sf_sum / static_cast<double>(end_hop);
    out.int_end = end_sum / static_cast<double>(end_hop);
    out.total = cfg.lambda1 * out.int_sf + cfg.lambda2 * out.int_end + cfg.lambda3 * out.final_sf +
                out.span;
    return out;
}

// ---- teacher-forced input construction ----

// Sentence texts for a support set, ordered by paragraph position in the
// retained context, then sentence index.
inline std::vector<std::string> support_sentences(const RelevantContext& ctx,
                                                  const std::set<SupportFact>& supports) {
    std::vector<std::string> out;
    for (std::size_t pi = 0; pi < ctx.paragraphs.size(); ++pi) {
        const auto& para = ctx.paragraphs[pi];
        for (int j = 0; j < static_cast<int>(para.sentences.size()); ++j) {
            SupportFact identity{para.title, j};
            auto it = ctx.origin.find({static_cast<int>(pi), j});
            if (it != ctx.origin.end()) {
                identity = it->second;
            }
            if (supports.count(identity)) {
                out.push_back(para.sentences[static_cast<std::size_t>(j)]);
            }
        }
    }
    return out;
}

// Builds the per-hop (S_k, q_k, a_k) message chain used as training input,
// applying the generator/answerer to the given per-hop supports.
inline std::vector<SubQA> build_teacher_qa(const MultiHopExample& ex, const RelevantContext& ctx,
                                           const std::vector<std::set<SupportFact>>& hop_supports,
                                           int end_hop,
                                           const decomposer::SubQuestionGenerator& generator,
                                           const decomposer::SubAnswerer& answerer) {
    std::vector<SubQA> out;
    for (int k = 1; k <= end_hop; ++k) {
        const auto& supports = hop_supports[static_cast<std::size_t>(k - 1)];
        const auto sentences = support_sentences(ctx, supports);
        const auto input = decomposer::make_qg_input(ex.question, sentences);
        std::string q = decomposer::generate_subquestion(input, generator);
        std::string a = decomposer::answer_subquestion(q, sentences, answerer);
        out.push_back(SubQA{std::move(q), std::move(a), k});
    }
    return out;
}

struct PreparedExample {
    MultiHopExample example;
    HopSupervision supervision;
    RelevantContext context;
    std::vector<SubQA> teacher_qa;  // hops 1..end_hop
};

// ---- encoded training records ----

namespace detail {

struct EncodedHop {
    EncodedSequence seq;
    std::vector<int> labels;  // per retained sentence
    std::vector<int> mask;    // 1 for every retained sentence
    int end_label = 0;
};

struct EncodedRecord {
    std::string id;
    std::vector<EncodedHop> hops;  // hops 1..end_hop
    EncodedSequence final_seq;
    std::vector<int> final_labels;
    std::vector<int> final_mask;
    std::optional<std::pair<std::size_t, std::size_t>> span_label;
    int end_hop = 1;
};

inline std::vector<int> sentence_labels(const EncodedSequence& seq,
                                        const std::set<SupportFact>& gold) {
    std::vector<int> labels;
    labels.reserve(seq.sent_positions.size());
    for (const auto& m : seq.sent_positions) {
        labels.push_back(gold.count({m.title, m.sentence_index}) ? 1 : 0);
    }
    return labels;
}

// Finds the gold answer as a token subsequence of the final-hop context
// (case-insensitive), preferring occurrences inside gold-support sentences.
inline std::optional<std::pair<std::size_t, std::size_t>> locate_answer(
    const EncodedSequence& seq, const std::string& answer, const std::set<SupportFact>& gold) {
    if (answer == "yes") {
        return seq.yes_position ? std::optional(std::pair{*seq.yes_position, *seq.yes_position})
                                : std::nullopt;
    }
    if (answer == "no") {
        return seq.no_position ? std::optional(std::pair{*seq.no_position, *seq.no_position})
                               : std::nullopt;
    }
    const auto needle = text::tokenize(text::lowercase(answer));
    if (needle.empty() || !seq.context_span) {
        return std::nullopt;
    }
    // Sentence identity per token index, for the gold-sentence preference.
    auto sentence_of = [&](std::size_t token_index) -> std::optional<SupportFact> {
        std::optional<SupportFact> current;
        for (const auto& m : seq.sent_positions) {
            if (m.token_index <= token_index) {
                current = SupportFact{m.title, m.sentence_index};
            } else {
                break;
            }
        }
        return current;
    };
    std::optional<std::pair<std::size_t, std::size_t>> first_any;
    for (std::size_t i = seq.context_span->first; i + needle.size() - 1 <= seq.context_span->second;
         ++i) {
        bool match = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (!seq.offset_map[i + j] || text::lowercase(seq.tokens[i + j]) != needle[j]) {
                match = false;
                break;
            }
        }
        if (!match) {
            continue;
        }
        const std::pair<std::size_t, std::size_t> found{i, i + needle.size() - 1};
        if (!first_any) {
            first_any = found;
        }
        auto sent = sentence_of(i);
        if (sent && gold.count(*sent)) {
            return found;
        }
    }
    return first_any;
}

inline EncodedRecord encode_record(const PreparedExample& rec, const TrainingConfig& cfg) {
    EncodedRecord enc;
    enc.id = rec.example.id;
    enc.end_hop = rec.supervision.end_hop;
    std::vector<SubQA> history;
    for (int k = 1; k <= rec.supervision.end_hop; ++k) {
        EncodedSequence seq = encoding::truncate(
            encoding::build_sequence(k, rec.example.question, history, rec.context, false),
            static_cast<std::size_t>(cfg.max_seq_len));
        EncodedHop hop;
        hop.labels = sentence_labels(
            seq, rec.supervision.per_hop_sentence_labels[static_cast<std::size_t>(k - 1)]);
        hop.mask.assign(hop.labels.size(), 1);
        hop.end_label = rec.supervision.end_labels[static_cast<std::size_t>(k - 1)];
        hop.seq = std::move(seq);
        enc.hops.push_back(std::move(hop));
        if (k <= static_cast<int>(rec.teacher_qa.size())) {
            history.push_back(rec.teacher_qa[static_cast<std::size_t>(k - 1)]);
        }
    }
    enc.final_seq = encoding::truncate(
        encoding::build_sequence(cfg.max_hops, rec.example.question, history, rec.context, true),
        static_cast<std::size_t>(cfg.max_seq_len));
    enc.final_labels = sentence_labels(enc.final_seq, rec.supervision.final_labels);
    enc.final_mask.assign(enc.final_labels.size(), 1);
    enc.span_label =
        locate_answer(enc.final_seq, rec.example.answer, rec.supervision.final_labels);
    return enc;
}

}  // namespace detail

enum class TrainMode {
    full,
    // Intermediate-only: the separate reader of the bias pipeline. Final
    // supporting-fact loss weight is forced to zero and the span loss is
    // excluded.
    intermediate_only,
};

struct TrainStats {
    long steps = 0;
    double final_loss = 0.0;
    std::size_t skipped_span_labels = 0;  // answers not locatable in the context
};

// Jointly trains the reader over all hop sequences. Deterministic for a
// fixed seed. Per-step loss breakdowns stream to `loss_log` as JSON lines.
inline TrainStats train(const std::vector<PreparedExample>& records, const TrainingConfig& cfg,
                        reader::Reader& rdr, TrainMode mode = TrainMode::full,
                        std::ostream* loss_log = nullptr, nn::Adam* optimizer = nullptr,
                        long total_steps_override = 0) {
    cfg.validate();
    if (records.empty()) {
        throw ContractError("train: no training records");
    }
    std::vector<detail::EncodedRecord> encoded;
    encoded.reserve(records.size());
    TrainStats stats;
    for (const auto& rec : records) {
        encoded.push_back(detail::encode_record(rec, cfg));
        if (!encoded.back().span_label && mode == TrainMode::full) {
            ++stats.skipped_span_labels;
        }
    }

    std::optional<nn::Adam> local_adam;
    if (optimizer == nullptr) {
        local_adam.emplace(rdr.parameters());
        optimizer = &*local_adam;
    }
    const long steps_per_epoch = static_cast<long>(
        (encoded.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
        static_cast<std::size_t>(cfg.batch_size));
    const long total_steps = total_steps_override > 0
                                 ? total_steps_override
                                 : steps_per_epoch * static_cast<long>(cfg.epochs);

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);

    const double lambda3 = mode == TrainMode::intermediate_only ? 0.0 : cfg.lambda3;
    const bool use_span = mode == TrainMode::full;

    while (optimizer->step_count() < total_steps) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t at = 0; at < order.size() && optimizer->step_count() < total_steps;
             at += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<nn::Var> example_losses;
            LossBreakdown mean_breakdown;
            mean_breakdown.per_hop_sf.assign(static_cast<std::size_t>(cfg.max_hops - 1), 0.0);
            mean_breakdown.per_hop_end.assign(static_cast<std::size_t>(cfg.max_hops - 1), 0.0);
            std::size_t batch_n = 0;
            for (std::size_t b = at;
                 b < std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size)); ++b) {
                const auto& rec = encoded[order[b]];
                ++batch_n;
                std::vector<nn::Var> weighted;
                double sf_sum = 0.0;
                double end_sum = 0.0;
                std::vector<nn::Var> sf_terms;
                std::vector<nn::Var> end_terms;
                std::vector<double> hop_sf_scalars;
                std::vector<double> hop_end_scalars;
                // With both intermediate weights at zero (single-shot
                // ablation) the hop forwards contribute nothing.
                const bool run_intermediate = cfg.lambda1 > 0.0 || cfg.lambda2 > 0.0;
                if (run_intermediate) {
                    for (const auto& hop : rec.hops) {
                        auto fwd = rdr.forward_train(hop.seq);
                        double sf_scalar = 0.0;
                        if (fwd.sentence_probs) {
                            nn::Var l =
                                reader::loss_sf_v(fwd.sentence_probs, hop.labels, hop.mask);
                            sf_terms.push_back(l);
                            sf_scalar = nn::scalar(l);
                            sf_sum += sf_scalar;
                        }
                        hop_sf_scalars.push_back(sf_scalar);
                        nn::Var le = reader::loss_end_v(fwd.end_prob, hop.end_label);
                        end_terms.push_back(le);
                        hop_end_scalars.push_back(nn::scalar(le));
                        end_sum += hop_end_scalars.back();
                    }
                }
                const double inv_hops = 1.0 / static_cast<double>(rec.hops.size());
                if (!sf_terms.empty() && cfg.lambda1 > 0.0) {
                    weighted.push_back(nn::scale(nn::sum_scalars(sf_terms),
                                                 cfg.lambda1 / static_cast<double>(sf_terms.size())));
                }
                if (!end_terms.empty() && cfg.lambda2 > 0.0) {
                    weighted.push_back(nn::scale(nn::sum_scalars(end_terms),
                                                 cfg.lambda2 * inv_hops));
                }
                double final_sf = 0.0;
                double span = 0.0;
                auto final_fwd = rdr.forward_train(rec.final_seq);
                if (final_fwd.sentence_probs) {
                    nn::Var lf =
                        reader::loss_sf_v(final_fwd.sentence_probs, rec.final_labels,
                                          rec.final_mask);
                    final_sf = nn::scalar(lf);
                    if (lambda3 > 0.0) {
                        weighted.push_back(nn::scale(lf, lambda3));
                    }
                }
                if (use_span && rec.span_label) {
                    nn::Var lsp = reader::loss_span_v(final_fwd.log_span_start,
                                                      final_fwd.log_span_end,
                                                      rec.span_label->first,
                                                      rec.span_label->second);
                    span = nn::scalar(lsp);
                    weighted.push_back(lsp);
                }
                if (!weighted.empty()) {
                    example_losses.push_back(nn::sum_scalars(weighted));
                }
                // Accumulate the scalar breakdown for logging.
                for (std::size_t k = 0; k < hop_end_scalars.size(); ++k) {
                    mean_breakdown.per_hop_sf[k] += hop_sf_scalars[k];
                    mean_breakdown.per_hop_end[k] += hop_end_scalars[k];
                }
                mean_breakdown.int_sf += sf_terms.empty()
                                             ? 0.0
                                             : sf_sum / static_cast<double>(sf_terms.size());
                mean_breakdown.int_end += end_sum * inv_hops;
                mean_breakdown.final_sf += final_sf;
                mean_breakdown.span += span;
            }
            if (example_losses.empty()) {
                continue;
            }
            nn::Var batch_loss = nn::scale(nn::sum_scalars(example_losses),
                                           1.0 / static_cast<double>(batch_n));
            const double loss_value = nn::scalar(batch_loss);
            if (!std::isfinite(loss_value)) {
                throw Error("train: non-finite loss at step " +
                            std::to_string(optimizer->step_count() + 1) + " (batch of " +
                            std::to_string(batch_n) + " examples)");
            }
            nn::backward(batch_loss);
            const double lr = nn::linear_schedule(optimizer->step_count() + 1, total_steps,
                                                  cfg.learning_rate, cfg.warmup_fraction);
            optimizer->step(lr, 1.0);
            stats.steps = optimizer->step_count();
            stats.final_loss = loss_value;
            if (loss_log != nullptr) {
                const double inv_n = 1.0 / static_cast<double>(batch_n);
                LossBreakdown log_bd = mean_breakdown;
                for (auto& v : log_bd.per_hop_sf) {
                    v *= inv_n;
                }
                for (auto& v : log_bd.per_hop_end) {
                    v *= inv_n;
                }
                log_bd.int_sf *= inv_n;
                log_bd.int_end *= inv_n;
                log_bd.final_sf *= inv_n;
                log_bd.span *= inv_n;
                log_bd.total = loss_value;
                nlohmann::json line = log_bd.to_json();
                line["step"] = optimizer->step_count();
                line["lr"] = lr;
                (*loss_log) << line.dump() << "\n";
            }
        }
    }
    return stats;
}

// ---- exposure-bias mitigation ----

// Re-predicts the intermediate supporting sentences of the training data with
// a separately trained intermediate-only reader. Predictions are preserved
// as-is; mistakes are intentionally not corrected against gold.
inline std::map<std::string, std::vector<std::set<SupportFact>>> repredict_supports(
    const std::vector<PreparedExample>& records, const reader::Reader& intermediate_reader,
    const decomposer::SubQuestionGenerator& generator, const decomposer::SubAnswerer& answerer,
    const TrainingConfig& cfg, double support_threshold = 0.5) {
    std::map<std::string, std::vector<std::set<SupportFact>>> out;
    for (const auto& rec : records) {
        std::vector<std::set<SupportFact>> hops;
        std::vector<SubQA> history;
        for (int k = 1; k <= rec.supervision.end_hop; ++k) {
            EncodedSequence seq = encoding::truncate(
                encoding::build_sequence(k, rec.example.question, history, rec.context, false),
                static_cast<std::size_t>(cfg.max_seq_len));
            reader::ReaderOutputs outputs = intermediate_reader.forward_one(seq);
            std::set<SupportFact> predicted;
            double best = -1.0;
            std::optional<SupportFact> argmax;
            for (std::size_t i = 0; i < outputs.sentence_probs.size(); ++i) {
                const auto& m = seq.sent_positions[i];
                if (outputs.sentence_probs[i] > support_threshold) {
                    predicted.insert({m.title, m.sentence_index});
                }
                if (outputs.sentence_probs[i] > best) {
                    best = outputs.sentence_probs[i];
                    argmax = SupportFact{m.title, m.sentence_index};
                }
            }
            if (predicted.empty() && argmax) {
                predicted.insert(*argmax);
            }
            const auto sentences = support_sentences(rec.context, predicted);
            const auto input = decomposer::make_qg_input(rec.example.question, sentences);
            std::string q = decomposer::generate_subquestion(input, generator);
            std::string a = decomposer::answer_subquestion(q, sentences, answerer);
            history.push_back(SubQA{std::move(q), std::move(a), k});
            hops.push_back(std::move(predicted));
        }
        out[rec.example.id] = std::move(hops);
    }
    return out;
}

// Generator-repair pairs: the input renders the re-predicted supports, the
// target is the generator's output on the gold supports, so targets depend
// only on gold.
inline std::vector<std::pair<std::string, std::string>> build_qg_augmentation(
    const std::map<std::string, std::vector<std::set<SupportFact>>>& repredicted,
    const std::vector<PreparedExample>& records,
    const decomposer::SubQuestionGenerator& generator) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& rec : records) {
        auto it = repredicted.find(rec.example.id);
        if (it == repredicted.end()) {
            std::cerr << "[stepqa] warning: no re-predicted supports for example "
                      << rec.example.id << ", skipping\n";
            continue;
        }
        for (int k = 1; k <= rec.supervision.end_hop; ++k) {
            if (static_cast<std::size_t>(k) > it->second.size()) {
                break;
            }
            const auto& predicted = it->second[static_cast<std::size_t>(k - 1)];
            const auto& gold =
                rec.supervision.per_hop_sentence_labels[static_cast<std::size_t>(k - 1)];
            const auto input_side =
                decomposer::make_qg_input(rec.example.question,
                                          support_sentences(rec.context, predicted));
            const auto target_side = decomposer::make_qg_input(
                rec.example.question, support_sentences(rec.context, gold));
            out.emplace_back(input_side.rendered,
                             decomposer::generate_subquestion(target_side, generator));
        }
    }
    return out;
}

}  // namespace stepqa::objective
