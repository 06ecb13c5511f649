#pragma once

// The unified reader: an encoder backend plus three heads sharing one
// parameter set across all hops — a per-sentence supporting-fact classifier
// on [SENT] positions, an end-of-reasoning classifier on [CLS], and span
// start/end heads evaluated on the final hop. The sentence classifier is
// shared between intermediate and final hops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepqa/autograd.hpp"
#include "stepqa/common.hpp"
#include "stepqa/encoding.hpp"
#include "stepqa/model.hpp"

namespace stepqa::reader {

using encoding::EncodedSequence;

struct ReaderOutputs {
    std::vector<double> sentence_probs;  // aligned with sent_positions
    double end_prob = 0.0;
    std::vector<double> span_start;  // one entry per token, sums to 1
    std::vector<double> span_end;
};

// ---- losses ----

inline constexpr double kProbEps = 1e-12;

namespace detail {
inline double bce_term(double p, int y) {
    const double c = std::clamp(p, kProbEps, 1.0 - kProbEps);
    return y ? -std::log(c) : -std::log(1.0 - c);
}
}  // namespace detail

// Mean binary cross entropy over the unmasked sentence probabilities.
inline double loss_sf(const std::vector<double>& sentence_probs, const std::vector<int>& labels,
                      const std::vector<int>& mask) {
    if (sentence_probs.size() != labels.size() || sentence_probs.size() != mask.size()) {
        throw ContractError("loss_sf: misaligned inputs");
    }
    double total = 0.0;
    std::size_t active = 0;
    for (std::size_t i = 0; i < sentence_probs.size(); ++i) {
        if (!mask[i]) {
            continue;
        }
        ++active;
        total += detail::bce_term(sentence_probs[i], labels[i]);
    }
    if (active == 0) {
        throw ContractError("loss_sf: no unmasked sentences");
    }
    return total / static_cast<double>(active);
}

inline double loss_end(double end_prob, int label) {
    return detail::bce_term(end_prob, label);
}

inline double loss_span(const std::vector<double>& span_start, const std::vector<double>& span_end,
                        std::size_t x, std::size_t y) {
    if (x >= span_start.size() || y >= span_end.size()) {
        throw ContractError("loss_span: label position out of range");
    }
    return -std::log(std::clamp(span_start[x], kProbEps, 1.0)) -
           std::log(std::clamp(span_end[y], kProbEps, 1.0));
}

// ---- encoder backends ----

class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;
    virtual nn::Var encode(const std::vector<int>& ids) const = 0;
    virtual const nn::TransformerConfig& config() const = 0;
    virtual nn::ParamStore& params() = 0;
    virtual const nn::ParamStore& params() const = 0;
    virtual std::string kind() const = 0;
};

// Deterministic tiny encoder: 2 layers, hidden width 64, fixed seed. Small
// enough for CPU tests and overfit runs.
class TinyEncoderBackend final : public EncoderBackend {
public:
    explicit TinyEncoderBackend(int vocab_size, int max_len = 512, std::uint64_t seed = 7)
        : encoder_(make_config(vocab_size, max_len, seed)) {}

    explicit TinyEncoderBackend(nn::TransformerConfig cfg) : encoder_(cfg) {}

    static nn::TransformerConfig make_config(int vocab_size, int max_len, std::uint64_t seed) {
        nn::TransformerConfig cfg;
        cfg.vocab_size = vocab_size;
        cfg.max_len = max_len;
        cfg.width = 64;
        cfg.heads = 4;
        cfg.ffn = 256;
        cfg.layers = 2;
        cfg.seed = seed;
        return cfg;
    }

    nn::Var encode(const std::vector<int>& ids) const override { return encoder_.forward(ids); }
    const nn::TransformerConfig& config() const override { return encoder_.config(); }
    nn::ParamStore& params() override { return encoder_.params(); }
    const nn::ParamStore& params() const override { return encoder_.params(); }
    std::string kind() const override { return "toy"; }

private:
    nn::TransformerEncoder encoder_;
};

// Configurable encoder whose weights come from a checkpoint produced by an
// earlier (larger) training run.
class PretrainedEncoderBackend final : public EncoderBackend {
public:
    explicit PretrainedEncoderBackend(nn::TransformerConfig cfg) : encoder_(cfg) {}

    nn::Var encode(const std::vector<int>& ids) const override { return encoder_.forward(ids); }
    const nn::TransformerConfig& config() const override { return encoder_.config(); }
    nn::ParamStore& params() override { return encoder_.params(); }
    const nn::ParamStore& params() const override { return encoder_.params(); }
    std::string kind() const override { return "pretrained"; }

private:
    nn::TransformerEncoder encoder_;
};

inline std::unique_ptr<EncoderBackend> make_backend(const std::string& kind,
                                                    nn::TransformerConfig cfg) {
    if (kind == "toy") {
        return std::make_unique<TinyEncoderBackend>(cfg);
    }
    if (kind == "pretrained") {
        return std::make_unique<PretrainedEncoderBackend>(cfg);
    }
    throw ContractError("make_backend: unknown backend kind '" + kind + "'");
}

// ---- the unified reader ----

// Training-mode outputs: differentiable probabilities plus the span
// candidate mask used for the masked softmax.
struct ReaderForward {
    nn::Var sentence_probs;  // N_s x 1, null when the sequence has no sentences
    nn::Var end_prob;        // 1 x 1
    nn::Var log_span_start;  // n x 1, only set for final-hop sequences
    nn::Var log_span_end;
    std::vector<std::uint8_t> span_allowed;
};

// Token positions an answer span may start or end on: word tokens inside the
// context region plus the inserted yes/no tokens.
inline std::vector<std::uint8_t> span_candidate_mask(const EncodedSequence& seq) {
    std::vector<std::uint8_t> allowed(seq.tokens.size(), 0);
    if (seq.context_span) {
        for (std::size_t i = seq.context_span->first; i <= seq.context_span->second; ++i) {
            if (seq.offset_map[i].has_value()) {
                allowed[i] = 1;
            }
        }
    }
    if (seq.yes_position) {
        allowed[*seq.yes_position] = 1;
    }
    if (seq.no_position) {
        allowed[*seq.no_position] = 1;
    }
    return allowed;
}

class Reader {
public:
    Reader(std::unique_ptr<EncoderBackend> backend, nn::Vocabulary vocab,
           std::string manifest_hash)
        : backend_(std::move(backend)), vocab_(std::move(vocab)),
          manifest_hash_(std::move(manifest_hash)) {
        if (vocab_.size() != backend_->config().vocab_size) {
            throw BackendError("Reader: vocabulary size " + std::to_string(vocab_.size()) +
                               " does not match backend vocab_size " +
                               std::to_string(backend_->config().vocab_size));
        }
        const int width = backend_->config().width;
        nn::NormalSampler sampler(backend_->config().seed + 1000003);
        heads_.add("sent.w", nn::randn(width, 1, 0.02, sampler));
        heads_.add("sent.b", nn::Matrix::Zero(1, 1));
        heads_.add("end.w", nn::randn(width, 1, 0.02, sampler));
        heads_.add("end.b", nn::Matrix::Zero(1, 1));
        heads_.add("span_start.w", nn::randn(width, 1, 0.02, sampler));
        heads_.add("span_start.b", nn::Matrix::Zero(1, 1));
        heads_.add("span_end.w", nn::randn(width, 1, 0.02, sampler));
        heads_.add("span_end.b", nn::Matrix::Zero(1, 1));
    }

    const nn::Vocabulary& vocab() const { return vocab_; }
    EncoderBackend& backend() { return *backend_; }
    const EncoderBackend& backend() const { return *backend_; }
    nn::ParamStore& heads() { return heads_; }
    const std::string& manifest_hash() const { return manifest_hash_; }

    std::vector<nn::Var> parameters() const {
        std::vector<nn::Var> out = backend_->params().vars();
        for (const auto& v : heads_.vars()) {
            out.push_back(v);
        }
        return out;
    }

    void zero_grads() {
        for (auto& v : parameters()) {
            if (v->grad.size() != 0) {
                v->grad.setZero();
            }
        }
    }

    ReaderForward forward_train(const EncodedSequence& seq) const {
        if (static_cast<int>(seq.tokens.size()) > backend_->config().max_len) {
            throw ContractError("Reader: sequence length exceeds backend max_len");
        }
        const std::vector<int> ids = vocab_.encode(seq.tokens);
        nn::Var hidden = backend_->encode(ids);

        ReaderForward out;
        if (!seq.sent_positions.empty()) {
            std::vector<int> marker_rows;
            marker_rows.reserve(seq.sent_positions.size());
            for (const auto& m : seq.sent_positions) {
                marker_rows.push_back(static_cast<int>(m.token_index));
            }
            nn::Var sent_h = nn::gather_rows(hidden, marker_rows);
            out.sentence_probs = nn::sigmoid(
                nn::add_rowvec(nn::matmul(sent_h, heads_.get("sent.w")), heads_.get("sent.b")));
        }
        nn::Var cls_h = nn::row(hidden, static_cast<Eigen::Index>(seq.cls_position));
        out.end_prob = nn::sigmoid(
            nn::add_rowvec(nn::matmul(cls_h, heads_.get("end.w")), heads_.get("end.b")));
        if (seq.is_final) {
            out.span_allowed = span_candidate_mask(seq);
            nn::Var start_logits = nn::add_rowvec(nn::matmul(hidden, heads_.get("span_start.w")),
                                                  heads_.get("span_start.b"));
            nn::Var end_logits = nn::add_rowvec(nn::matmul(hidden, heads_.get("span_end.w")),
                                                heads_.get("span_end.b"));
            out.log_span_start = nn::log_softmax_masked(start_logits, out.span_allowed);
            out.log_span_end = nn::log_softmax_masked(end_logits, out.span_allowed);
        }
        return out;
    }

    // Evaluation-mode forward: plain probabilities. Span heads produce a
    // uniform placeholder on intermediate hops.
    ReaderOutputs forward_one(const EncodedSequence& seq) const {
        ReaderForward f = forward_train(seq);
        ReaderOutputs out;
        if (f.sentence_probs) {
            out.sentence_probs.reserve(static_cast<std::size_t>(f.sentence_probs->value.rows()));
            for (Eigen::Index i = 0; i < f.sentence_probs->value.rows(); ++i) {
                out.sentence_probs.push_back(f.sentence_probs->value(i, 0));
            }
        }
        out.end_prob = nn::scalar(f.end_prob);
        const std::size_t n = seq.tokens.size();
        if (seq.is_final) {
            out.span_start.resize(n);
            out.span_end.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                out.span_start[i] = std::exp(f.log_span_start->value(static_cast<Eigen::Index>(i), 0));
                out.span_end[i] = std::exp(f.log_span_end->value(static_cast<Eigen::Index>(i), 0));
            }
        } else {
            out.span_start.assign(n, 1.0 / static_cast<double>(n));
            out.span_end.assign(n, 1.0 / static_cast<double>(n));
        }
        return out;
    }

    std::vector<ReaderOutputs> forward(const std::vector<EncodedSequence>& batch) const {
        std::vector<ReaderOutputs> out;
        out.reserve(batch.size());
        for (const auto& seq : batch) {
            out.push_back(forward_one(seq));
        }
        return out;
    }

    // ---- checkpointing ----

    void save(const std::filesystem::path& dir, long step = 0,
              const nn::Adam* optimizer = nullptr) const {
        std::filesystem::create_directories(dir);
        nlohmann::json cfg;
        cfg["backend"] = backend_->kind();
        cfg["backbone"] = backend_->config().to_json();
        cfg["manifest_hash"] = manifest_hash_;
        cfg["step"] = step;
        write_file(dir / "config.json", cfg.dump(1) + "\n");
        write_file(dir / "vocab.json", vocab_.to_json().dump() + "\n");
        std::ofstream params(dir / "params.bin", std::ios::binary);
        backend_->params().save(params);
        heads_.save(params);
        if (optimizer != nullptr) {
            std::ofstream opt(dir / "optim.bin", std::ios::binary);
            optimizer->save(opt);
        }
    }

    static Reader load(const std::filesystem::path& dir) {
        nlohmann::json cfg;
        try {
            cfg = nlohmann::json::parse(read_file(dir / "config.json"));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("Reader: bad checkpoint config: " + std::string(e.what()));
        }
        auto backbone = nn::TransformerConfig::from_json(cfg.at("backbone"));
        auto vocab = nn::Vocabulary::from_json(nlohmann::json::parse(read_file(dir / "vocab.json")));
        Reader r(make_backend(cfg.at("backend").get<std::string>(), backbone), std::move(vocab),
                 cfg.at("manifest_hash").get<std::string>());
        std::ifstream params(dir / "params.bin", std::ios::binary);
        if (!params) {
            throw ParseError("Reader: missing params.bin in " + dir.string());
        }
        r.backend_->params().load(params);
        r.heads_raw_load(params);
        return r;
    }

    static long saved_step(const std::filesystem::path& dir) {
        nlohmann::json cfg = nlohmann::json::parse(read_file(dir / "config.json"));
        return cfg.value("step", 0L);
    }

private:
    void heads_raw_load(std::istream& in) { heads_.load(in); }

    std::unique_ptr<EncoderBackend> backend_;
    nn::Vocabulary vocab_;
    nn::ParamStore heads_;
    std::string manifest_hash_;
};

// Differentiable loss variants used by the training loop; they evaluate the
// same formulas as the scalar functions above.
inline nn::Var loss_sf_v(const nn::Var& sentence_probs, const std::vector<int>& labels,
                         const std::vector<int>& mask) {
    return nn::bce_mean(sentence_probs, labels, mask, kProbEps);
}

inline nn::Var loss_end_v(const nn::Var& end_prob, int label) {
    return nn::bce_scalar(end_prob, label, kProbEps);
}

inline nn::Var loss_span_v(const nn::Var& log_span_start, const nn::Var& log_span_end,
                           std::size_t x, std::size_t y) {
    return nn::scale(nn::add(nn::pick(log_span_start, static_cast<Eigen::Index>(x)),
                             nn::pick(log_span_end, static_cast<Eigen::Index>(y))),
                     -1.0);
}

}  // namespace stepqa::reader
