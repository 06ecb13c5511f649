#pragma once

// Token vocabulary and the small bidirectional transformer encoder (plus the
// causal/cross-attention decoder used by the sub-question generator). All
// math runs in double precision on CPU; forward passes are deterministic.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stepqa/autograd.hpp"
#include "stepqa/common.hpp"
#include "stepqa/text.hpp"

namespace stepqa::nn {

// Tokens wrapped in brackets (markers) are matched case-sensitively; all
// other tokens are lowercased before lookup.
class Vocabulary {
public:
    static constexpr const char* kUnk = "[UNK]";

    Vocabulary() { add(kUnk); }

    int add(const std::string& token) {
        const std::string key = canonical(token);
        auto it = index_.find(key);
        if (it != index_.end()) {
            return it->second;
        }
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(key);
        index_.emplace(key, id);
        return id;
    }

    int lookup(const std::string& token) const {
        auto it = index_.find(canonical(token));
        return it == index_.end() ? 0 : it->second;
    }

    std::vector<int> encode(const std::vector<std::string>& tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) {
            ids.push_back(lookup(t));
        }
        return ids;
    }

    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }

    nlohmann::json to_json() const { return nlohmann::json(tokens_); }

    static Vocabulary from_json(const nlohmann::json& j) {
        Vocabulary v;
        v.tokens_.clear();
        v.index_.clear();
        for (const auto& t : j) {
            const std::string tok = t.get<std::string>();
            v.index_.emplace(tok, static_cast<int>(v.tokens_.size()));
            v.tokens_.push_back(tok);
        }
        if (v.tokens_.empty() || v.tokens_[0] != kUnk) {
            throw ParseError("Vocabulary: serialized vocabulary must start with [UNK]");
        }
        return v;
    }

private:
    static std::string canonical(const std::string& token) {
        if (token.size() >= 2 && token.front() == '[' && token.back() == ']') {
            return token;
        }
        if (token.rfind("HOP=", 0) == 0) {
            return token;
        }
        return text::lowercase(token);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct TransformerConfig {
    int vocab_size = 0;
    int max_len = 512;
    int width = 64;
    int heads = 4;
    int ffn = 256;
    int layers = 2;
    std::uint64_t seed = 7;

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"max_len", max_len}, {"width", width},
                {"heads", heads},           {"ffn", ffn},         {"layers", layers},
                {"seed", seed}};
    }

    static TransformerConfig from_json(const nlohmann::json& j) {
        TransformerConfig c;
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_len = j.at("max_len").get<int>();
        c.width = j.at("width").get<int>();
        c.heads = j.at("heads").get<int>();
        c.ffn = j.at("ffn").get<int>();
        c.layers = j.at("layers").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }
};

namespace detail {

inline void add_transformer_block(ParamStore& store, const std::string& prefix, int width,
                                  int ffn, bool cross_attention, NormalSampler& sampler) {
    const double std_w = 0.02;
    auto mat = [&](const std::string& name, int rows, int cols) {
        store.add(prefix + name, randn(rows, cols, std_w, sampler));
    };
    auto zeros = [&](const std::string& name, int rows, int cols) {
        store.add(prefix + name, Matrix::Zero(rows, cols));
    };
    auto ones = [&](const std::string& name, int cols) {
        store.add(prefix + name, Matrix::Ones(1, cols));
    };
    ones("ln1.g", width);
    zeros("ln1.b", 1, width);
    mat("attn.wq", width, width);
    mat("attn.wk", width, width);
    mat("attn.wv", width, width);
    mat("attn.wo", width, width);
    zeros("attn.bq", 1, width);
    zeros("attn.bk", 1, width);
    zeros("attn.bv", 1, width);
    zeros("attn.bo", 1, width);
    if (cross_attention) {
        ones("lnx.g", width);
        zeros("lnx.b", 1, width);
        mat("cross.wq", width, width);
        mat("cross.wk", width, width);
        mat("cross.wv", width, width);
        mat("cross.wo", width, width);
        zeros("cross.bq", 1, width);
        zeros("cross.bk", 1, width);
        zeros("cross.bv", 1, width);
        zeros("cross.bo", 1, width);
    }
    ones("ln2.g", width);
    zeros("ln2.b", 1, width);
    mat("ffn.w1", width, ffn);
    zeros("ffn.b1", 1, ffn);
    mat("ffn.w2", ffn, width);
    zeros("ffn.b2", 1, width);
}

// Multi-head attention. Queries come from x; keys/values from kv (self
// attention when kv == x). additive_mask, when given, is applied to every
// head's score matrix.
inline Var attention(const ParamStore& store, const std::string& prefix, const Var& x,
                     const Var& kv, int heads, const Matrix* additive_mask) {
    const Eigen::Index width = x->value.cols();
    const Eigen::Index head_dim = width / heads;
    Var q = add_rowvec(matmul(x, store.get(prefix + "wq")), store.get(prefix + "bq"));
    Var k = add_rowvec(matmul(kv, store.get(prefix + "wk")), store.get(prefix + "bk"));
    Var v = add_rowvec(matmul(kv, store.get(prefix + "wv")), store.get(prefix + "bv"));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> outputs;
    outputs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * head_dim, head_dim);
        Var kh = slice_cols(k, h * head_dim, head_dim);
        Var vh = slice_cols(v, h * head_dim, head_dim);
        Var scores = scale(matmul_nt(qh, kh), inv_sqrt);
        Var weights = softmax_rows(scores, additive_mask);
        outputs.push_back(matmul(weights, vh));
    }
    Var merged = concat_cols(outputs);
    return add_rowvec(matmul(merged, store.get(prefix + "wo")), store.get(prefix + "bo"));
}

inline Var feed_forward(const ParamStore& store, const std::string& prefix, const Var& x) {
    Var h = gelu(add_rowvec(matmul(x, store.get(prefix + "w1")), store.get(prefix + "b1")));
    return add_rowvec(matmul(h, store.get(prefix + "w2")), store.get(prefix + "b2"));
}

inline Matrix causal_mask(Eigen::Index n) {
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            m(i, j) = -1e30;
        }
    }
    return m;
}

}  // namespace detail

// Pre-norm bidirectional transformer encoder.
class TransformerEncoder {
public:
    explicit TransformerEncoder(TransformerConfig cfg) : cfg_(cfg) {
        if (cfg_.width % cfg_.heads != 0) {
            throw ContractError("TransformerEncoder: width must be divisible by heads");
        }
        NormalSampler sampler(cfg_.seed);
        params_.add("tok_emb", randn(cfg_.vocab_size, cfg_.width, 0.02, sampler));
        params_.add("pos_emb", randn(cfg_.max_len, cfg_.width, 0.02, sampler));
        for (int l = 0; l < cfg_.layers; ++l) {
            detail::add_transformer_block(params_, layer_prefix(l), cfg_.width, cfg_.ffn,
                                          /*cross_attention=*/false, sampler);
        }
        params_.add("ln_f.g", Matrix::Ones(1, cfg_.width));
        params_.add("ln_f.b", Matrix::Zero(1, cfg_.width));
    }

    const TransformerConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Contextual hidden states, one row per input token.
    Var forward(const std::vector<int>& ids) const {
        if (ids.empty()) {
            throw ContractError("TransformerEncoder: empty input");
        }
        if (static_cast<int>(ids.size()) > cfg_.max_len) {
            throw ContractError("TransformerEncoder: sequence length " +
                                std::to_string(ids.size()) + " exceeds max_len " +
                                std::to_string(cfg_.max_len));
        }
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            positions[i] = static_cast<int>(i);
        }
        Var x = add(gather_rows(params_.get("tok_emb"), ids),
                    gather_rows(params_.get("pos_emb"), positions));
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string p = layer_prefix(l);
            Var h = layer_norm(x, params_.get(p + "ln1.g"), params_.get(p + "ln1.b"));
            x = add(x, detail::attention(params_, p + "attn.", h, h, cfg_.heads, nullptr));
            Var h2 = layer_norm(x, params_.get(p + "ln2.g"), params_.get(p + "ln2.b"));
            x = add(x, detail::feed_forward(params_, p + "ffn.", h2));
        }
        return layer_norm(x, params_.get("ln_f.g"), params_.get("ln_f.b"));
    }

private:
    static std::string layer_prefix(int l) { return "l" + std::to_string(l) + "."; }

    TransformerConfig cfg_;
    ParamStore params_;
};

// Pre-norm decoder with causal self-attention and cross-attention over the
// encoder output. Used by the sequence-to-sequence generator.
class TransformerDecoder {
public:
    TransformerDecoder(TransformerConfig cfg, std::uint64_t seed_offset = 1) : cfg_(cfg) {
        if (cfg_.width % cfg_.heads != 0) {
            throw ContractError("TransformerDecoder: width must be divisible by heads");
        }
        NormalSampler sampler(cfg_.seed + seed_offset);
        params_.add("tok_emb", randn(cfg_.vocab_size, cfg_.width, 0.02, sampler));
        params_.add("pos_emb", randn(cfg_.max_len, cfg_.width, 0.02, sampler));
        for (int l = 0; l < cfg_.layers; ++l) {
            detail::add_transformer_block(params_, layer_prefix(l), cfg_.width, cfg_.ffn,
                                          /*cross_attention=*/true, sampler);
        }
        params_.add("ln_f.g", Matrix::Ones(1, cfg_.width));
        params_.add("ln_f.b", Matrix::Zero(1, cfg_.width));
        params_.add("lm.w", randn(cfg_.width, cfg_.vocab_size, 0.02, sampler));
        params_.add("lm.b", Matrix::Zero(1, cfg_.vocab_size));
    }

    const TransformerConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Token logits for every decoder position (teacher-forced).
    Var forward(const std::vector<int>& ids, const Var& encoder_out) const {
        if (ids.empty()) {
            throw ContractError("TransformerDecoder: empty input");
        }
        if (static_cast<int>(ids.size()) > cfg_.max_len) {
            throw ContractError("TransformerDecoder: sequence exceeds max_len");
        }
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            positions[i] = static_cast<int>(i);
        }
        const Matrix mask = detail::causal_mask(static_cast<Eigen::Index>(ids.size()));
        Var x = add(gather_rows(params_.get("tok_emb"), ids),
                    gather_rows(params_.get("pos_emb"), positions));
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string p = layer_prefix(l);
            Var h = layer_norm(x, params_.get(p + "ln1.g"), params_.get(p + "ln1.b"));
            x = add(x, detail::attention(params_, p + "attn.", h, h, cfg_.heads, &mask));
            Var hx = layer_norm(x, params_.get(p + "lnx.g"), params_.get(p + "lnx.b"));
            x = add(x,
                    detail::attention(params_, p + "cross.", hx, encoder_out, cfg_.heads, nullptr));
            Var h2 = layer_norm(x, params_.get(p + "ln2.g"), params_.get(p + "ln2.b"));
            x = add(x, detail::feed_forward(params_, p + "ffn.", h2));
        }
        Var h = layer_norm(x, params_.get("ln_f.g"), params_.get("ln_f.b"));
        return add_rowvec(matmul(h, params_.get("lm.w")), params_.get("lm.b"));
    }

private:
    static std::string layer_prefix(int l) { return "l" + std::to_string(l) + "."; }

    TransformerConfig cfg_;
    ParamStore params_;
};

}  // namespace stepqa::nn
