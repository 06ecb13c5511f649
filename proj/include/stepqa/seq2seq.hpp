#pragma once

// Small encoder-decoder sequence model with greedy decoding, used as the
// trainable single-hop question generator.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "stepqa/autograd.hpp"
#include "stepqa/common.hpp"
#include "stepqa/model.hpp"
#include "stepqa/text.hpp"

namespace stepqa::nn {

struct Seq2SeqFitOptions {
    int epochs = 30;
    double learning_rate = 3e-3;
    int batch_size = 8;
    double clip_norm = 1.0;
    std::uint64_t seed = 13;
    long max_steps = 0;  // 0 = no cap
};

class Seq2Seq {
public:
    static constexpr const char* kBos = "[BOS]";
    static constexpr const char* kEos = "[EOS]";

    Seq2Seq(Vocabulary vocab, TransformerConfig cfg)
        : vocab_(std::move(vocab)),
          cfg_(with_vocab(cfg, vocab_.size())),
          encoder_(cfg_),
          decoder_(cfg_, /*seed_offset=*/7919) {
        bos_ = vocab_.lookup(kBos);
        eos_ = vocab_.lookup(kEos);
        if (bos_ == 0 || eos_ == 0) {
            throw ContractError("Seq2Seq: vocabulary must contain [BOS] and [EOS]");
        }
    }

    // Builds a vocabulary over all tokens of the given texts.
    static Vocabulary build_vocab(const std::vector<std::string>& texts) {
        Vocabulary v;
        v.add(kBos);
        v.add(kEos);
        v.add("[CLS]");
        v.add("[SEP]");
        for (const auto& t : texts) {
            for (const auto& tok : text::tokenize(t)) {
                v.add(tok);
            }
        }
        return v;
    }

    const Vocabulary& vocab() const { return vocab_; }
    const TransformerConfig& config() const { return cfg_; }

    std::vector<Var> parameters() const {
        std::vector<Var> out = encoder_.params().vars();
        for (const auto& v : decoder_.params().vars()) {
            out.push_back(v);
        }
        return out;
    }

    // Teacher-forced NLL: feed [BOS] t1 .. tn, predict t1 .. tn [EOS].
    Var loss(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids) const {
        if (src_ids.empty() || tgt_ids.empty()) {
            throw ContractError("Seq2Seq: empty training pair");
        }
        Var enc = encoder_.forward(clip(src_ids));
        std::vector<int> dec_in;
        dec_in.reserve(tgt_ids.size() + 1);
        dec_in.push_back(bos_);
        dec_in.insert(dec_in.end(), tgt_ids.begin(), tgt_ids.end());
        std::vector<int> targets = tgt_ids;
        targets.push_back(eos_);
        if (static_cast<int>(dec_in.size()) > cfg_.max_len) {
            dec_in.resize(static_cast<std::size_t>(cfg_.max_len));
            targets.resize(static_cast<std::size_t>(cfg_.max_len));
        }
        Var logits = decoder_.forward(dec_in, enc);
        return cross_entropy_rows(logits, targets);
    }

    // Greedy decode: deterministic, ties broken toward the lowest token id.
    std::vector<int> greedy(const std::vector<int>& src_ids, int max_out = 40) const {
        Var enc = encoder_.forward(clip(src_ids));
        std::vector<int> dec_in{bos_};
        std::vector<int> out;
        for (int step = 0; step < max_out; ++step) {
            Var logits = decoder_.forward(dec_in, enc);
            const Eigen::Index last = logits->value.rows() - 1;
            int best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < logits->value.cols(); ++j) {
                const double s = logits->value(last, j);
                if (s > best_score) {
                    best_score = s;
                    best = static_cast<int>(j);
                }
            }
            if (best == eos_) {
                break;
            }
            out.push_back(best);
            dec_in.push_back(best);
            if (static_cast<int>(dec_in.size()) >= cfg_.max_len) {
                break;
            }
        }
        return out;
    }

    std::string generate_text(const std::string& input, int max_out = 40) const {
        const auto ids = vocab_.encode(text::tokenize(input));
        std::string out;
        for (int id : greedy(ids, max_out)) {
            if (!out.empty()) {
                out.push_back(' ');
            }
            out += vocab_.token(id);
        }
        return out;
    }

    // Trains on (input text, target text) pairs with Adam and a constant
    // learning rate. Returns the final mean batch loss.
    double fit(const std::vector<std::pair<std::string, std::string>>& pairs,
               const Seq2SeqFitOptions& opt) {
        if (pairs.empty()) {
            throw ContractError("Seq2Seq::fit: no training pairs");
        }
        std::vector<std::pair<std::vector<int>, std::vector<int>>> encoded;
        encoded.reserve(pairs.size());
        for (const auto& [in, tgt] : pairs) {
            auto src = vocab_.encode(text::tokenize(in));
            auto dst = vocab_.encode(text::tokenize(tgt));
            if (src.empty() || dst.empty()) {
                continue;
            }
            encoded.emplace_back(std::move(src), std::move(dst));
        }
        if (encoded.empty()) {
            throw ContractError("Seq2Seq::fit: all pairs were empty after tokenization");
        }
        Adam adam(parameters());
        std::mt19937_64 rng(opt.seed);
        std::vector<std::size_t> order(encoded.size());
        std::iota(order.begin(), order.end(), 0);
        double last_loss = 0.0;
        long steps = 0;
        for (int epoch = 0; epoch < opt.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(opt.batch_size)) {
                std::vector<Var> losses;
                for (std::size_t b = at;
                     b < std::min(order.size(), at + static_cast<std::size_t>(opt.batch_size));
                     ++b) {
                    const auto& [src, dst] = encoded[order[b]];
                    losses.push_back(loss(src, dst));
                }
                Var batch_loss = scale(sum_scalars(losses), 1.0 / static_cast<double>(losses.size()));
                backward(batch_loss);
                adam.step(opt.learning_rate, opt.clip_norm);
                last_loss = scalar(batch_loss);
                if (!std::isfinite(last_loss)) {
                    throw Error("Seq2Seq::fit: non-finite loss at step " + std::to_string(steps));
                }
                ++steps;
                if (opt.max_steps > 0 && steps >= opt.max_steps) {
                    return last_loss;
                }
            }
        }
        return last_loss;
    }

    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json cfg;
        cfg["backbone"] = cfg_.to_json();
        write_file(dir / "config.json", cfg.dump(1) + "\n");
        write_file(dir / "vocab.json", vocab_.to_json().dump() + "\n");
        std::ofstream out(dir / "params.bin", std::ios::binary);
        encoder_.params().save(out);
        decoder_.params().save(out);
    }

    static Seq2Seq load(const std::filesystem::path& dir) {
        nlohmann::json cfg = nlohmann::json::parse(read_file(dir / "config.json"));
        auto backbone = TransformerConfig::from_json(cfg.at("backbone"));
        auto vocab = Vocabulary::from_json(nlohmann::json::parse(read_file(dir / "vocab.json")));
        Seq2Seq model(std::move(vocab), backbone);
        std::ifstream in(dir / "params.bin", std::ios::binary);
        if (!in) {
            throw ParseError("Seq2Seq: missing params.bin in " + dir.string());
        }
        model.encoder_.params().load(in);
        model.decoder_.params().load(in);
        return model;
    }

private:
    static TransformerConfig with_vocab(TransformerConfig cfg, int vocab_size) {
        cfg.vocab_size = vocab_size;
        return cfg;
    }

    std::vector<int> clip(std::vector<int> ids) const {
        if (static_cast<int>(ids.size()) > cfg_.max_len) {
            ids.resize(static_cast<std::size_t>(cfg_.max_len));
        }
        return ids;
    }

    Vocabulary vocab_;
    TransformerConfig cfg_;
    TransformerEncoder encoder_;
    TransformerDecoder decoder_;
    int bos_ = 0;
    int eos_ = 0;
};

}  // namespace stepqa::nn
