#pragma once

// Trainable paragraph relevance scorer: a transformer encoder over the
// question concatenated with every candidate paragraph, with one binary
// relevance head per [PAR] marker, trained against gold-support paragraph
// membership. Trained and frozen before reader training.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stepqa/autograd.hpp"
#include "stepqa/filter.hpp"
#include "stepqa/model.hpp"

namespace stepqa::filter {

inline constexpr const char* kPar = "[PAR]";

class NeuralParagraphScorer final : public RelevanceScorer {
public:
    NeuralParagraphScorer(nn::Vocabulary vocab, nn::TransformerConfig cfg)
        : vocab_(std::move(vocab)), encoder_(with_vocab(cfg, vocab_.size())) {
        nn::NormalSampler sampler(cfg.seed + 52711);
        heads_.add("par.w", nn::randn(encoder_.config().width, 1, 0.02, sampler));
        heads_.add("par.b", nn::Matrix::Zero(1, 1));
    }

    static nn::Vocabulary build_vocab(const std::vector<MultiHopExample>& examples) {
        nn::Vocabulary v;
        v.add("[CLS]");
        v.add("[SEP]");
        v.add(kPar);
        for (const auto& ex : examples) {
            for (const auto& t : text::tokenize(ex.question)) {
                v.add(t);
            }
            for (const auto& p : ex.paragraphs) {
                for (const auto& t : text::tokenize(p.title)) {
                    v.add(t);
                }
                for (const auto& s : p.sentences) {
                    for (const auto& t : text::tokenize(s)) {
                        v.add(t);
                    }
                }
            }
        }
        return v;
    }

    std::vector<double> score(const std::string& question,
                              const std::vector<Paragraph>& paragraphs) const override {
        auto [probs, _] = forward(question, paragraphs);
        std::vector<double> out;
        out.reserve(paragraphs.size());
        for (Eigen::Index i = 0; i < probs->value.rows(); ++i) {
            out.push_back(probs->value(i, 0));
        }
        return out;
    }

    // Per-paragraph binary cross entropy against gold-support membership.
    double fit(const std::vector<MultiHopExample>& examples, int epochs, double lr,
               int batch_size, std::uint64_t seed) {
        if (examples.empty()) {
            throw ContractError("NeuralParagraphScorer::fit: no examples");
        }
        nn::Adam adam(parameters());
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> order(examples.size());
        std::iota(order.begin(), order.end(), 0);
        double last = 0.0;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t at = 0; at < order.size();
                 at += static_cast<std::size_t>(batch_size)) {
                std::vector<nn::Var> losses;
                for (std::size_t b = at;
                     b < std::min(order.size(), at + static_cast<std::size_t>(batch_size)); ++b) {
                    const auto& ex = examples[order[b]];
                    std::set<std::string> gold_titles;
                    for (const auto& [title, idx] : ex.gold_supports) {
                        gold_titles.insert(title);
                    }
                    auto [probs, _] = forward(ex.question, ex.paragraphs);
                    std::vector<int> labels;
                    labels.reserve(ex.paragraphs.size());
                    for (const auto& p : ex.paragraphs) {
                        labels.push_back(gold_titles.count(p.title) ? 1 : 0);
                    }
                    std::vector<int> mask(labels.size(), 1);
                    losses.push_back(nn::bce_mean(probs, labels, mask));
                }
                nn::Var loss =
                    nn::scale(nn::sum_scalars(losses), 1.0 / static_cast<double>(losses.size()));
                nn::backward(loss);
                adam.step(lr, 1.0);
                last = nn::scalar(loss);
            }
        }
        return last;
    }

    std::vector<nn::Var> parameters() const {
        std::vector<nn::Var> out = encoder_.params().vars();
        for (const auto& v : heads_.vars()) {
            out.push_back(v);
        }
        return out;
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

    static NeuralParagraphScorer load(const std::filesystem::path& dir) {
        nlohmann::json cfg = nlohmann::json::parse(read_file(dir / "config.json"));
        auto backbone = nn::TransformerConfig::from_json(cfg.at("backbone"));
        auto vocab =
            nn::Vocabulary::from_json(nlohmann::json::parse(read_file(dir / "vocab.json")));
        NeuralParagraphScorer model(std::move(vocab), backbone);
        std::ifstream in(dir / "params.bin", std::ios::binary);
        if (!in) {
            throw ParseError("NeuralParagraphScorer: missing params.bin in " + dir.string());
        }
        model.encoder_.params().load(in);
        model.heads_.load(in);
        return model;
    }

private:
    static nn::TransformerConfig with_vocab(nn::TransformerConfig cfg, int vocab_size) {
        cfg.vocab_size = vocab_size;
        return cfg;
    }

    // [CLS] question [SEP] then per paragraph: [PAR] title sentences, final
    // [SEP]. Paragraph bodies share the token budget left by the header.
    std::pair<nn::Var, std::vector<std::size_t>> forward(
        const std::string& question, const std::vector<Paragraph>& paragraphs) const {
        std::vector<std::string> tokens;
        tokens.push_back("[CLS]");
        for (auto& t : text::tokenize(question)) {
            tokens.push_back(std::move(t));
        }
        tokens.push_back("[SEP]");
        const std::size_t budget = static_cast<std::size_t>(encoder_.config().max_len);
        const std::size_t per_paragraph =
            paragraphs.empty()
                ? 0
                : std::max<std::size_t>(
                      8, (budget - std::min(budget, tokens.size() + paragraphs.size() + 1)) /
                             paragraphs.size());
        std::vector<std::size_t> marker_positions;
        for (const auto& p : paragraphs) {
            marker_positions.push_back(tokens.size());
            tokens.push_back(kPar);
            std::vector<std::string> body = text::tokenize(p.title);
            for (const auto& s : p.sentences) {
                for (auto& t : text::tokenize(s)) {
                    body.push_back(std::move(t));
                }
            }
            if (body.size() > per_paragraph) {
                body.resize(per_paragraph);
            }
            for (auto& t : body) {
                tokens.push_back(std::move(t));
            }
        }
        tokens.push_back("[SEP]");
        if (tokens.size() > budget) {
            throw ContractError("NeuralParagraphScorer: encoded input exceeds max_len");
        }
        nn::Var hidden = encoder_.forward(vocab_.encode(tokens));
        std::vector<int> rows;
        rows.reserve(marker_positions.size());
        for (std::size_t pos : marker_positions) {
            rows.push_back(static_cast<int>(pos));
        }
        nn::Var probs = nn::sigmoid(nn::add_rowvec(
            nn::matmul(nn::gather_rows(hidden, rows), heads_.get("par.w")), heads_.get("par.b")));
        return {probs, marker_positions};
    }

    nn::Vocabulary vocab_;
    nn::TransformerEncoder encoder_;
    nn::ParamStore heads_;
};

}  // namespace stepqa::filter
