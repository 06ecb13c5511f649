#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "stepqa/autograd.hpp"
#include "stepqa/model.hpp"
#include "stepqa/seq2seq.hpp"

using namespace stepqa;
using nn::Matrix;
using nn::Var;

namespace {

// Central finite difference of f with respect to one coordinate of a leaf.
double fd_grad(const std::function<double()>& f, double& coord, double h = 1e-6) {
    const double saved = coord;
    coord = saved + h;
    const double up = f();
    coord = saved - h;
    const double down = f();
    coord = saved;
    return (up - down) / (2.0 * h);
}

double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("autograd matches finite differences through a composite graph", "[nn]") {
    nn::NormalSampler sampler(3);
    Var w = nn::make_var(nn::randn(4, 4, 0.5, sampler), true);
    Var b = nn::make_var(nn::randn(1, 4, 0.5, sampler), true);
    Var g = nn::make_var(Matrix::Ones(1, 4), true);
    Var beta = nn::make_var(Matrix::Zero(1, 4), true);
    Matrix x_val = nn::randn(3, 4, 1.0, sampler);
    Var x = nn::make_var(x_val, true);

    auto compute = [&]() {
        Var h = nn::gelu(nn::add_rowvec(nn::matmul(x, w), b));
        Var normed = nn::layer_norm(h, g, beta);
        Var probs = nn::sigmoid(nn::slice_cols(normed, 0, 1));
        return nn::bce_mean(probs, {1, 0, 1}, {1, 1, 1});
    };

    Var loss = compute();
    nn::backward(loss);

    auto value_of = [&]() { return nn::scalar(compute()); };
    // Sample a few coordinates of every leaf.
    for (auto& [leaf, label] : std::vector<std::pair<Var, const char*>>{
             {w, "w"}, {b, "b"}, {g, "gain"}, {beta, "bias"}, {x, "x"}}) {
        for (Eigen::Index i = 0; i < std::min<Eigen::Index>(leaf->value.rows(), 2); ++i) {
            for (Eigen::Index j = 0; j < std::min<Eigen::Index>(leaf->value.cols(), 2); ++j) {
                const double numeric = fd_grad(value_of, leaf->value(i, j));
                INFO(label << "(" << i << "," << j << ")");
                CHECK(rel_err(numeric, leaf->grad(i, j)) < 1e-5);
            }
        }
    }
}

TEST_CASE("masked log-softmax and cross entropy gradients check out", "[nn]") {
    nn::NormalSampler sampler(11);
    Var logits = nn::make_var(nn::randn(6, 1, 1.0, sampler), true);
    std::vector<std::uint8_t> allowed = {1, 0, 1, 1, 0, 1};

    auto span_loss = [&]() {
        Var lp = nn::log_softmax_masked(logits, allowed);
        return nn::scale(nn::pick(lp, 2), -1.0);
    };
    Var loss = span_loss();
    nn::backward(loss);
    auto value_of = [&]() { return nn::scalar(span_loss()); };
    for (Eigen::Index i = 0; i < 6; ++i) {
        const double numeric = fd_grad(value_of, logits->value(i, 0));
        CHECK(rel_err(numeric, logits->grad(i, 0)) < 1e-5);
    }
    // Disallowed entries carry no gradient and ~zero probability.
    Var lp = nn::log_softmax_masked(logits, allowed);
    CHECK(std::exp(lp->value(1, 0)) == 0.0);
    CHECK(logits->grad(1, 0) == 0.0);

    Var lm_logits = nn::make_var(nn::randn(3, 5, 1.0, sampler), true);
    auto lm_loss = [&]() { return nn::cross_entropy_rows(lm_logits, {1, 4, 0}); };
    Var l2 = lm_loss();
    nn::backward(l2);
    auto lm_value = [&]() { return nn::scalar(lm_loss()); };
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) {
            const double numeric = fd_grad(lm_value, lm_logits->value(i, j));
            CHECK(rel_err(numeric, lm_logits->grad(i, j)) < 1e-5);
        }
    }
}

TEST_CASE("transformer encoder forward is deterministic and differentiable", "[nn]") {
    nn::TransformerConfig cfg;
    cfg.vocab_size = 12;
    cfg.max_len = 16;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.ffn = 32;
    cfg.layers = 2;
    cfg.seed = 9;
    nn::TransformerEncoder enc(cfg);
    const std::vector<int> ids = {1, 4, 7, 2, 2, 9};

    Var h1 = enc.forward(ids);
    Var h2 = enc.forward(ids);
    CHECK((h1->value - h2->value).cwiseAbs().maxCoeff() == 0.0);
    CHECK(h1->value.rows() == 6);
    CHECK(h1->value.cols() == 16);

    // Finite-difference check through the whole stack on one weight.
    auto loss_of = [&]() {
        Var h = enc.forward(ids);
        Var p = nn::sigmoid(nn::slice_cols(nn::row(h, 0), 0, 1));
        return nn::bce_scalar(p, 1);
    };
    Var loss = loss_of();
    nn::backward(loss);
    Var wq = enc.params().get("l0.attn.wq");
    auto value_of = [&]() { return nn::scalar(loss_of()); };
    const double numeric = fd_grad(value_of, wq->value(3, 5));
    CHECK(rel_err(numeric, wq->grad(3, 5)) < 1e-4);
}

TEST_CASE("parameter stores reload bit-identically", "[nn]") {
    nn::TransformerConfig cfg;
    cfg.vocab_size = 10;
    cfg.max_len = 8;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.ffn = 16;
    cfg.layers = 1;
    cfg.seed = 21;
    nn::TransformerEncoder a(cfg);
    std::stringstream buffer;
    a.params().save(buffer);

    nn::TransformerConfig cfg2 = cfg;
    cfg2.seed = 99;  // different init, then overwritten by load
    nn::TransformerEncoder b(cfg2);
    b.params().load(buffer);
    const std::vector<int> ids = {3, 1, 4, 1, 5};
    CHECK((a.forward(ids)->value - b.forward(ids)->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam with the linear schedule drives a quadratic to zero", "[nn]") {
    Var w = nn::make_var(Matrix::Constant(1, 1, 5.0), true);
    nn::Adam adam({w});
    for (int step = 1; step <= 300; ++step) {
        Var loss = nn::mul(w, w);
        nn::backward(loss);
        adam.step(nn::linear_schedule(step, 300, 0.3, 0.1), 0.0);
    }
    CHECK(std::abs(w->value(0, 0)) < 1e-2);
    CHECK(nn::linear_schedule(0, 100, 1.0, 0.1) == 0.0);
    CHECK(nn::linear_schedule(10, 100, 1.0, 0.1) == 1.0);
    CHECK(nn::linear_schedule(100, 100, 1.0, 0.1) == 0.0);
}

TEST_CASE("seq2seq overfits a tiny copy task", "[nn][slow]") {
    std::vector<std::pair<std::string, std::string>> pairs = {
        {"[CLS] red fox [SEP]", "what is the red fox?"},
        {"[CLS] blue bird [SEP]", "what is the blue bird?"},
        {"[CLS] tall tree [SEP]", "what is the tall tree?"},
        {"[CLS] cold river [SEP]", "what is the cold river?"},
    };
    std::vector<std::string> texts;
    for (const auto& [a, b] : pairs) {
        texts.push_back(a);
        texts.push_back(b);
    }
    nn::TransformerConfig cfg;
    cfg.width = 32;
    cfg.heads = 2;
    cfg.ffn = 64;
    cfg.layers = 1;
    cfg.max_len = 24;
    cfg.seed = 17;
    nn::Seq2Seq model(nn::Seq2Seq::build_vocab(texts), cfg);
    nn::Seq2SeqFitOptions opt;
    opt.epochs = 120;
    opt.learning_rate = 3e-3;
    opt.batch_size = 4;
    const double final_loss = model.fit(pairs, opt);
    CHECK(final_loss < 0.1);
    CHECK(model.generate_text("[CLS] red fox [SEP]") == "what is the red fox ?");
    // Greedy decoding is deterministic.
    CHECK(model.generate_text("[CLS] blue bird [SEP]") ==
          model.generate_text("[CLS] blue bird [SEP]"));
}
