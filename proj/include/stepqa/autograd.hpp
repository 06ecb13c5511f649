#pragma once

// Minimal reverse-mode automatic differentiation over Eigen double matrices.
// A Var is a shared node holding a value, an accumulated gradient, and a
// closure that pushes its gradient to its parents. backward() runs the tape
// in reverse topological order from a scalar root.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stepqa/common.hpp"

namespace stepqa::nn {

using Matrix = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;  // lazily allocated, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.size() == 0) {
            grad = Matrix::Zero(value.rows(), value.cols());
        }
    }
};

inline Var make_var(Matrix value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

inline Var constant(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return make_var(std::move(m));
}

inline double scalar(const Var& v) {
    if (v->value.size() != 1) {
        throw ContractError("scalar(): Var is not 1x1");
    }
    return v->value(0, 0);
}

namespace detail {

inline Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->backward_fn = std::move(fn);
    }
    return n;
}

}  // namespace detail

// ---- arithmetic ----

inline Var add(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
        throw ContractError("add: shape mismatch");
    }
    return detail::make_op(a->value + b->value, {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad += self.grad;
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
        throw ContractError("sub: shape mismatch");
    }
    return detail::make_op(a->value - b->value, {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad -= self.grad;
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
        throw ContractError("mul: shape mismatch");
    }
    return detail::make_op(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad.cwiseProduct(b->value);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad += self.grad.cwiseProduct(a->value);
        }
    });
}

inline Var scale(const Var& a, double s) {
    return detail::make_op(a->value * s, {a}, [a, s](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad * s;
        }
    });
}

inline Var matmul(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows()) {
        throw ContractError("matmul: inner dimensions differ");
    }
    return detail::make_op(a->value * b->value, {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad * b->value.transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad += a->value.transpose() * self.grad;
        }
    });
}

// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.cols()) {
        throw ContractError("matmul_nt: inner dimensions differ");
    }
    return detail::make_op(a->value * b->value.transpose(), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad * b->value;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad += self.grad.transpose() * a->value;
        }
    });
}

// Adds a 1 x d row vector to every row of a.
inline Var add_rowvec(const Var& a, const Var& r) {
    if (r->value.rows() != 1 || r->value.cols() != a->value.cols()) {
        throw ContractError("add_rowvec: expected 1 x cols(a) row vector");
    }
    Matrix v = a->value;
    v.rowwise() += r->value.row(0);
    return detail::make_op(std::move(v), {a, r}, [a, r](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad;
        }
        if (r->requires_grad) {
            r->ensure_grad();
            r->grad.row(0) += self.grad.colwise().sum();
        }
    });
}

// ---- structural ----

inline Var gather_rows(const Var& table, std::vector<int> rows) {
    Matrix v(static_cast<Eigen::Index>(rows.size()), table->value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= table->value.rows()) {
            throw ContractError("gather_rows: row index out of range");
        }
        v.row(static_cast<Eigen::Index>(i)) = table->value.row(rows[i]);
    }
    return detail::make_op(std::move(v), {table}, [table, rows = std::move(rows)](Node& self) {
        if (!table->requires_grad) {
            return;
        }
        table->ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            table->grad.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
        }
    });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || n < 0 || start + n > a->value.rows()) {
        throw ContractError("slice_rows: range out of bounds");
    }
    return detail::make_op(a->value.middleRows(start, n), {a}, [a, start, n](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.middleRows(start, n) += self.grad;
        }
    });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || n < 0 || start + n > a->value.cols()) {
        throw ContractError("slice_cols: range out of bounds");
    }
    return detail::make_op(a->value.middleCols(start, n), {a}, [a, start, n](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.middleCols(start, n) += self.grad;
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ContractError("concat_cols: empty input");
    }
    Eigen::Index rows = parts[0]->value.rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) {
            throw ContractError("concat_cols: row count mismatch");
        }
        cols += p->value.cols();
    }
    Matrix v(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p->value.cols()) = p->value;
        at += p->value.cols();
    }
    return detail::make_op(std::move(v), parts, [parts](Node& self) {
        Eigen::Index at = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += self.grad.middleCols(at, p->value.cols());
            }
            at += p->value.cols();
        }
    });
}

inline Var row(const Var& a, Eigen::Index i) {
    return slice_rows(a, i, 1);
}

// Selects a single entry of a column vector as a 1x1 Var.
inline Var pick(const Var& a, Eigen::Index i) {
    if (a->value.cols() != 1 || i < 0 || i >= a->value.rows()) {
        throw ContractError("pick: expected column vector with valid index");
    }
    Matrix v(1, 1);
    v(0, 0) = a->value(i, 0);
    return detail::make_op(std::move(v), {a}, [a, i](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad(i, 0) += self.grad(0, 0);
        }
    });
}

inline Var sum_scalars(const std::vector<Var>& vs) {
    if (vs.empty()) {
        throw ContractError("sum_scalars: empty input");
    }
    double total = 0.0;
    for (const auto& v : vs) {
        if (v->value.size() != 1) {
            throw ContractError("sum_scalars: non-scalar input");
        }
        total += v->value(0, 0);
    }
    Matrix m(1, 1);
    m(0, 0) = total;
    return detail::make_op(std::move(m), vs, [vs](Node& self) {
        for (const auto& v : vs) {
            if (v->requires_grad) {
                v->ensure_grad();
                v->grad(0, 0) += self.grad(0, 0);
            }
        }
    });
}

// ---- nonlinearities ----

inline Var sigmoid(const Var& a) {
    Matrix v = a->value.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return detail::make_op(v, {a}, [a, v](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += self.grad.cwiseProduct(v.cwiseProduct((1.0 - v.array()).matrix()));
        }
    });
}

inline Var gelu(const Var& a) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    constexpr double kCubic = 0.044715;
    Matrix v = a->value.unaryExpr([&](double x) {
        return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x)));
    });
    return detail::make_op(std::move(v), {a}, [a](Node& self) {
        if (!a->requires_grad) {
            return;
        }
        a->ensure_grad();
        Matrix d = a->value.unaryExpr([&](double x) {
            const double inner = kSqrt2OverPi * (x + kCubic * x * x * x);
            const double t = std::tanh(inner);
            const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kCubic * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
        });
        a->grad += self.grad.cwiseProduct(d);
    });
}

// Row-wise layer normalization with learned gain and bias (1 x d each).
inline Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5) {
    const Eigen::Index n = a->value.rows();
    const Eigen::Index d = a->value.cols();
    if (gain->value.rows() != 1 || gain->value.cols() != d || bias->value.rows() != 1 ||
        bias->value.cols() != d) {
        throw ContractError("layer_norm: gain/bias must be 1 x d");
    }
    Matrix xhat(n, d);
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = a->value.row(i).mean();
        const double var = (a->value.row(i).array() - mean).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(i) = is;
        xhat.row(i) = (a->value.row(i).array() - mean) * is;
    }
    Matrix v = xhat;
    v.array().rowwise() *= gain->value.row(0).array();
    v.rowwise() += bias->value.row(0);
    return detail::make_op(std::move(v), {a, gain, bias},
                           [a, gain, bias, xhat, inv_std, d](Node& self) {
        if (gain->requires_grad) {
            gain->ensure_grad();
            gain->grad.row(0) += (self.grad.array() * xhat.array()).colwise().sum().matrix();
        }
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.row(0) += self.grad.colwise().sum();
        }
        if (a->requires_grad) {
            a->ensure_grad();
            const double dd = static_cast<double>(d);
            for (Eigen::Index i = 0; i < self.grad.rows(); ++i) {
                // dL/dxhat for this row
                Eigen::RowVectorXd gxhat =
                    (self.grad.row(i).array() * gain->value.row(0).array()).matrix();
                const double sum_g = gxhat.sum();
                const double sum_gx = (gxhat.array() * xhat.row(i).array()).sum();
                a->grad.row(i) +=
                    (inv_std(i) / dd) *
                    (dd * gxhat.array() - sum_g - xhat.row(i).array() * sum_gx).matrix();
            }
        }
    });
}

// Row-wise softmax of (a + additive_mask). The mask is a constant matrix
// (0 or -inf entries) and does not participate in differentiation.
inline Var softmax_rows(const Var& a, const Matrix* additive_mask = nullptr) {
    Matrix logits = a->value;
    if (additive_mask != nullptr) {
        if (additive_mask->rows() != logits.rows() || additive_mask->cols() != logits.cols()) {
            throw ContractError("softmax_rows: mask shape mismatch");
        }
        logits += *additive_mask;
    }
    Matrix v(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
        v.row(i) = (e / e.sum()).matrix();
    }
    return detail::make_op(v, {a}, [a, v](Node& self) {
        if (!a->requires_grad) {
            return;
        }
        a->ensure_grad();
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            const double dot = (self.grad.row(i).array() * v.row(i).array()).sum();
            a->grad.row(i) +=
                (v.row(i).array() * (self.grad.row(i).array() - dot)).matrix();
        }
    });
}

// Log-softmax over the allowed entries of a column vector. Disallowed
// entries get a large negative constant and zero gradient.
inline Var log_softmax_masked(const Var& a, const std::vector<std::uint8_t>& allowed) {
    if (a->value.cols() != 1 ||
        allowed.size() != static_cast<std::size_t>(a->value.rows())) {
        throw ContractError("log_softmax_masked: expected column vector with aligned mask");
    }
    constexpr double kNegInf = -1e30;
    bool any = false;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < allowed.size(); ++i) {
        if (allowed[i]) {
            any = true;
            mx = std::max(mx, a->value(static_cast<Eigen::Index>(i), 0));
        }
    }
    if (!any) {
        throw ContractError("log_softmax_masked: no allowed positions");
    }
    double z = 0.0;
    for (std::size_t i = 0; i < allowed.size(); ++i) {
        if (allowed[i]) {
            z += std::exp(a->value(static_cast<Eigen::Index>(i), 0) - mx);
        }
    }
    const double log_z = std::log(z) + mx;
    Matrix v(a->value.rows(), 1);
    for (std::size_t i = 0; i < allowed.size(); ++i) {
        v(static_cast<Eigen::Index>(i), 0) =
            allowed[i] ? a->value(static_cast<Eigen::Index>(i), 0) - log_z : kNegInf;
    }
    return detail::make_op(std::move(v), {a}, [a, allowed, log_z](Node& self) {
        if (!a->requires_grad) {
            return;
        }
        a->ensure_grad();
        double g_total = 0.0;
        for (std::size_t i = 0; i < allowed.size(); ++i) {
            if (allowed[i]) {
                g_total += self.grad(static_cast<Eigen::Index>(i), 0);
            }
        }
        for (std::size_t i = 0; i < allowed.size(); ++i) {
            if (!allowed[i]) {
                continue;
            }
            const auto idx = static_cast<Eigen::Index>(i);
            const double p = std::exp(a->value(idx, 0) - log_z);
            a->grad(idx, 0) += self.grad(idx, 0) - p * g_total;
        }
    });
}

// Mean token-level negative log likelihood: softmax over each logits row
// against the aligned target index.
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
    const auto n = static_cast<std::size_t>(logits->value.rows());
    if (targets.size() != n || n == 0) {
        throw ContractError("cross_entropy_rows: misaligned targets");
    }
    double total = 0.0;
    Eigen::VectorXd log_z(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto idx = static_cast<Eigen::Index>(i);
        if (targets[i] < 0 || targets[i] >= logits->value.cols()) {
            throw ContractError("cross_entropy_rows: target id out of range");
        }
        const double mx = logits->value.row(idx).maxCoeff();
        const double z = (logits->value.row(idx).array() - mx).exp().sum();
        log_z(idx) = std::log(z) + mx;
        total += log_z(idx) - logits->value(idx, targets[i]);
    }
    Matrix v(1, 1);
    v(0, 0) = total / static_cast<double>(n);
    return detail::make_op(std::move(v), {logits},
                           [logits, targets, log_z](Node& self) {
        if (!logits->requires_grad) {
            return;
        }
        logits->ensure_grad();
        const double g = self.grad(0, 0) / static_cast<double>(targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto idx = static_cast<Eigen::Index>(i);
            logits->grad.row(idx) +=
                g * (logits->value.row(idx).array() - log_z(idx)).exp().matrix();
            logits->grad(idx, targets[i]) -= g;
        }
    });
}

// Mean binary cross entropy over the unmasked entries of a probability
// column vector, with probabilities clamped to [eps, 1 - eps].
inline Var bce_mean(const Var& probs, const std::vector<int>& labels,
                    const std::vector<int>& mask, double eps = 1e-12) {
    const auto n = static_cast<std::size_t>(probs->value.rows());
    if (probs->value.cols() != 1 || labels.size() != n || mask.size() != n) {
        throw ContractError("bce_mean: misaligned inputs");
    }
    std::size_t active = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) {
            continue;
        }
        ++active;
        const double p = std::clamp(probs->value(static_cast<Eigen::Index>(i), 0), eps, 1.0 - eps);
        total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    if (active == 0) {
        throw ContractError("bce_mean: no unmasked entries");
    }
    Matrix v(1, 1);
    v(0, 0) = total / static_cast<double>(active);
    return detail::make_op(std::move(v), {probs},
                           [probs, labels, mask, eps, active](Node& self) {
        if (!probs->requires_grad) {
            return;
        }
        probs->ensure_grad();
        const double g = self.grad(0, 0) / static_cast<double>(active);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!mask[i]) {
                continue;
            }
            const auto idx = static_cast<Eigen::Index>(i);
            const double raw = probs->value(idx, 0);
            if (raw < eps || raw > 1.0 - eps) {
                continue;  // clamped region has zero gradient
            }
            probs->grad(idx, 0) += g * (labels[i] ? -1.0 / raw : 1.0 / (1.0 - raw));
        }
    });
}

inline Var bce_scalar(const Var& p, int label, double eps = 1e-12) {
    return bce_mean(p, {label}, {1}, eps);
}

// ---- tape execution ----

inline void backward(const Var& root) {
    if (root->value.size() != 1) {
        throw ContractError("backward: root must be scalar");
    }
    // Iterative topological sort (graphs can be deep for long training traces).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* node = stack.back().first;
        const std::size_t next = stack.back().second;
        if (next < node->parents.size()) {
            stack.back().second = next + 1;
            Node* parent = node->parents[next].get();
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// ---- parameters and optimization ----

// Deterministic Box-Muller normal sampler (independent of the standard
// library's distribution implementation).
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

    double operator()() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double uniform() {
        return static_cast<double>(rng_() >> 11) * (1.0 / 9007199254740992.0);
    }

private:
    std::mt19937_64 rng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline Matrix randn(Eigen::Index rows, Eigen::Index cols, double stddev, NormalSampler& sampler) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = stddev * sampler();
        }
    }
    return m;
}

// Named parameter collection with binary (de)serialization. Loading restores
// values bit-exactly.
class ParamStore {
public:
    Var add(const std::string& name, Matrix init) {
        for (const auto& [n, v] : items_) {
            if (n == name) {
                throw ContractError("ParamStore: duplicate parameter name " + name);
            }
        }
        Var v = make_var(std::move(init), true);
        items_.emplace_back(name, v);
        return v;
    }

    Var get(const std::string& name) const {
        for (const auto& [n, v] : items_) {
            if (n == name) {
                return v;
            }
        }
        throw ContractError("ParamStore: unknown parameter " + name);
    }

    std::vector<Var> vars() const {
        std::vector<Var> out;
        out.reserve(items_.size());
        for (const auto& [n, v] : items_) {
            out.push_back(v);
        }
        return out;
    }

    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

    void zero_grads() {
        for (auto& [n, v] : items_) {
            if (v->grad.size() != 0) {
                v->grad.setZero();
            }
        }
    }

    void save(std::ostream& out) const {
        const char magic[4] = {'S', 'Q', 'P', 'M'};
        out.write(magic, 4);
        const std::uint64_t count = items_.size();
        out.write(reinterpret_cast<const char*>(&count), sizeof(count));
        for (const auto& [name, v] : items_) {
            const std::uint64_t len = name.size();
            out.write(reinterpret_cast<const char*>(&len), sizeof(len));
            out.write(name.data(), static_cast<std::streamsize>(len));
            const std::int64_t rows = v->value.rows();
            const std::int64_t cols = v->value.cols();
            out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
            out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
            out.write(reinterpret_cast<const char*>(v->value.data()),
                      static_cast<std::streamsize>(sizeof(double)) * rows * cols);
        }
    }

    void load(std::istream& in) {
        char magic[4];
        in.read(magic, 4);
        if (!in || magic[0] != 'S' || magic[1] != 'Q' || magic[2] != 'P' || magic[3] != 'M') {
            throw ParseError("ParamStore: bad checkpoint magic");
        }
        std::uint64_t count = 0;
        in.read(reinterpret_cast<char*>(&count), sizeof(count));
        if (count != items_.size()) {
            throw ParseError("ParamStore: checkpoint has " + std::to_string(count) +
                             " tensors, model expects " + std::to_string(items_.size()));
        }
        for (auto& [name, v] : items_) {
            std::uint64_t len = 0;
            in.read(reinterpret_cast<char*>(&len), sizeof(len));
            std::string stored(len, '\0');
            in.read(stored.data(), static_cast<std::streamsize>(len));
            if (stored != name) {
                throw ParseError("ParamStore: tensor name mismatch: expected " + name + ", got " +
                                 stored);
            }
            std::int64_t rows = 0;
            std::int64_t cols = 0;
            in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
            in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
            if (rows != v->value.rows() || cols != v->value.cols()) {
                throw ParseError("ParamStore: tensor shape mismatch for " + name);
            }
            in.read(reinterpret_cast<char*>(v->value.data()),
                    static_cast<std::streamsize>(sizeof(double)) * rows * cols);
            if (!in) {
                throw ParseError("ParamStore: truncated checkpoint while reading " + name);
            }
        }
    }

private:
    std::vector<std::pair<std::string, Var>> items_;
};

// Adam with global-norm gradient clipping. State is kept aligned with the
// parameter list passed at construction.
class Adam {
public:
    explicit Adam(std::vector<Var> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }

    long step_count() const { return step_; }
    void set_step_count(long s) { step_ = s; }

    void step(double lr, double clip_norm) {
        double sq = 0.0;
        for (const auto& p : params_) {
            if (p->grad.size() != 0) {
                sq += p->grad.squaredNorm();
            }
        }
        const double norm = std::sqrt(sq);
        const double scale_by = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (p->grad.size() == 0) {
                continue;
            }
            const Matrix g = p->grad * scale_by;
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
            const Matrix mhat = m_[i] / bc1;
            const Matrix vhat = v_[i] / bc2;
            p->value -=
                lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
            p->grad.setZero();
        }
    }

    void save(std::ostream& out) const {
        out.write(reinterpret_cast<const char*>(&step_), sizeof(step_));
        auto dump = [&](const std::vector<Matrix>& ms) {
            for (const auto& m : ms) {
                out.write(reinterpret_cast<const char*>(m.data()),
                          static_cast<std::streamsize>(sizeof(double)) * m.size());
            }
        };
        dump(m_);
        dump(v_);
    }

    void load(std::istream& in) {
        in.read(reinterpret_cast<char*>(&step_), sizeof(step_));
        auto slurp = [&](std::vector<Matrix>& ms) {
            for (auto& m : ms) {
                in.read(reinterpret_cast<char*>(m.data()),
                        static_cast<std::streamsize>(sizeof(double)) * m.size());
            }
        };
        slurp(m_);
        slurp(v_);
        if (!in) {
            throw ParseError("Adam: truncated optimizer state");
        }
    }

private:
    std::vector<Var> params_;
    std::vector<Matrix> m_, v_;
    double beta1_, beta2_, eps_;
    long step_ = 0;
};

// Linear warmup to peak, then linear decay to zero at total_steps.
inline double linear_schedule(long step, long total_steps, double peak_lr,
                              double warmup_fraction) {
    if (total_steps <= 0) {
        return peak_lr;
    }
    const long warmup = std::max<long>(
        1, static_cast<long>(warmup_fraction * static_cast<double>(total_steps)));
    if (step <= warmup) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (step >= total_steps) {
        return 0.0;
    }
    return peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

}  // namespace stepqa::nn
