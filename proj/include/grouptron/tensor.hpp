#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grouptron/errors.hpp"

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Tensors are value types sharing an immutable-after-creation buffer; only
// gradient buffers mutate after construction. A Tape, while alive on the
// current thread, records every op whose inputs require gradients; calling
// backward(loss) replays the recorded ops in reverse. Parallel evaluation
// requires one Tape per thread.

namespace grouptron {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "{";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "}";
}

} // namespace detail

struct TensorNode {
    Shape shape;
    std::vector<double> v;
    std::vector<double> g; // empty until first needed
    bool requires_grad = false;

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one axis");
        for (std::size_t d : shape)
            if (d == 0) throw std::invalid_argument("tensor axes must be non-empty");
        auto n = std::make_shared<TensorNode>();
        n->v.assign(detail::shape_numel(shape), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        Tensor t = zeros({1, 1}, requires_grad);
        t.data()[0] = value;
        return t;
    }

    static Tensor row(const std::vector<double>& values, bool requires_grad = false) {
        if (values.empty()) throw std::invalid_argument("row tensor needs at least one value");
        Tensor t = zeros({1, values.size()}, requires_grad);
        t.data() = values;
        return t;
    }

    static Tensor from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
        if (rows.empty() || rows[0].empty()) throw std::invalid_argument("from_rows needs a non-empty matrix");
        Tensor t = zeros({rows.size(), rows[0].size()}, requires_grad);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows[0].size()) throw std::invalid_argument("from_rows: ragged rows");
            std::copy(rows[i].begin(), rows[i].end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * rows[0].size()));
        }
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->v.size(); }
    std::size_t rows() const { return node_->shape[0]; }
    std::size_t cols() const { return node_->shape.back(); }

    std::vector<double>& data() { return node_->v; }
    const std::vector<double>& data() const { return node_->v; }

    // Gradient buffer, allocated (zero-filled) on first access.
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->g;
    }
    bool has_grad() const { return !node_->g.empty(); }
    void zero_grad() {
        if (!node_->g.empty()) std::fill(node_->g.begin(), node_->g.end(), 0.0);
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    double value() const {
        if (numel() != 1) throw std::invalid_argument("value() requires a single-element tensor");
        return node_->v[0];
    }
    double at(std::size_t i, std::size_t j) const {
        if (rank() != 2) throw std::invalid_argument("at(i,j) requires rank 2");
        return node_->v[i * shape()[1] + j];
    }
    double at(std::size_t t, std::size_t i, std::size_t j) const {
        if (rank() != 3) throw std::invalid_argument("at(t,i,j) requires rank 3");
        return node_->v[(t * shape()[1] + i) * shape()[2] + j];
    }

    const std::shared_ptr<TensorNode>& handle() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

class Tape;

namespace detail {
inline std::vector<Tape*>& tape_stack() {
    thread_local std::vector<Tape*> stack;
    return stack;
}
} // namespace detail

// Records backward rules for ops executed while it is the innermost live
// Tape on this thread. backward(loss) zeroes the gradients of every op
// output it recorded, seeds d(loss)/d(loss) = 1 and replays the rules in
// reverse, so leaf gradients accumulate across repeated backward calls.
class Tape {
  public:
    Tape() { detail::tape_stack().push_back(this); }
    ~Tape() { detail::tape_stack().pop_back(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() {
        auto& s = detail::tape_stack();
        return s.empty() ? nullptr : s.back();
    }

    void record(std::shared_ptr<TensorNode> output, std::function<void()> rule) {
        outputs_.push_back(std::move(output));
        rules_.push_back(std::move(rule));
    }

    std::size_t size() const { return rules_.size(); }

    void backward(const Tensor& loss) {
        if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
        for (auto& n : outputs_)
            if (!n->g.empty()) std::fill(n->g.begin(), n->g.end(), 0.0);
        loss.handle()->ensure_grad();
        loss.handle()->g[0] += 1.0;
        for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    }

  private:
    std::vector<std::function<void()>> rules_;
    std::vector<std::shared_ptr<TensorNode>> outputs_;
};

namespace detail {

inline void check_finite(const char* op, const Tensor& t) {
    for (double x : t.data())
        if (!std::isfinite(x)) throw numeric_error(std::string("non-finite value produced by ") + op);
}

inline bool want_grad(const Tensor& a) { return Tape::current() && a.requires_grad(); }
inline bool want_grad(const Tensor& a, const Tensor& b) {
    return Tape::current() && (a.requires_grad() || b.requires_grad());
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

// C[n,m] += A[n,k] * B[k,m]
inline void mm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[n,k] += A[n,m] * B^T, B is [k,m]
inline void mm_acc_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k,m] += A^T * B, A is [n,k], B is [n,m]
inline void mm_acc_at(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Fwd>
Tensor unary_elementwise(const char* op, const Tensor& a, Fwd fwd, std::function<double(double, double, double)> dfn) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = fwd(a.data()[i]);
    check_finite(op, out);
    if (want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle();
        auto on = out.handle();
        Tape::current()->record(on, [an, on, dfn] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < an->v.size(); ++i) an->g[i] += dfn(an->v[i], on->v[i], on->g[i]);
        });
    }
    return out;
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::check_finite("add", out);
    if (detail::want_grad(a, b)) {
        out.set_requires_grad(true);
        auto an = a.handle(), bn = b.handle(), on = out.handle();
        Tape::current()->record(on, [an, bn, on] {
            if (on->g.empty()) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < an->v.size(); ++i) an->g[i] += on->g[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < bn->v.size(); ++i) bn->g[i] += on->g[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    detail::check_finite("sub", out);
    if (detail::want_grad(a, b)) {
        out.set_requires_grad(true);
        auto an = a.handle(), bn = b.handle(), on = out.handle();
        Tape::current()->record(on, [an, bn, on] {
            if (on->g.empty()) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < an->v.size(); ++i) an->g[i] += on->g[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < bn->v.size(); ++i) bn->g[i] -= on->g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    detail::check_finite("mul", out);
    if (detail::want_grad(a, b)) {
        out.set_requires_grad(true);
        auto an = a.handle(), bn = b.handle(), on = out.handle();
        Tape::current()->record(on, [an, bn, on] {
            if (on->g.empty()) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < an->v.size(); ++i) an->g[i] += on->g[i] * bn->v[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < bn->v.size(); ++i) bn->g[i] += on->g[i] * an->v[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_elementwise(
        "scale", a, [c](double x) { return c * x; },
        [c](double, double, double go) { return c * go; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    return detail::unary_elementwise(
        "add_scalar", a, [c](double x) { return x + c; },
        [](double, double, double go) { return go; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_elementwise(
        "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y, double go) { return go * y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_elementwise(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y, double go) { return go * (1.0 - y * y); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_elementwise(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double, double go) { return x > 0.0 ? go : 0.0; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary_elementwise(
        "log", a, [](double x) { return std::log(x); },
        [](double x, double, double go) { return go / x; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_elementwise(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double y, double go) { return go * y; });
}

// x: any rank with last axis m, bias: {1, m}; bias is added to every slice.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 2 || bias.shape()[0] != 1 || bias.cols() != x.cols())
        throw std::invalid_argument("add_bias: bias must be {1," + std::to_string(x.cols()) + "}, got " +
                                    detail::shape_str(bias.shape()));
    const std::size_t m = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] + bias.data()[i % m];
    detail::check_finite("add_bias", out);
    if (detail::want_grad(x, bias)) {
        out.set_requires_grad(true);
        auto xn = x.handle(), bn = bias.handle(), on = out.handle();
        Tape::current()->record(on, [xn, bn, on, m] {
            if (on->g.empty()) return;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < xn->v.size(); ++i) xn->g[i] += on->g[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->g.size(); ++i) bn->g[i % m] += on->g[i];
            }
        });
    }
    return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                                    detail::shape_str(b.shape()));
    const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    detail::mm_acc(a.data().data(), b.data().data(), out.data().data(), n, k, m);
    detail::check_finite("matmul", out);
    if (detail::want_grad(a, b)) {
        out.set_requires_grad(true);
        auto an = a.handle(), bn = b.handle(), on = out.handle();
        Tape::current()->record(on, [an, bn, on, n, k, m] {
            if (on->g.empty()) return;
            if (an->requires_grad) {
                an->ensure_grad();
                detail::mm_acc_bt(on->g.data(), bn->v.data(), an->g.data(), n, m, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::mm_acc_at(an->v.data(), on->g.data(), bn->g.data(), n, k, m);
            }
        });
    }
    return out;
}

// Batched product for graph convolution: a {B,n,k} x b {B,k,m} -> {B,n,m}.
inline Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1])
        throw std::invalid_argument("bmm: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                                    detail::shape_str(b.shape()));
    const std::size_t bs = a.shape()[0], n = a.shape()[1], k = a.shape()[2], m = b.shape()[2];
    Tensor out = Tensor::zeros({bs, n, m});
    for (std::size_t s = 0; s < bs; ++s)
        detail::mm_acc(a.data().data() + s * n * k, b.data().data() + s * k * m, out.data().data() + s * n * m, n, k,
                       m);
    detail::check_finite("bmm", out);
    if (detail::want_grad(a, b)) {
        out.set_requires_grad(true);
        auto an = a.handle(), bn = b.handle(), on = out.handle();
        Tape::current()->record(on, [an, bn, on, bs, n, k, m] {
            if (on->g.empty()) return;
            for (std::size_t s = 0; s < bs; ++s) {
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::mm_acc_bt(on->g.data() + s * n * m, bn->v.data() + s * k * m, an->g.data() + s * n * k, n,
                                      m, k);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::mm_acc_at(an->v.data() + s * n * k, on->g.data() + s * n * m, bn->g.data() + s * k * m, n,
                                      k, m);
                }
            }
        });
    }
    return out;
}

// Shared right factor: a {B,n,k} x w {k,m} -> {B,n,m}; w gradients sum over the batch.
inline Tensor bmm_shared(const Tensor& a, const Tensor& w) {
    if (a.rank() != 3 || w.rank() != 2 || a.shape()[2] != w.shape()[0])
        throw std::invalid_argument("bmm_shared: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                                    detail::shape_str(w.shape()));
    const std::size_t bs = a.shape()[0], n = a.shape()[1], k = a.shape()[2], m = w.shape()[1];
    Tensor out = Tensor::zeros({bs, n, m});
    detail::mm_acc(a.data().data(), w.data().data(), out.data().data(), bs * n, k, m);
    detail::check_finite("bmm_shared", out);
    if (detail::want_grad(a, w)) {
        out.set_requires_grad(true);
        auto an = a.handle(), wn = w.handle(), on = out.handle();
        Tape::current()->record(on, [an, wn, on, bs, n, k, m] {
            if (on->g.empty()) return;
            if (an->requires_grad) {
                an->ensure_grad();
                detail::mm_acc_bt(on->g.data(), wn->v.data(), an->g.data(), bs * n, m, k);
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                detail::mm_acc_at(an->v.data(), on->g.data(), wn->g.data(), bs * n, k, m);
            }
        });
    }
    return out;
}

// Concatenate along the last axis; leading axes must match.
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank())
        throw std::invalid_argument("concat_last: rank mismatch");
    for (std::size_t i = 0; i + 1 < a.rank(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw std::invalid_argument("concat_last: leading shape mismatch " + detail::shape_str(a.shape()) +
                                        " vs " + detail::shape_str(b.shape()));
    const std::size_t la = a.cols(), lb = b.cols();
    Shape os = a.shape();
    os.back() = la + lb;
    Tensor out = Tensor::zeros(os);
    const std::size_t rows = a.numel() / la;
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * la), la,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * (la + lb)));
        std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(r * lb), lb,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * (la + lb) + la));
    }
    if (detail::want_grad(a, b)) {
        out.set_requires_grad(true);
        auto an = a.handle(), bn = b.handle(), on = out.handle();
        Tape::current()->record(on, [an, bn, on, rows, la, lb] {
            if (on->g.empty()) return;
            for (std::size_t r = 0; r < rows; ++r) {
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (std::size_t j = 0; j < la; ++j) an->g[r * la + j] += on->g[r * (la + lb) + j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t j = 0; j < lb; ++j) bn->g[r * lb + j] += on->g[r * (la + lb) + la + j];
                }
            }
        });
    }
    return out;
}

// Columns [lo, hi) of the last axis.
inline Tensor slice_last(const Tensor& a, std::size_t lo, std::size_t hi) {
    const std::size_t last = a.cols();
    if (lo >= hi || hi > last)
        throw std::invalid_argument("slice_last: bad range [" + std::to_string(lo) + "," + std::to_string(hi) +
                                    ") for axis of size " + std::to_string(last));
    Shape os = a.shape();
    os.back() = hi - lo;
    Tensor out = Tensor::zeros(os);
    const std::size_t rows = a.numel() / last, w = hi - lo;
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * last + lo), w,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * w));
    if (detail::want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, rows, last, lo, w] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < w; ++j) an->g[r * last + lo + j] += on->g[r * w + j];
        });
    }
    return out;
}

// Select index i of the leading axis: {T,n,c} -> {n,c}; {n,m} -> {1,m}.
inline Tensor take(const Tensor& a, std::size_t i) {
    if (a.rank() < 2 || i >= a.shape()[0])
        throw std::invalid_argument("take: index " + std::to_string(i) + " out of range for " +
                                    detail::shape_str(a.shape()));
    Shape os;
    if (a.rank() == 2)
        os = {1, a.shape()[1]};
    else
        os.assign(a.shape().begin() + 1, a.shape().end());
    const std::size_t slab = a.numel() / a.shape()[0];
    Tensor out = Tensor::zeros(os);
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(i * slab), slab, out.data().begin());
    if (detail::want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, i, slab] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t j = 0; j < slab; ++j) an->g[i * slab + j] += on->g[j];
        });
    }
    return out;
}

// Stack rank-2 tensors {r,c} along a new middle axis -> {r,N,c}.
inline Tensor stack_axis1(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_axis1: empty input");
    const std::size_t r = parts[0].shape()[0], c = parts[0].shape()[1], n = parts.size();
    for (const auto& p : parts)
        if (p.rank() != 2 || p.shape()[0] != r || p.shape()[1] != c)
            throw std::invalid_argument("stack_axis1: mismatched part shapes");
    Tensor out = Tensor::zeros({r, n, c});
    bool any_grad = false;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t t = 0; t < r; ++t)
            std::copy_n(parts[s].data().begin() + static_cast<std::ptrdiff_t>(t * c), c,
                        out.data().begin() + static_cast<std::ptrdiff_t>((t * n + s) * c));
        any_grad = any_grad || parts[s].requires_grad();
    }
    if (Tape::current() && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode>> hs;
        hs.reserve(n);
        for (const auto& p : parts) hs.push_back(p.handle());
        auto on = out.handle();
        Tape::current()->record(on, [hs, on, r, c, n] {
            if (on->g.empty()) return;
            for (std::size_t s = 0; s < n; ++s) {
                if (!hs[s]->requires_grad) continue;
                hs[s]->ensure_grad();
                for (std::size_t t = 0; t < r; ++t)
                    for (std::size_t j = 0; j < c; ++j) hs[s]->g[t * c + j] += on->g[(t * n + s) * c + j];
            }
        });
    }
    return out;
}

// Stack rank-2 tensors {1,c} (or {r,c}) along axis 0 -> {sum r, c}.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    const std::size_t c = parts[0].shape().back();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape()[1] != c) throw std::invalid_argument("concat_rows: mismatched part shapes");
        total += p.shape()[0];
    }
    Tensor out = Tensor::zeros({total, c});
    bool any_grad = false;
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
        off += p.numel();
        any_grad = any_grad || p.requires_grad();
    }
    if (Tape::current() && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode>> hs;
        hs.reserve(parts.size());
        for (const auto& p : parts) hs.push_back(p.handle());
        auto on = out.handle();
        Tape::current()->record(on, [hs, on] {
            if (on->g.empty()) return;
            std::size_t pos = 0;
            for (const auto& h : hs) {
                if (h->requires_grad) {
                    h->ensure_grad();
                    for (std::size_t j = 0; j < h->v.size(); ++j) h->g[j] += on->g[pos + j];
                }
                pos += h->v.size();
            }
        });
    }
    return out;
}

inline Tensor repeat_rows(const Tensor& a, std::size_t n) {
    if (a.rank() != 2 || a.shape()[0] != 1) throw std::invalid_argument("repeat_rows: input must be {1,m}");
    const std::size_t m = a.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t r = 0; r < n; ++r)
        std::copy(a.data().begin(), a.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * m));
    if (detail::want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, n, m] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < m; ++j) an->g[j] += on->g[r * m + j];
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (detail::shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch " + detail::shape_str(a.shape()) + " -> " +
                                    detail::shape_str(shape));
    Tensor out = Tensor::zeros(std::move(shape));
    out.data() = a.data();
    if (detail::want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < an->v.size(); ++i) an->g[i] += on->g[i];
        });
    }
    return out;
}

namespace detail {

inline Tensor reduce_all(const char* op, const Tensor& a, bool mean) {
    Tensor out = Tensor::zeros({1, 1});
    out.data()[0] = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    const double w = mean ? 1.0 / static_cast<double>(a.numel()) : 1.0;
    out.data()[0] *= w;
    check_finite(op, out);
    if (want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, w] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < an->v.size(); ++i) an->g[i] += w * on->g[0];
        });
    }
    return out;
}

} // namespace detail

inline Tensor sum_all(const Tensor& a) { return detail::reduce_all("sum_all", a, false); }
inline Tensor mean_all(const Tensor& a) { return detail::reduce_all("mean_all", a, true); }

namespace detail {

// Reduce axis 0 of a rank-2 tensor: {n,m} -> {1,m}.
inline Tensor reduce_rows(const char* op, const Tensor& a, bool mean) {
    if (a.rank() != 2) throw std::invalid_argument(std::string(op) + ": rank-2 input required");
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    const double w = mean ? 1.0 / static_cast<double>(n) : 1.0;
    Tensor out = Tensor::zeros({1, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data()[j] += w * a.data()[i * m + j];
    check_finite(op, out);
    if (want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, n, m, w] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) an->g[i * m + j] += w * on->g[j];
        });
    }
    return out;
}

} // namespace detail

inline Tensor sum_rows(const Tensor& a) { return detail::reduce_rows("sum_rows", a, false); }
inline Tensor mean_rows(const Tensor& a) { return detail::reduce_rows("mean_rows", a, true); }

// Sum the last axis of a rank-2 tensor: {n,m} -> {n,1}.
inline Tensor sum_cols(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("sum_cols: rank-2 input required");
    const std::size_t n = a.shape()[0], m = a.shape()[1];
    Tensor out = Tensor::zeros({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data()[i] += a.data()[i * m + j];
    detail::check_finite("sum_cols", out);
    if (detail::want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, n, m] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) an->g[i * m + j] += on->g[i];
        });
    }
    return out;
}

// Mean over the middle axis of a rank-3 tensor: {T,n,c} -> {T,c}.
inline Tensor mean_axis1(const Tensor& a) {
    if (a.rank() != 3) throw std::invalid_argument("mean_axis1: rank-3 input required");
    const std::size_t t = a.shape()[0], n = a.shape()[1], c = a.shape()[2];
    const double w = 1.0 / static_cast<double>(n);
    Tensor out = Tensor::zeros({t, c});
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) out.data()[s * c + j] += w * a.data()[(s * n + i) * c + j];
    detail::check_finite("mean_axis1", out);
    if (detail::want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, t, n, c, w] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t s = 0; s < t; ++s)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) an->g[(s * n + i) * c + j] += w * on->g[s * c + j];
        });
    }
    return out;
}

namespace detail {

template <bool Log>
Tensor softmax_impl(const char* op, const Tensor& a) {
    const std::size_t m = a.cols();
    const std::size_t rows = a.numel() / m;
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = a.data().data() + r * m;
        double* o = out.data().data() + r * m;
        const double mx = *std::max_element(in, in + m);
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += std::exp(in[j] - mx);
        if constexpr (Log) {
            const double ls = std::log(s);
            for (std::size_t j = 0; j < m; ++j) o[j] = in[j] - mx - ls;
        } else {
            for (std::size_t j = 0; j < m; ++j) o[j] = std::exp(in[j] - mx) / s;
        }
    }
    check_finite(op, out);
    if (want_grad(a)) {
        out.set_requires_grad(true);
        auto an = a.handle(), on = out.handle();
        Tape::current()->record(on, [an, on, rows, m] {
            if (on->g.empty()) return;
            an->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = on->v.data() + r * m;
                const double* go = on->g.data() + r * m;
                double* gi = an->g.data() + r * m;
                if constexpr (Log) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += go[j];
                    for (std::size_t j = 0; j < m; ++j) gi[j] += go[j] - std::exp(y[j]) * s;
                } else {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += go[j] * y[j];
                    for (std::size_t j = 0; j < m; ++j) gi[j] += y[j] * (go[j] - s);
                }
            }
        });
    }
    return out;
}

} // namespace detail

inline Tensor softmax_last(const Tensor& a) { return detail::softmax_impl<false>("softmax_last", a); }
inline Tensor log_softmax_last(const Tensor& a) { return detail::softmax_impl<true>("log_softmax_last", a); }

// Temporal 1-D convolution with same-padding along the leading (time) axis.
// x: {T,Cin} or {T,n,Cin}; kernel: {k,Cin,Cout}, k odd. Output replaces Cin
// with Cout and keeps the other axes.
inline Tensor temporal_conv(const Tensor& x, const Tensor& kernel) {
    if (kernel.rank() != 3 || kernel.shape()[0] % 2 == 0)
        throw std::invalid_argument("temporal_conv: kernel must be {k,Cin,Cout} with odd k");
    if (x.rank() != 2 && x.rank() != 3) throw std::invalid_argument("temporal_conv: input must be rank 2 or 3");
    const std::size_t k = kernel.shape()[0], cin = kernel.shape()[1], cout = kernel.shape()[2];
    if (x.cols() != cin)
        throw std::invalid_argument("temporal_conv: channel mismatch " + detail::shape_str(x.shape()) + " vs kernel " +
                                    detail::shape_str(kernel.shape()));
    const std::size_t t = x.shape()[0];
    const std::size_t n = x.rank() == 3 ? x.shape()[1] : 1;
    const std::size_t off = k / 2;
    Shape os = x.shape();
    os.back() = cout;
    Tensor out = Tensor::zeros(os);
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + j) - static_cast<std::ptrdiff_t>(off);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
            detail::mm_acc(x.data().data() + static_cast<std::size_t>(src) * n * cin,
                           kernel.data().data() + j * cin * cout, out.data().data() + s * n * cout, n, cin, cout);
        }
    detail::check_finite("temporal_conv", out);
    if (detail::want_grad(x, kernel)) {
        out.set_requires_grad(true);
        auto xn = x.handle(), kn = kernel.handle(), on = out.handle();
        Tape::current()->record(on, [xn, kn, on, t, n, k, cin, cout, off] {
            if (on->g.empty()) return;
            for (std::size_t s = 0; s < t; ++s)
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + j) - static_cast<std::ptrdiff_t>(off);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
                    if (xn->requires_grad) {
                        xn->ensure_grad();
                        detail::mm_acc_bt(on->g.data() + s * n * cout, kn->v.data() + j * cin * cout,
                                          xn->g.data() + static_cast<std::size_t>(src) * n * cin, n, cout, cin);
                    }
                    if (kn->requires_grad) {
                        kn->ensure_grad();
                        detail::mm_acc_at(xn->v.data() + static_cast<std::size_t>(src) * n * cin,
                                          on->g.data() + s * n * cout, kn->g.data() + j * cin * cout, n, cin, cout);
                    }
                }
        });
    }
    return out;
}

// --- Gradient verification -------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // elements excluded as sitting on a kink
    bool pass = true;
};

// Compares tape gradients of f() against central finite differences for every
// element of the given tensors. Relative error uses a unit floor in the
// denominator so near-zero gradients are compared absolutely. Elements where
// the one-sided slopes disagree (a relu kink within ~10h of the evaluation
// point moves across the stencil) are excluded and counted as skipped.
template <typename F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor>& xs, double h = 1e-5, double tol = 1e-5) {
    GradCheckReport report;
    for (const auto& x : xs) x.handle()->g.clear();
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = f();
        tape.backward(loss);
    }
    for (const auto& x : xs) {
        x.handle()->ensure_grad();
        analytic.push_back(x.handle()->g);
        x.handle()->g.clear();
    }
    const double f0 = f().value();
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
        auto& v = xs[xi].handle()->v;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            v[i] = saved + h;
            const double fp = f().value();
            v[i] = saved - h;
            const double fm = f().value();
            v[i] = saved;
            const double fwd = (fp - f0) / h;
            const double bwd = (f0 - fm) / h;
            if (std::abs(fwd - bwd) > std::max(1e-3, 0.05 * (std::abs(fwd) + std::abs(bwd)))) {
                ++report.skipped;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[xi][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

template <typename F>
GradCheckReport grad_check(F&& f, const Tensor& x, double h = 1e-5, double tol = 1e-5) {
    return grad_check(std::forward<F>(f), std::vector<Tensor>{x}, h, tol);
}

// Same comparison restricted to a fixed element subset per tensor, for models
// too large to difference exhaustively. Selection is seeded and deterministic.
template <typename F>
GradCheckReport grad_check_sampled(F&& f, const std::vector<Tensor>& xs, std::size_t per_tensor, std::uint64_t seed,
                                   double h = 1e-5, double tol = 1e-5) {
    GradCheckReport report;
    for (const auto& x : xs) x.handle()->g.clear();
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = f();
        tape.backward(loss);
    }
    for (const auto& x : xs) {
        x.handle()->ensure_grad();
        analytic.push_back(x.handle()->g);
        x.handle()->g.clear();
    }
    const double f0 = f().value();
    std::uint64_t state = seed ? seed : 0x9e3779b97f4a7c15ull;
    auto next = [&state] {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        return state;
    };
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
        auto& v = xs[xi].handle()->v;
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (idx.size() > per_tensor) {
            for (std::size_t i = 0; i < per_tensor; ++i)
                std::swap(idx[i], idx[i + next() % (idx.size() - i)]);
            idx.resize(per_tensor);
        }
        for (std::size_t i : idx) {
            const double saved = v[i];
            v[i] = saved + h;
            const double fp = f().value();
            v[i] = saved - h;
            const double fm = f().value();
            v[i] = saved;
            const double fwd = (fp - f0) / h;
            const double bwd = (f0 - fm) / h;
            if (std::abs(fwd - bwd) > std::max(1e-3, 0.05 * (std::abs(fwd) + std::abs(bwd)))) {
                ++report.skipped;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[xi][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

} // namespace grouptron
