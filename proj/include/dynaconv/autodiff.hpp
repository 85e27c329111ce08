#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dynaconv/errors.hpp"
#include "dynaconv/gemm.hpp"
#include "dynaconv/tensor.hpp"

namespace dynaconv {

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

/// Static per-pass computation graph. Values are appended in execution
/// order; backward() walks the record once in reverse and accumulates
/// gradients additively into each consumed input.
///
/// With recording disabled the tape still holds forward values but stores
/// no adjoint closures, which is the inference mode used by sweeps.
template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const noexcept { return recording_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var leaf(Tensor4<T> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), {}, {}, requires_grad && recording_});
        return Var{nodes_.size() - 1};
    }

    /// Records an op result. `backward` is dropped unless some input needs a gradient.
    Var push(Tensor4<T> value, std::initializer_list<Var> inputs, Backward backward) {
        bool needs = false;
        if (recording_)
            for (Var v : inputs) needs = needs || nodes_.at(v.id).needs_grad;
        nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
        return Var{nodes_.size() - 1};
    }

    const Tensor4<T>& value(Var v) const { return nodes_.at(v.id).value; }
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

    /// Gradient of the last backward() target w.r.t. v (zeros if v was unreachable).
    Tensor4<T> grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.grad.empty() ? Tensor4<T>(n.value.shape()) : n.grad;
    }

    /// Adjoint buffer of node `id`, allocated on first use.
    Tensor4<T>& grad_buffer(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor4<T>(n.value.shape());
        return n.grad;
    }
    Tensor4<T>& grad_buffer(Var v) { return grad_buffer(v.id); }
    const Tensor4<T>& grad_of(std::size_t id) const { return nodes_.at(id).grad; }

    /// Reverse sweep from a scalar output, seeded with d(out)/d(out) = 1.
    void backward(Var out) {
        if (!recording_) throw StateError("backward on a tape recorded without gradients");
        if (value(out).size() != 1) throw DimensionError("backward target must be a scalar");
        for (auto& n : nodes_) n.grad = Tensor4<T>();
        grad_buffer(out)[0] = T(1);
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward(*this, i);
        }
    }

private:
    struct Node {
        Tensor4<T> value;
        Tensor4<T> grad;
        Backward backward;
        bool needs_grad = false;
    };
    std::deque<Node> nodes_;  // stable references across push
    bool recording_;
};

template <class T>
void accumulate(Tape<T>& tape, Var target, const Tensor4<T>& delta) {
    if (!tape.needs_grad(target)) return;
    Tensor4<T>& g = tape.grad_buffer(target);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

enum class ElementwiseKind { add, sub, mul, scale, relu };

/// Pointwise a (op) b for same-shaped operands.
template <class T>
Var elementwise(Tape<T>& tape, ElementwiseKind kind, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require_same_shape(av.shape(), bv.shape(), "elementwise");
    Tensor4<T> out(av.shape());
    switch (kind) {
        case ElementwiseKind::add:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
            break;
        case ElementwiseKind::sub:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
            break;
        case ElementwiseKind::mul:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
            break;
        default:
            throw ConfigError("elementwise: binary tensor form supports add, sub, mul");
    }
    return tape.push(std::move(out), {a, b}, [kind, a, b](Tape<T>& t, std::size_t self) {
        const Tensor4<T> g = t.grad_of(self);
        switch (kind) {
            case ElementwiseKind::add:
                accumulate(t, a, g);
                accumulate(t, b, g);
                break;
            case ElementwiseKind::sub: {
                accumulate(t, a, g);
                Tensor4<T> ng = g;
                for (auto& v : ng.values()) v = -v;
                accumulate(t, b, ng);
                break;
            }
            default: {
                Tensor4<T> ga(g.shape()), gb(g.shape());
                const auto& av2 = t.value(a);
                const auto& bv2 = t.value(b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] = g[i] * bv2[i];
                    gb[i] = g[i] * av2[i];
                }
                accumulate(t, a, ga);
                accumulate(t, b, gb);
            }
        }
    });
}

/// Pointwise op against a scalar: add/sub/mul/scale use `s`; relu ignores it.
template <class T>
Var elementwise(Tape<T>& tape, ElementwiseKind kind, Var a, T s) {
    const auto& av = tape.value(a);
    Tensor4<T> out(av.shape());
    switch (kind) {
        case ElementwiseKind::add:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
            break;
        case ElementwiseKind::sub:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - s;
            break;
        case ElementwiseKind::mul:
        case ElementwiseKind::scale:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
            break;
        case ElementwiseKind::relu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
            break;
    }
    return tape.push(std::move(out), {a}, [kind, a, s](Tape<T>& t, std::size_t self) {
        Tensor4<T> g = t.grad_of(self);
        if (kind == ElementwiseKind::mul || kind == ElementwiseKind::scale) {
            for (auto& v : g.values()) v *= s;
        } else if (kind == ElementwiseKind::relu) {
            const auto& av2 = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!(av2[i] > T(0))) g[i] = T(0);
        }
        accumulate(t, a, g);
    });
}

template <class T> Var add(Tape<T>& t, Var a, Var b) { return elementwise(t, ElementwiseKind::add, a, b); }
template <class T> Var sub(Tape<T>& t, Var a, Var b) { return elementwise(t, ElementwiseKind::sub, a, b); }
template <class T> Var mul(Tape<T>& t, Var a, Var b) { return elementwise(t, ElementwiseKind::mul, a, b); }
template <class T> Var scale(Tape<T>& t, Var a, T s) { return elementwise(t, ElementwiseKind::scale, a, s); }
template <class T> Var relu(Tape<T>& t, Var a) { return elementwise(t, ElementwiseKind::relu, a, T(0)); }

/// Product of matrices stored as (rows, cols, 1, 1).
template <class T>
Var matmul(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k)
        throw DimensionError("matmul: inner dimensions " + std::to_string(k) + " vs " + std::to_string(bv.rows()));
    auto out = Tensor4<T>::matrix(m, n);
    if (m && n && k) blas::gemm(false, false, m, n, k, T(1), av.data(), k, bv.data(), n, T(0), out.data(), n);
    return tape.push(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        if (t.needs_grad(a)) {
            auto ga = Tensor4<T>::matrix(m, k);
            blas::gemm(false, true, m, k, n, T(1), g.data(), n, t.value(b).data(), n, T(0), ga.data(), k);
            accumulate(t, a, ga.reshaped(t.value(a).shape()));
        }
        if (t.needs_grad(b)) {
            auto gb = Tensor4<T>::matrix(k, n);
            blas::gemm(true, false, k, n, m, T(1), t.value(a).data(), k, g.data(), n, T(0), gb.data(), n);
            accumulate(t, b, gb.reshaped(t.value(b).shape()));
        }
    });
}

enum class ReduceKind { sum, mean, max };

/// Axis set over (n, c, h, w).
struct Axes {
    bool n = false, c = false, h = false, w = false;
    static constexpr Axes spatial() { return {false, false, true, true}; }
    static constexpr Axes all() { return {true, true, true, true}; }
};

/// Reduces the selected axes to extent 1. Max routes its gradient to the
/// first maximal element in index order.
template <class T>
Var reduce(Tape<T>& tape, ReduceKind kind, Var x, Axes axes) {
    const auto& xv = tape.value(x);
    const Shape4 in = xv.shape();
    const Shape4 out_s{axes.n ? 1 : in.n, axes.c ? 1 : in.c, axes.h ? 1 : in.h, axes.w ? 1 : in.w};
    const std::size_t count = (axes.n ? in.n : 1) * (axes.c ? in.c : 1) * (axes.h ? in.h : 1) * (axes.w ? in.w : 1);
    if (count == 0) throw DimensionError("reduce: empty reduction axis");

    auto out_index = [out_s, axes](std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return ((((axes.n ? 0 : n) * out_s.c + (axes.c ? 0 : c)) * out_s.h + (axes.h ? 0 : h)) * out_s.w) +
               (axes.w ? 0 : w);
    };

    Tensor4<T> out(out_s, kind == ReduceKind::max ? -std::numeric_limits<T>::infinity() : T(0));
    std::vector<std::size_t> argmax(kind == ReduceKind::max ? out.size() : 0);
    std::size_t i = 0;
    for (std::size_t n = 0; n < in.n; ++n)
        for (std::size_t c = 0; c < in.c; ++c)
            for (std::size_t h = 0; h < in.h; ++h)
                for (std::size_t w = 0; w < in.w; ++w, ++i) {
                    const std::size_t o = out_index(n, c, h, w);
                    if (kind == ReduceKind::max) {
                        if (xv[i] > out[o]) {
                            out[o] = xv[i];
                            argmax[o] = i;
                        }
                    } else {
                        out[o] += xv[i];
                    }
                }
    if (kind == ReduceKind::mean)
        for (auto& v : out.values()) v /= static_cast<T>(count);

    return tape.push(std::move(out), {x},
                     [x, kind, in, count, argmax = std::move(argmax), out_index](Tape<T>& t, std::size_t self) {
                         const auto& g = t.grad_of(self);
                         Tensor4<T> gx(in);
                         if (kind == ReduceKind::max) {
                             for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                         } else {
                             const T f = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
                             std::size_t j = 0;
                             for (std::size_t n = 0; n < in.n; ++n)
                                 for (std::size_t c = 0; c < in.c; ++c)
                                     for (std::size_t h = 0; h < in.h; ++h)
                                         for (std::size_t w = 0; w < in.w; ++w, ++j) gx[j] = g[out_index(n, c, h, w)] * f;
                         }
                         accumulate(t, x, gx);
                     });
}

/// Row-wise softmax with max subtraction.
template <class T>
Tensor4<T> softmax_rows(const Tensor4<T>& logits) {
    const std::size_t n = logits.rows(), k = logits.cols();
    Tensor4<T> p = Tensor4<T>::matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * k;
        const T mx = *std::max_element(row, row + k);
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) s += (p[i * k + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= s;
    }
    return p;
}

template <class T>
struct CrossEntropy {
    Var loss;
    Tensor4<T> probs;
};

/// Mean negative log-likelihood of `labels` under softmax(logits).
template <class T>
CrossEntropy<T> softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
    const auto& lv = tape.value(logits);
    const std::size_t n = lv.rows(), k = lv.cols();
    if (labels.size() != n) throw DimensionError("softmax_cross_entropy: label count != rows");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw DimensionError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");

    Tensor4<T> probs = softmax_rows(lv);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = lv.data() + i * k;
        const T mx = *std::max_element(row, row + k);
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
        loss += -(row[labels[i]] - mx - std::log(s));
    }
    loss /= static_cast<T>(n);

    std::vector<int> ys(labels.begin(), labels.end());
    Var out = tape.push(Tensor4<T>(Shape4{1, 1, 1, 1}, loss), {logits},
                        [logits, probs, ys = std::move(ys), n, k](Tape<T>& t, std::size_t self) {
                            const T g = t.grad_of(self)[0];
                            Tensor4<T> gl = probs;
                            for (std::size_t i = 0; i < n; ++i) gl[i * k + ys[i]] -= T(1);
                            for (auto& v : gl.values()) v *= g / static_cast<T>(n);
                            accumulate(t, logits, gl.reshaped(t.value(logits).shape()));
                        });
    return {out, std::move(probs)};
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckFailure {
    std::size_t tensor = 0;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

struct GradCheckReport {
    std::size_t checked = 0;
    double max_rel_error = 0;
    std::vector<GradCheckFailure> failures;
    bool passed() const noexcept { return failures.empty(); }
};

/// Scalar-valued graph builder: given leaves for the parameters, returns the output Var.
using GraphFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Compares tape gradients with central differences on up to
/// `max_coords_per_tensor` evenly spaced coordinates of each parameter.
/// Relative error is |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport grad_check(const GraphFn& f, std::vector<Tensor4d> params, double eps = 1e-5,
                                  double tol = 1e-4, std::size_t max_coords_per_tensor = 64) {
    auto evaluate = [&](bool record, std::vector<Tensor4d>* grads) {
        Tape<double> tape(record);
        std::vector<Var> leaves;
        for (const auto& p : params) leaves.push_back(tape.leaf(p, record));
        Var out = f(tape, leaves);
        const double v = tape.value(out)[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
        if (grads) {
            tape.backward(out);
            for (Var l : leaves) grads->push_back(tape.grad(l));
        }
        return v;
    };

    std::vector<Tensor4d> analytic;
    evaluate(true, &analytic);

    GradCheckReport report;
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (!analytic[t].all_finite()) throw NumericError("grad_check: non-finite analytic gradient");
        const std::size_t sz = params[t].size();
        const std::size_t step = std::max<std::size_t>(1, sz / std::max<std::size_t>(1, max_coords_per_tensor));
        for (std::size_t i = 0; i < sz; i += step) {
            const double orig = params[t][i];
            params[t][i] = orig + eps;
            const double fp = evaluate(false, nullptr);
            params[t][i] = orig - eps;
            const double fm = evaluate(false, nullptr);
            params[t][i] = orig;
            const double numeric = (fp - fm) / (2 * eps);
            const double rel = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(numeric));
            ++report.checked;
            report.max_rel_error = std::max(report.max_rel_error, rel);
            if (rel > tol) report.failures.push_back({t, i, analytic[t][i], numeric, rel});
        }
    }
    return report;
}

}  // namespace dynaconv
