#pragma once

#include <cmath>

#include "dynaconv/autodiff.hpp"

namespace dynaconv {

/// Per-channel batch normalization. In training mode it normalizes with batch
/// statistics and folds them into the running buffers; otherwise it uses the
/// running buffers as a fixed affine map.
template <class T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta, Tensor4<T>& running_mean, Tensor4<T>& running_var,
               bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    const auto& xv = tape.value(x);
    const Shape4 s = xv.shape();
    const std::size_t per = s.n * s.plane();
    if (tape.value(gamma).size() != s.c || running_mean.size() != s.c)
        throw DimensionError("batch_norm: channel count mismatch for input " + s.str());

    std::vector<T> mean(s.c), inv_std(s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
        if (training) {
            double sum = 0, sq = 0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* p = xv.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
            }
            const double mu = sum / static_cast<double>(per);
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* p = xv.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mu) * (p[i] - mu);
            }
            const double var = sq / static_cast<double>(per);
            mean[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
            const double unbiased = per > 1 ? sq / static_cast<double>(per - 1) : var;
            running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mu);
            running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * unbiased);
        } else {
            mean[c] = running_mean[c];
            inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
        }
    }

    const auto& g = tape.value(gamma);
    const auto& b = tape.value(beta);
    Tensor4<T> y(s);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = xv.plane(n, c);
            T* q = y.plane(n, c);
            const T a = g[c] * inv_std[c], off = b[c] - mean[c] * a;
            for (std::size_t i = 0; i < s.plane(); ++i) q[i] = p[i] * a + off;
        }

    return tape.push(std::move(y), {x, gamma, beta},
                     [x, gamma, beta, training, mean, inv_std, s, per](Tape<T>& t, std::size_t self) {
                         const auto& gy = t.grad_of(self);
                         const auto& xv2 = t.value(x);
                         const auto& gam = t.value(gamma);
                         Tensor4<T> gx(s), gg(gam.shape()), gb(gam.shape());
                         for (std::size_t c = 0; c < s.c; ++c) {
                             double sg = 0, sgx = 0;
                             for (std::size_t n = 0; n < s.n; ++n) {
                                 const T* p = xv2.plane(n, c);
                                 const T* q = gy.plane(n, c);
                                 for (std::size_t i = 0; i < s.plane(); ++i) {
                                     sg += q[i];
                                     sgx += q[i] * (p[i] - mean[c]) * inv_std[c];
                                 }
                             }
                             gg[c] = static_cast<T>(sgx);
                             gb[c] = static_cast<T>(sg);
                             for (std::size_t n = 0; n < s.n; ++n) {
                                 const T* p = xv2.plane(n, c);
                                 const T* q = gy.plane(n, c);
                                 T* r = gx.plane(n, c);
                                 for (std::size_t i = 0; i < s.plane(); ++i) {
                                     if (training) {
                                         const double xhat = (p[i] - mean[c]) * inv_std[c];
                                         r[i] = static_cast<T>(gam[c] * inv_std[c] / static_cast<double>(per) *
                                                               (static_cast<double>(per) * q[i] - sg - xhat * sgx));
                                     } else {
                                         r[i] = gam[c] * inv_std[c] * q[i];
                                     }
                                 }
                             }
                         }
                         accumulate(t, x, gx);
                         accumulate(t, gamma, gg);
                         accumulate(t, beta, gb);
                     });
}

/// y = x W^T + b with x (n, in), W (out, in), b (out).
template <class T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weight);
    const std::size_t n = xv.rows(), in = xv.cols(), out = wv.rows();
    if (wv.cols() != in) throw DimensionError("linear: input width " + std::to_string(in) + " vs weight " + wv.shape().str());
    auto y = Tensor4<T>::matrix(n, out);
    blas::gemm(false, true, n, out, in, T(1), xv.data(), in, wv.data(), in, T(0), y.data(), out);
    const auto& bv = tape.value(bias);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bv[j];
    return tape.push(std::move(y), {x, weight, bias}, [x, weight, bias, n, in, out](Tape<T>& t, std::size_t self) {
        const auto& gy = t.grad_of(self);
        if (t.needs_grad(x)) {
            Tensor4<T> gx(t.value(x).shape());
            blas::gemm(false, false, n, in, out, T(1), gy.data(), out, t.value(weight).data(), in, T(0), gx.data(), in);
            accumulate(t, x, gx);
        }
        if (t.needs_grad(weight)) {
            Tensor4<T> gw(t.value(weight).shape());
            blas::gemm(true, false, out, in, n, T(1), gy.data(), out, t.value(x).data(), in, T(0), gw.data(), in);
            accumulate(t, weight, gw);
        }
        if (t.needs_grad(bias)) {
            Tensor4<T> gb(t.value(bias).shape());
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < out; ++j) gb[j] += gy[i * out + j];
            accumulate(t, bias, gb);
        }
    });
}

/// Nearest-neighbour 2x spatial upsample.
template <class T>
Var upsample_nearest2x(Tape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    const Shape4 s = xv.shape();
    Tensor4<T> y(s.n, s.c, 2 * s.h, 2 * s.w);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < 2 * s.h; ++i)
                for (std::size_t j = 0; j < 2 * s.w; ++j) y(n, c, i, j) = xv(n, c, i / 2, j / 2);
    return tape.push(std::move(y), {x}, [x, s](Tape<T>& t, std::size_t self) {
        const auto& gy = t.grad_of(self);
        Tensor4<T> gx(s);
        for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < s.c; ++c)
                for (std::size_t i = 0; i < 2 * s.h; ++i)
                    for (std::size_t j = 0; j < 2 * s.w; ++j) gx(n, c, i / 2, j / 2) += gy(n, c, i, j);
        accumulate(t, x, gx);
    });
}

/// Spatial global average pool returning an (n, c) matrix.
template <class T>
Var global_avg_pool(Tape<T>& tape, Var x) {
    return reduce(tape, ReduceKind::mean, x, Axes::spatial());
}

}  // namespace dynaconv
