#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dynaconv/autodiff.hpp"
#include "dynaconv/errors.hpp"
#include "dynaconv/gemm.hpp"
#include "dynaconv/interp.hpp"
#include "dynaconv/tensor.hpp"

namespace dynaconv {

/// Convolution stride: a positive integer or the fractional value 1/2.
class Stride {
public:
    constexpr Stride() = default;
    constexpr Stride(int s) : num_(s), den_(1) {}  // NOLINT(google-explicit-constructor)
    static constexpr Stride half() { return Stride(1, 2); }

    constexpr bool fractional() const noexcept { return den_ != 1; }
    /// Integer step of the underlying (possibly transposed) convolution.
    constexpr int step() const noexcept { return fractional() ? den_ : num_; }
    constexpr double value() const noexcept { return static_cast<double>(num_) / den_; }

    std::string str() const { return fractional() ? "1/2" : std::to_string(num_); }

    /// Accepts "1/2", "0.5" or a positive integer literal.
    static Stride parse(const std::string& s) {
        if (s == "1/2" || s == "0.5" || s == ".5") return half();
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(s, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad stride '" + s + "'");
        }
        if (used != s.size() || v < 1) throw ConfigError("bad stride '" + s + "'");
        return Stride(v);
    }

    constexpr bool operator==(const Stride& o) const noexcept { return num_ * o.den_ == o.num_ * den_; }
    constexpr auto operator<=>(const Stride& o) const noexcept { return num_ * o.den_ <=> o.num_ * den_; }

private:
    constexpr Stride(int n, int d) : num_(n), den_(d) {}
    int num_ = 1;
    int den_ = 1;
};

/// Active attribute setting of one dynamic layer.
struct ConvConfig {
    Stride stride = 1;
    int dilation = 1;
    int kernel_size = 3;
    int groups = 1;

    /// "Same" padding so that resolution change is governed by stride alone.
    constexpr int padding() const noexcept { return dilation * (kernel_size - 1) / 2; }

    /// Output rescale compensating kernel interpolation: stored^2 / K^2.
    constexpr double alpha(int stored_size) const noexcept {
        return static_cast<double>(stored_size * stored_size) / (kernel_size * kernel_size);
    }

    bool operator==(const ConvConfig&) const = default;

    /// Checks the attribute universe: stride in {1/2,1,2,3,4}, dilation in
    /// 1..5, kernel size in {1,3,5,7,9}, groups >= 1.
    void validate() const {
        const bool stride_ok = stride == Stride::half() || (!stride.fractional() && stride.step() >= 1 && stride.step() <= 4);
        if (!stride_ok) throw ConfigError("stride " + stride.str() + " outside {1/2,1,2,3,4}");
        if (dilation < 1 || dilation > 5) throw ConfigError("dilation " + std::to_string(dilation) + " outside 1..5");
        if (kernel_size < 1 || kernel_size > 9 || kernel_size % 2 == 0)
            throw ConfigError("kernel size " + std::to_string(kernel_size) + " outside {1,3,5,7,9}");
        if (groups < 1) throw ConfigError("groups must be >= 1");
    }
};

/// Stored parameters of a convolution: kernel (out, in/g, K0, K0) and optional bias.
template <class T>
struct ConvWeights {
    Tensor4<T> kernel;
    std::optional<Tensor4<T>> bias;  // (out, 1, 1, 1)

    std::size_t out_channels() const noexcept { return kernel.shape().n; }
    std::size_t in_per_group() const noexcept { return kernel.shape().c; }
    int stored_size() const noexcept { return static_cast<int>(kernel.shape().h); }
};

struct Extent2 {
    std::size_t h = 0, w = 0;
    bool operator==(const Extent2&) const = default;
};

/// Integer stride: floor((h + 2p - D(K-1) - 1)/S) + 1. Stride 1/2: exactly 2h.
inline Extent2 output_shape(std::size_t h, std::size_t w, const ConvConfig& cfg) {
    if (h < 1 || w < 1) throw DimensionError("output_shape: empty input");
    if (cfg.stride.fractional()) return {2 * h, 2 * w};
    const auto span = static_cast<long>(cfg.dilation) * (cfg.kernel_size - 1);
    const long p = cfg.padding();
    const long s = cfg.stride.step();
    auto one = [&](std::size_t x) {
        return static_cast<std::size_t>((static_cast<long>(x) + 2 * p - span - 1) / s + 1);
    };
    return {one(h), one(w)};
}

namespace kernels {

/// Geometry of one strided/dilated/padded square-kernel correlation.
struct Geometry {
    std::size_t in_h, in_w, out_h, out_w;
    int k, stride, pad, dilation;
};

/// cols[(c*K + ky)*K + kx][oy*out_w + ox] = x[c][oy*S - p + ky*D][ox*S - p + kx*D] (0 outside).
template <class T>
void im2col(const T* x, std::size_t channels, const Geometry& g, T* cols) {
    const std::size_t npos = g.out_h * g.out_w;
    for (std::size_t c = 0; c < channels; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                T* row = cols + ((c * g.k + ky) * g.k + kx) * npos;
                const T* plane = x + c * g.in_h * g.in_w;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + ky * g.dilation;
                    T* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = plane + iy * g.in_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + kx * g.dilation;
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T(0) : src[ix];
                    }
                }
            }
}

/// Adjoint of im2col: scatter-adds columns back into x.
template <class T>
void col2im(const T* cols, std::size_t channels, const Geometry& g, T* x) {
    const std::size_t npos = g.out_h * g.out_w;
    for (std::size_t c = 0; c < channels; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                const T* row = cols + ((c * g.k + ky) * g.k + kx) * npos;
                T* plane = x + c * g.in_h * g.in_w;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + ky * g.dilation;
                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                    T* dst = plane + iy * g.in_w;
                    const T* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + kx * g.dilation;
                        if (ix >= 0 && ix < static_cast<long>(g.in_w)) dst[ix] += src[ox];
                    }
                }
            }
}

inline Geometry conv_geometry(const Shape4& x, int k, int stride, int pad, int dilation) {
    const long span = static_cast<long>(dilation) * (k - 1);
    const long oh = (static_cast<long>(x.h) + 2 * pad - span - 1) / stride + 1;
    const long ow = (static_cast<long>(x.w) + 2 * pad - span - 1) / stride + 1;
    if (oh < 1 || ow < 1) throw DimensionError("convolution window larger than padded input " + x.str());
    return {x.h, x.w, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), k, stride, pad, dilation};
}

inline void check_channels(const Shape4& x, const Shape4& kernel, int groups) {
    const auto g = static_cast<std::size_t>(groups);
    if (x.c != kernel.c * g || kernel.n % g != 0)
        throw DimensionError("convolution channel mismatch: input " + x.str() + ", kernel " + kernel.str() +
                             ", groups " + std::to_string(groups));
    if (kernel.h != kernel.w) throw DimensionError("kernel must be square: " + kernel.str());
}

/// Reference correlation: direct loops, zero padding, grouped channels.
/// Every tap is evaluated (padded reads contribute zero), and `macs`
/// counts each multiply when non-null.
template <class T>
Tensor4<T> conv2d_direct(const Tensor4<T>& x, const Tensor4<T>& kernel, int stride, int pad, int dilation, int groups,
                         std::uint64_t* macs = nullptr) {
    check_channels(x.shape(), kernel.shape(), groups);
    const int k = static_cast<int>(kernel.shape().h);
    const Geometry g = conv_geometry(x.shape(), k, stride, pad, dilation);
    const std::size_t cout = kernel.shape().n, cin_g = kernel.shape().c;
    const std::size_t cout_g = cout / static_cast<std::size_t>(groups);
    Tensor4<T> y(x.shape().n, cout, g.out_h, g.out_w);
    for (std::size_t n = 0; n < x.shape().n; ++n)
        for (std::size_t o = 0; o < cout; ++o) {
            const std::size_t grp = o / cout_g;
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    T acc = 0;
                    for (std::size_t ci = 0; ci < cin_g; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const long iy = static_cast<long>(oy) * stride - pad + ky * dilation;
                                const long ix = static_cast<long>(ox) * stride - pad + kx * dilation;
                                const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(x.shape().h) &&
                                                    ix < static_cast<long>(x.shape().w);
                                const T xv = inside ? x(n, grp * cin_g + ci, iy, ix) : T(0);
                                acc += xv * kernel(o, ci, ky, kx);
                                if (macs) ++*macs;
                            }
                    y(n, o, oy, ox) = acc;
                }
        }
    return y;
}

/// Correlation lowered to per-sample, per-group matrix products.
template <class T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& kernel, int stride, int pad, int dilation, int groups) {
    check_channels(x.shape(), kernel.shape(), groups);
    const int k = static_cast<int>(kernel.shape().h);
    const Geometry g = conv_geometry(x.shape(), k, stride, pad, dilation);
    const auto G = static_cast<std::size_t>(groups);
    const std::size_t cout = kernel.shape().n, cin_g = kernel.shape().c, cout_g = cout / G;
    const std::size_t rows = cin_g * k * k, npos = g.out_h * g.out_w;
    Tensor4<T> y(x.shape().n, cout, g.out_h, g.out_w);
    std::vector<T> cols(rows * npos);
    for (std::size_t n = 0; n < x.shape().n; ++n)
        for (std::size_t grp = 0; grp < G; ++grp) {
            im2col(x.plane(n, grp * cin_g), cin_g, g, cols.data());
            blas::gemm(false, false, cout_g, npos, rows, T(1), kernel.data() + grp * cout_g * rows, rows, cols.data(),
                       npos, T(0), y.plane(n, grp * cout_g), npos);
        }
    return y;
}

/// Gradients of conv2d with respect to input and kernel.
template <class T>
std::pair<Tensor4<T>, Tensor4<T>> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& kernel, const Tensor4<T>& gy,
                                                  int stride, int pad, int dilation, int groups, bool want_gx = true,
                                                  bool want_gw = true) {
    const int k = static_cast<int>(kernel.shape().h);
    const Geometry g = conv_geometry(x.shape(), k, stride, pad, dilation);
    const auto G = static_cast<std::size_t>(groups);
    const std::size_t cout = kernel.shape().n, cin_g = kernel.shape().c, cout_g = cout / G;
    const std::size_t rows = cin_g * k * k, npos = g.out_h * g.out_w;
    if (gy.shape() != Shape4{x.shape().n, cout, g.out_h, g.out_w})
        throw DimensionError("conv2d_backward: gradient shape " + gy.shape().str());
    Tensor4<T> gx(want_gx ? x.shape() : Shape4{});
    Tensor4<T> gw(want_gw ? kernel.shape() : Shape4{});
    std::vector<T> cols(rows * npos);
    for (std::size_t n = 0; n < x.shape().n; ++n)
        for (std::size_t grp = 0; grp < G; ++grp) {
            const T* gyp = gy.plane(n, grp * cout_g);
            if (want_gw) {
                im2col(x.plane(n, grp * cin_g), cin_g, g, cols.data());
                blas::gemm(false, true, cout_g, rows, npos, T(1), gyp, npos, cols.data(), npos, T(1),
                           gw.data() + grp * cout_g * rows, rows);
            }
            if (want_gx) {
                blas::gemm(true, false, rows, npos, cout_g, T(1), kernel.data() + grp * cout_g * rows, rows, gyp, npos,
                           T(0), cols.data(), npos);
                col2im(cols.data(), cin_g, g, gx.plane(n, grp * cin_g));
            }
        }
    return {std::move(gx), std::move(gw)};
}

/// Kernel for a transposed convolution realizing the same layer: spatially
/// flipped about the centre with in/out channel axes swapped, giving
/// (in, out/g, K, K) from (out, in/g, K, K).
template <class T>
Tensor4<T> flip_swap(const Tensor4<T>& kernel, int groups) {
    const auto G = static_cast<std::size_t>(groups);
    const Shape4 s = kernel.shape();
    const std::size_t cout_g = s.n / G, cin_g = s.c, k = s.h;
    Tensor4<T> t(s.c * G, cout_g, k, k);
    for (std::size_t o = 0; o < s.n; ++o) {
        const std::size_t grp = o / cout_g, ol = o % cout_g;
        for (std::size_t il = 0; il < cin_g; ++il)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                    t(grp * cin_g + il, ol, k - 1 - ky, k - 1 - kx) = kernel(o, il, ky, kx);
    }
    return t;
}

/// Inverse of flip_swap (also its adjoint: it is a permutation).
template <class T>
Tensor4<T> unflip_swap(const Tensor4<T>& t, int groups) {
    const auto G = static_cast<std::size_t>(groups);
    const Shape4 s = t.shape();
    const std::size_t cin_g = s.n / G, cout_g = s.c, k = s.h;
    Tensor4<T> kernel(cout_g * G, cin_g, k, k);
    for (std::size_t o = 0; o < cout_g * G; ++o) {
        const std::size_t grp = o / cout_g, ol = o % cout_g;
        for (std::size_t il = 0; il < cin_g; ++il)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                    kernel(o, il, ky, kx) = t(grp * cin_g + il, ol, k - 1 - ky, k - 1 - kx);
    }
    return kernel;
}

/// Transposed-convolution geometry viewed from the output side: the output
/// plays the role of the im2col "image" and the input supplies the columns.
inline Geometry transposed_geometry(const Shape4& x, int k, int stride, int pad, int dilation, int output_padding) {
    const long oh = (static_cast<long>(x.h) - 1) * stride - 2 * pad + static_cast<long>(dilation) * (k - 1) +
                    output_padding + 1;
    const long ow = (static_cast<long>(x.w) - 1) * stride - 2 * pad + static_cast<long>(dilation) * (k - 1) +
                    output_padding + 1;
    if (oh < 1 || ow < 1) throw DimensionError("transposed convolution produces empty output");
    return {static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), x.h, x.w, k, stride, pad, dilation};
}

/// Reference transposed convolution by scatter-accumulate; `tkernel` is (in, out/g, K, K).
template <class T>
Tensor4<T> conv_transpose2d_direct(const Tensor4<T>& x, const Tensor4<T>& tkernel, int stride, int pad, int dilation,
                                   int output_padding, int groups) {
    const auto G = static_cast<std::size_t>(groups);
    const Shape4 ks = tkernel.shape();
    if (x.shape().c != ks.n || ks.n % G != 0) throw DimensionError("transposed convolution channel mismatch");
    const int k = static_cast<int>(ks.h);
    const Geometry g = transposed_geometry(x.shape(), k, stride, pad, dilation, output_padding);
    const std::size_t cin_g = ks.n / G, cout_g = ks.c;
    Tensor4<T> y(x.shape().n, cout_g * G, g.in_h, g.in_w);
    for (std::size_t n = 0; n < x.shape().n; ++n)
        for (std::size_t i = 0; i < ks.n; ++i) {
            const std::size_t grp = i / cin_g;
            for (std::size_t iy = 0; iy < x.shape().h; ++iy)
                for (std::size_t ix = 0; ix < x.shape().w; ++ix) {
                    const T xv = x(n, i, iy, ix);
                    for (std::size_t ol = 0; ol < cout_g; ++ol)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const long oy = static_cast<long>(iy) * stride - pad + ky * dilation;
                                const long ox = static_cast<long>(ix) * stride - pad + kx * dilation;
                                if (oy < 0 || ox < 0 || oy >= static_cast<long>(g.in_h) || ox >= static_cast<long>(g.in_w))
                                    continue;
                                y(n, grp * cout_g + ol, oy, ox) += xv * tkernel(i, ol, ky, kx);
                            }
                }
        }
    return y;
}

/// Transposed convolution via matrix product and col2im.
template <class T>
Tensor4<T> conv_transpose2d(const Tensor4<T>& x, const Tensor4<T>& tkernel, int stride, int pad, int dilation,
                            int output_padding, int groups) {
    const auto G = static_cast<std::size_t>(groups);
    const Shape4 ks = tkernel.shape();
    if (x.shape().c != ks.n || ks.n % G != 0) throw DimensionError("transposed convolution channel mismatch");
    const int k = static_cast<int>(ks.h);
    const Geometry g = transposed_geometry(x.shape(), k, stride, pad, dilation, output_padding);
    const std::size_t cin_g = ks.n / G, cout_g = ks.c, rows = cout_g * k * k, npos = x.shape().h * x.shape().w;
    Tensor4<T> y(x.shape().n, cout_g * G, g.in_h, g.in_w);
    std::vector<T> cols(rows * npos);
    for (std::size_t n = 0; n < x.shape().n; ++n)
        for (std::size_t grp = 0; grp < G; ++grp) {
            blas::gemm(true, false, rows, npos, cin_g, T(1), tkernel.data() + grp * cin_g * rows, rows,
                       x.plane(n, grp * cin_g), npos, T(0), cols.data(), npos);
            col2im(cols.data(), cout_g, g, y.plane(n, grp * cout_g));
        }
    return y;
}

/// Gradients of conv_transpose2d w.r.t. its input and transposed kernel.
template <class T>
std::pair<Tensor4<T>, Tensor4<T>> conv_transpose2d_backward(const Tensor4<T>& x, const Tensor4<T>& tkernel,
                                                            const Tensor4<T>& gy, int stride, int pad, int dilation,
                                                            int output_padding, int groups, bool want_gx = true,
                                                            bool want_gw = true) {
    const auto G = static_cast<std::size_t>(groups);
    const Shape4 ks = tkernel.shape();
    const int k = static_cast<int>(ks.h);
    const Geometry g = transposed_geometry(x.shape(), k, stride, pad, dilation, output_padding);
    const std::size_t cin_g = ks.n / G, cout_g = ks.c, rows = cout_g * k * k, npos = x.shape().h * x.shape().w;
    if (gy.shape() != Shape4{x.shape().n, cout_g * G, g.in_h, g.in_w})
        throw DimensionError("conv_transpose2d_backward: gradient shape " + gy.shape().str());
    Tensor4<T> gx(want_gx ? x.shape() : Shape4{});
    Tensor4<T> gw(want_gw ? ks : Shape4{});
    std::vector<T> cols(rows * npos);
    for (std::size_t n = 0; n < x.shape().n; ++n)
        for (std::size_t grp = 0; grp < G; ++grp) {
            im2col(gy.plane(n, grp * cout_g), cout_g, g, cols.data());
            if (want_gx)
                blas::gemm(false, false, cin_g, npos, rows, T(1), tkernel.data() + grp * cin_g * rows, rows,
                           cols.data(), npos, T(0), gx.plane(n, grp * cin_g), npos);
            if (want_gw)
                blas::gemm(false, true, cin_g, rows, npos, T(1), x.plane(n, grp * cin_g), npos, cols.data(), npos,
                           T(1), gw.data() + grp * cin_g * rows, rows);
        }
    return {std::move(gx), std::move(gw)};
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Kernel-size interpolation

inline void check_kernel_size(int k) {
    if (k < 1 || k > 9 || k % 2 == 0) throw ConfigError("kernel size " + std::to_string(k) + " not in {1,3,5,7,9}");
}

/// Bilinear resample of every (out, in) spatial slice from K0 x K0 to K x K
/// on the aligned-corner grid. K == K0 returns the kernel unchanged.
template <class T>
Tensor4<T> interpolate_kernel(const Tensor4<T>& kernel, int k) {
    check_kernel_size(k);
    const Shape4 s = kernel.shape();
    if (static_cast<int>(s.h) == k && static_cast<int>(s.w) == k) return kernel;
    const auto ry = linear_taps(s.h, static_cast<std::size_t>(k), GridAlign::corners);
    const auto rx = linear_taps(s.w, static_cast<std::size_t>(k), GridAlign::corners);
    Tensor4<T> out(s.n, s.c, k, k);
    for (std::size_t o = 0; o < s.n; ++o)
        for (std::size_t i = 0; i < s.c; ++i) resample_plane(kernel.plane(o, i), s.h, s.w, out.plane(o, i), k, k, ry, rx);
    return out;
}

template <class T>
Tensor4<T> interpolate_kernel(const ConvWeights<T>& w, int k) {
    return interpolate_kernel(w.kernel, k);
}

/// Transpose of the interpolation map: pulls a K x K kernel gradient back to K0 x K0.
template <class T>
Tensor4<T> interpolate_kernel_adjoint(const Tensor4<T>& grad_k, std::size_t stored_size) {
    const Shape4 s = grad_k.shape();
    if (s.h == stored_size && s.w == stored_size) return grad_k;
    const auto ry = linear_taps(stored_size, s.h, GridAlign::corners);
    const auto rx = linear_taps(stored_size, s.w, GridAlign::corners);
    Tensor4<T> out(s.n, s.c, stored_size, stored_size);
    for (std::size_t o = 0; o < s.n; ++o)
        for (std::size_t i = 0; i < s.c; ++i)
            resample_plane_adjoint(grad_k.plane(o, i), s.h, s.w, out.plane(o, i), stored_size, stored_size, ry, rx);
    return out;
}

// ---------------------------------------------------------------------------
// Dynamic convolution

namespace detail {

template <class T>
void add_bias_scaled(Tensor4<T>& y, const std::optional<Tensor4<T>>& bias, T alpha) {
    if (alpha != T(1))
        for (auto& v : y.values()) v *= alpha;
    if (!bias) return;
    const Shape4 s = y.shape();
    if (bias->size() != s.c) throw DimensionError("bias length does not match output channels");
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            T* p = y.plane(n, c);
            const T b = (*bias)[c];
            for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b;
        }
}

}  // namespace detail

/// Integer-stride dynamic convolution: y = alpha * conv(x, interp(W, K)) + b.
template <class T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const ConvWeights<T>& w, const ConvConfig& cfg) {
    cfg.validate();
    if (cfg.stride.fractional()) throw ConfigError("conv_forward requires an integer stride; use fractional_forward");
    const Tensor4<T> k = interpolate_kernel(w.kernel, cfg.kernel_size);
    Tensor4<T> y = kernels::conv2d(x, k, cfg.stride.step(), cfg.padding(), cfg.dilation, cfg.groups);
    detail::add_bias_scaled(y, w.bias, static_cast<T>(cfg.alpha(w.stored_size())));
    return y;
}

/// Stride-1/2 dynamic convolution as a step-2 transposed convolution with the
/// flipped, channel-swapped kernel; output is exactly (2h, 2w).
template <class T>
Tensor4<T> fractional_forward(const Tensor4<T>& x, const ConvWeights<T>& w, const ConvConfig& cfg,
                              bool upsampling_allowed = true) {
    cfg.validate();
    if (!cfg.stride.fractional()) throw ConfigError("fractional_forward requires stride 1/2");
    if (!upsampling_allowed) throw ConfigError("stride 1/2 is not permitted for this layer");
    kernels::check_channels(x.shape(), w.kernel.shape(), cfg.groups);
    const Tensor4<T> k = kernels::flip_swap(interpolate_kernel(w.kernel, cfg.kernel_size), cfg.groups);
    Tensor4<T> y = kernels::conv_transpose2d(x, k, 2, cfg.padding(), cfg.dilation, 1, cfg.groups);
    detail::add_bias_scaled(y, w.bias, static_cast<T>(cfg.alpha(w.stored_size())));
    return y;
}

/// Dispatches on the stride kind.
template <class T>
Tensor4<T> dynamic_conv(const Tensor4<T>& x, const ConvWeights<T>& w, const ConvConfig& cfg) {
    return cfg.stride.fractional() ? fractional_forward(x, w, cfg) : conv_forward(x, w, cfg);
}

template <class T>
struct ConvGrads {
    Tensor4<T> x;
    Tensor4<T> kernel;  // w.r.t. the stored K0 x K0 kernel
    std::optional<Tensor4<T>> bias;
};

/// Reverse pass of dynamic_conv. `x` and `w` are the saved forward operands.
template <class T>
ConvGrads<T> conv_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x, const ConvWeights<T>& w,
                           const ConvConfig& cfg, bool want_gx = true, bool want_gw = true) {
    if (x.empty() || w.kernel.empty()) throw StateError("conv_backward: missing saved activations");
    const T alpha = static_cast<T>(cfg.alpha(w.stored_size()));
    Tensor4<T> g = grad_out;
    ConvGrads<T> out;
    if (w.bias) {
        Tensor4<T> gb(w.bias->shape());
        const Shape4 s = g.shape();
        for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < s.c; ++c) {
                const T* p = g.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) gb[c] += p[i];
            }
        out.bias = std::move(gb);
    }
    if (alpha != T(1))
        for (auto& v : g.values()) v *= alpha;
    const Tensor4<T> k = interpolate_kernel(w.kernel, cfg.kernel_size);
    Tensor4<T> gk;
    if (cfg.stride.fractional()) {
        const Tensor4<T> tk = kernels::flip_swap(k, cfg.groups);
        auto [gx, gtk] = kernels::conv_transpose2d_backward(x, tk, g, 2, cfg.padding(), cfg.dilation, 1, cfg.groups,
                                                            want_gx, want_gw);
        out.x = std::move(gx);
        if (want_gw) gk = kernels::unflip_swap(gtk, cfg.groups);
    } else {
        auto [gx, gw] = kernels::conv2d_backward(x, k, g, cfg.stride.step(), cfg.padding(), cfg.dilation, cfg.groups,
                                                 want_gx, want_gw);
        out.x = std::move(gx);
        gk = std::move(gw);
    }
    if (want_gw) out.kernel = interpolate_kernel_adjoint(gk, w.kernel.shape().h);
    return out;
}

/// Records dynamic_conv on a tape. `bias` may be an invalid Var.
template <class T>
Var dynamic_conv(Tape<T>& tape, Var x, Var kernel, Var bias, const ConvConfig& cfg, bool upsampling_allowed = true) {
    ConvWeights<T> w{tape.value(kernel), bias.valid() ? std::optional<Tensor4<T>>(tape.value(bias)) : std::nullopt};
    Tensor4<T> y = cfg.stride.fractional() ? fractional_forward(tape.value(x), w, cfg, upsampling_allowed)
                                           : conv_forward(tape.value(x), w, cfg);
    if (!tape.recording()) return tape.push(std::move(y), {x}, {});
    auto backward = [x, kernel, bias, cfg](Tape<T>& t, std::size_t self) {
        ConvWeights<T> sw{t.value(kernel), bias.valid() ? std::optional<Tensor4<T>>(t.value(bias)) : std::nullopt};
        ConvGrads<T> g = conv_backward(t.grad_of(self), t.value(x), sw, cfg, t.needs_grad(x), t.needs_grad(kernel));
        if (t.needs_grad(x)) accumulate(t, x, g.x);
        if (t.needs_grad(kernel)) accumulate(t, kernel, g.kernel);
        if (bias.valid() && g.bias) accumulate(t, bias, *g.bias);
    };
    if (bias.valid()) return tape.push(std::move(y), {x, kernel, bias}, std::move(backward));
    return tape.push(std::move(y), {x, kernel}, std::move(backward));
}

/// Dynamic convolution through the direct reference kernels, counting every
/// executed multiply into `macs`. Stride 1/2 runs as a stride-1 correlation
/// over the zero-inserted input.
template <class T>
Tensor4<T> instrumented_conv(const Tensor4<T>& x, const ConvWeights<T>& w, const ConvConfig& cfg,
                             std::uint64_t& macs) {
    cfg.validate();
    const Tensor4<T> k = interpolate_kernel(w.kernel, cfg.kernel_size);
    Tensor4<T> y;
    if (cfg.stride.fractional()) {
        const Shape4 s = x.shape();
        Tensor4<T> z(s.n, s.c, 2 * s.h, 2 * s.w);
        for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < s.c; ++c)
                for (std::size_t i = 0; i < s.h; ++i)
                    for (std::size_t j = 0; j < s.w; ++j) z(n, c, 2 * i, 2 * j) = x(n, c, i, j);
        y = kernels::conv2d_direct(z, k, 1, cfg.padding(), cfg.dilation, cfg.groups, &macs);
    } else {
        y = kernels::conv2d_direct(x, k, cfg.stride.step(), cfg.padding(), cfg.dilation, cfg.groups, &macs);
    }
    detail::add_bias_scaled(y, w.bias, static_cast<T>(cfg.alpha(w.stored_size())));
    return y;
}

/// Multiply-accumulates of one dynamic convolution over the whole batch of
/// `x`: n * K^2 * (c_in/g) * c_out * h' * w', with K the active size and
/// h' = 2h for stride 1/2.
inline std::uint64_t count_macs(const Shape4& x, std::size_t out_channels, const ConvConfig& cfg) {
    const Extent2 o = output_shape(x.h, x.w, cfg);
    const auto k = static_cast<std::uint64_t>(cfg.kernel_size);
    return static_cast<std::uint64_t>(x.n) * k * k * (x.c / static_cast<std::uint64_t>(cfg.groups)) * out_channels *
           o.h * o.w;
}

template <class T>
std::uint64_t count_macs(const Shape4& x, const ConvWeights<T>& w, const ConvConfig& cfg) {
    return count_macs(x, w.out_channels(), cfg);
}

}  // namespace dynaconv
