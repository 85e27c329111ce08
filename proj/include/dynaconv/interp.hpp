#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dynaconv/errors.hpp"

namespace dynaconv {

/// Sample-grid convention for linear resampling.
enum class GridAlign {
    /// x_j = j (src-1)/(dst-1); a single output samples the centre (src-1)/2.
    corners,
    /// x_j = (j + 1/2) src/dst - 1/2, clamped to [0, src-1] (image resize).
    half_pixel,
};

/// Dense dst x src matrix of 1-D linear interpolation weights, row-major.
/// Each row has at most two non-zeros and sums to 1.
inline std::vector<double> linear_taps(std::size_t src, std::size_t dst, GridAlign align) {
    if (src == 0 || dst == 0) throw ParameterError("linear_taps: empty extent");
    std::vector<double> m(dst * src, 0.0);
    for (std::size_t j = 0; j < dst; ++j) {
        double x;
        if (align == GridAlign::corners)
            x = dst == 1 ? 0.5 * static_cast<double>(src - 1)
                         : static_cast<double>(j) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
        else
            x = (static_cast<double>(j) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
        x = std::clamp(x, 0.0, static_cast<double>(src - 1));
        auto i0 = static_cast<std::size_t>(std::floor(x));
        if (i0 >= src - 1) i0 = src - 1;
        const double frac = x - static_cast<double>(i0);
        m[j * src + i0] += 1.0 - frac;
        if (frac > 0.0) m[j * src + i0 + 1] += frac;
    }
    return m;
}

/// dst = Ry * src * Rx^T for one plane, where Ry is (dh x sh) and Rx is (dw x sw).
template <class T>
void resample_plane(const T* src, std::size_t sh, std::size_t sw, T* dst, std::size_t dh, std::size_t dw,
                    const std::vector<double>& ry, const std::vector<double>& rx) {
    std::vector<double> tmp(sh * dw, 0.0);
    for (std::size_t u = 0; u < sh; ++u)
        for (std::size_t b = 0; b < dw; ++b) {
            double s = 0;
            for (std::size_t v = 0; v < sw; ++v) s += rx[b * sw + v] * static_cast<double>(src[u * sw + v]);
            tmp[u * dw + b] = s;
        }
    for (std::size_t a = 0; a < dh; ++a)
        for (std::size_t b = 0; b < dw; ++b) {
            double s = 0;
            for (std::size_t u = 0; u < sh; ++u) s += ry[a * sh + u] * tmp[u * dw + b];
            dst[a * dw + b] = static_cast<T>(s);
        }
}

/// Adjoint of resample_plane: src_grad += Ry^T * dst_grad * Rx.
template <class T>
void resample_plane_adjoint(const T* dst_grad, std::size_t dh, std::size_t dw, T* src_grad, std::size_t sh,
                            std::size_t sw, const std::vector<double>& ry, const std::vector<double>& rx) {
    std::vector<double> tmp(sh * dw, 0.0);
    for (std::size_t u = 0; u < sh; ++u)
        for (std::size_t b = 0; b < dw; ++b) {
            double s = 0;
            for (std::size_t a = 0; a < dh; ++a) s += ry[a * sh + u] * static_cast<double>(dst_grad[a * dw + b]);
            tmp[u * dw + b] = s;
        }
    for (std::size_t u = 0; u < sh; ++u)
        for (std::size_t v = 0; v < sw; ++v) {
            double s = 0;
            for (std::size_t b = 0; b < dw; ++b) s += tmp[u * dw + b] * rx[b * sw + v];
            src_grad[u * sw + v] += static_cast<T>(s);
        }
}

}  // namespace dynaconv
