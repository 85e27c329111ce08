#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dynaconv/errors.hpp"

namespace dynaconv {

/// Extents of a rank-4 (batch, channels, height, width) array.
struct Shape4 {
    std::size_t n = 0, c = 0, h = 0, w = 0;

    constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr bool operator==(const Shape4&) const noexcept = default;

    std::string str() const {
        std::ostringstream os;
        os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
        return os.str();
    }
};

/// Dense row-major rank-4 array. A matrix is stored as (rows, cols, 1, 1).
template <class T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;
    explicit Tensor4(Shape4 s, T fill = T(0)) : shape_(s), data_(s.numel(), fill) {}
    Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
        : Tensor4(Shape4{n, c, h, w}, fill) {}
    Tensor4(Shape4 s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
        if (data_.size() != shape_.numel())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match dims " + shape_.str());
    }

    static Tensor4 matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
        return Tensor4(rows, cols, 1, 1, fill);
    }
    static Tensor4 matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
        return Tensor4(Shape4{rows, cols, 1, 1}, std::move(values));
    }

    const Shape4& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const noexcept { return shape_.n; }
    std::size_t cols() const noexcept { return shape_.c * shape_.h * shape_.w; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[offset(n, c, h, w)];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[offset(n, c, h, w)];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Pointer to the (n, c) spatial plane.
    T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + offset(n, c, 0, 0); }
    const T* plane(std::size_t n, std::size_t c) const noexcept { return data_.data() + offset(n, c, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor4 reshaped(Shape4 s) const {
        if (s.numel() != shape_.numel())
            throw DimensionError("cannot reshape " + shape_.str() + " to " + s.str());
        Tensor4 out = *this;
        out.shape_ = s;
        return out;
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor4<U> cast() const {
        Tensor4<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (a != b) throw DimensionError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

template <class T>
T max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <class T>
T dot(const Tensor4<T>& a, const Tensor4<T>& b) {
    require_same_shape(a.shape(), b.shape(), "dot");
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace dynaconv
