#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dynaconv/interp.hpp"
#include "dynaconv/model.hpp"
#include "dynaconv/weight_io.hpp"

namespace dynaconv {

struct Dataset {
    Tensor4f images;  // (n, c, h, w)
    std::vector<int> labels;
    int class_count = 0;
    std::string split;
    std::vector<float> scales;  // per-sample object extent, synthetic data only
    Normalization norm;         // empty until normalize()

    std::size_t size() const noexcept { return labels.size(); }

    void validate() const {
        if (labels.empty()) throw FormatError("empty_dataset", "dataset has no samples");
        if (images.shape().n != labels.size())
            throw FormatError("count_mismatch", "image count " + std::to_string(images.shape().n) + " vs label count " +
                                                    std::to_string(labels.size()));
        for (int l : labels)
            if (l < 0 || l >= class_count)
                throw FormatError("label_range", "label " + std::to_string(l) + " outside [0, " +
                                                     std::to_string(class_count) + ")");
        if (!scales.empty() && scales.size() != labels.size())
            throw FormatError("count_mismatch", "scale metadata length differs from sample count");
    }
};

/// Copies samples [begin, end) into a contiguous batch.
inline Tensor4f batch_images(const Dataset& ds, std::size_t begin, std::size_t end) {
    const Shape4 s = ds.images.shape();
    Tensor4f b(end - begin, s.c, s.h, s.w);
    const std::size_t per = s.c * s.plane();
    std::copy(ds.images.data() + begin * per, ds.images.data() + end * per, b.data());
    return b;
}

inline Tensor4f gather_images(const Dataset& ds, std::span<const std::size_t> idx) {
    const Shape4 s = ds.images.shape();
    Tensor4f b(idx.size(), s.c, s.h, s.w);
    const std::size_t per = s.c * s.plane();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(ds.images.data() + idx[i] * per, ds.images.data() + (idx[i] + 1) * per, b.data() + i * per);
    return b;
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
    Dataset out;
    out.images = gather_images(ds, idx);
    out.class_count = ds.class_count;
    out.split = ds.split;
    out.norm = ds.norm;
    for (std::size_t i : idx) {
        out.labels.push_back(ds.labels[i]);
        if (!ds.scales.empty()) out.scales.push_back(ds.scales[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches

inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

inline Dataset parse_cifar10(const std::vector<char>& bytes, const std::string& split = "") {
    if (bytes.empty() || bytes.size() % kCifarRecord != 0)
        throw FormatError("bad_size", "CIFAR-10 batch size " + std::to_string(bytes.size()) +
                                          " is not a positive multiple of " + std::to_string(kCifarRecord));
    const std::size_t n = bytes.size() / kCifarRecord;
    Dataset ds;
    ds.class_count = 10;
    ds.split = split;
    ds.images = Tensor4f(n, 3, 32, 32);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + i * kCifarRecord;
        if (rec[0] > 9)
            throw FormatError("label_range", "record " + std::to_string(i) + " has label " + std::to_string(rec[0]));
        ds.labels[i] = rec[0];
        float* dst = ds.images.data() + i * 3072;
        for (std::size_t j = 0; j < 3072; ++j) dst[j] = static_cast<float>(rec[1 + j]) / 255.0f;
    }
    return ds;
}

inline Dataset load_cifar10_file(const std::string& path, const std::string& split = "") {
    return parse_cifar10(detail::read_file(path), split);
}

/// split "train" reads data_batch_1..5.bin, "test" reads test_batch.bin.
inline Dataset load_cifar10(const std::string& dir, const std::string& split = "test") {
    std::vector<std::string> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else if (split == "test") {
        files.push_back("test_batch.bin");
    } else {
        throw ConfigError("unknown CIFAR-10 split '" + split + "'");
    }
    std::vector<char> all;
    for (const auto& f : files) {
        const auto path = (std::filesystem::path(dir) / f).string();
        if (!std::filesystem::exists(path)) throw FormatError("missing_file", "CIFAR-10 file not found: " + path);
        const auto b = detail::read_file(path);
        if (b.size() % kCifarRecord != 0)
            throw FormatError("bad_size", path + ": size is not a multiple of " + std::to_string(kCifarRecord));
        all.insert(all.end(), b.begin(), b.end());
    }
    return parse_cifar10(all, split);
}

// ---------------------------------------------------------------------------
// IDX

namespace detail {

inline std::uint32_t be32(const std::vector<char>& b, std::size_t off) {
    if (b.size() < off + 4) throw FormatError("truncated", "IDX header truncated");
    const auto* p = reinterpret_cast<const unsigned char*>(b.data()) + off;
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

}  // namespace detail

/// u8 IDX images (magic 0x803) and labels (0x801); grayscale is replicated to three channels.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, int class_count = 10) {
    const auto ib = detail::read_file(images_path);
    const auto lb = detail::read_file(labels_path);
    if (detail::be32(ib, 0) != 0x803) throw FormatError("bad_magic", images_path + ": not an IDX image file");
    if (detail::be32(lb, 0) != 0x801) throw FormatError("bad_magic", labels_path + ": not an IDX label file");
    const std::size_t n = detail::be32(ib, 4), h = detail::be32(ib, 8), w = detail::be32(ib, 12);
    const std::size_t nl = detail::be32(lb, 4);
    if (n != nl)
        throw FormatError("count_mismatch",
                          "IDX image count " + std::to_string(n) + " vs label count " + std::to_string(nl));
    if (ib.size() != 16 + n * h * w) throw FormatError("bad_size", images_path + ": payload does not match header");
    if (lb.size() != 8 + n) throw FormatError("bad_size", labels_path + ": payload does not match header");
    Dataset ds;
    ds.class_count = class_count;
    ds.images = Tensor4f(n, 3, h, w);
    ds.labels.resize(n);
    const auto* px = reinterpret_cast<const unsigned char*>(ib.data()) + 16;
    const auto* lbl = reinterpret_cast<const unsigned char*>(lb.data()) + 8;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lbl[i];
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t j = 0; j < h * w; ++j) ds.images.plane(i, c)[j] = static_cast<float>(px[i * h * w + j]) / 255.0f;
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic scale-controlled shapes

inline constexpr std::array<const char*, 8> kShapeNames{"disk", "square", "cross", "triangle",
                                                         "ring", "diamond", "x", "stripes"};

/// Membership of local coordinates (u, v) in [0,1)^2 for each shape class.
inline bool shape_contains(int cls, double u, double v) {
    const double du = u - 0.5, dv = v - 0.5;
    switch (cls) {
        case 0: return du * du + dv * dv <= 0.25;
        case 1: return true;
        case 2: return std::abs(du) < 1.0 / 6 || std::abs(dv) < 1.0 / 6;
        case 3: return std::abs(du) <= v / 2 + 0.5 / 8;
        case 4: return du * du + dv * dv <= 0.25 && du * du + dv * dv >= 0.0625;
        case 5: return std::abs(du) + std::abs(dv) <= 0.5;
        case 6: return std::abs(u - v) < 1.0 / 6 || std::abs(u + v - 1) < 1.0 / 6;
        case 7: return static_cast<int>(std::floor(v * 5)) % 2 == 0;
    }
    return false;
}

struct SyntheticSpec {
    std::size_t n = 512;
    int class_count = 4;
    int scale_min = 6;
    int scale_max = 28;
    std::size_t canvas = 32;
};

/// Shapes of per-sample pixel extent in [scale_min, scale_max] placed at a
/// random position on a uniform-noise background. Labels cycle through the
/// classes so the histogram is uniform within one.
inline Dataset gen_scale_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.n == 0) throw ParameterError("synthetic dataset needs n > 0");
    if (spec.class_count < 1 || spec.class_count > static_cast<int>(kShapeNames.size()))
        throw ParameterError("synthetic class count must be in 1.." + std::to_string(kShapeNames.size()));
    if (spec.scale_min < 1 || spec.scale_min > spec.scale_max)
        throw ParameterError("synthetic scale range must satisfy 1 <= min <= max");
    if (static_cast<std::size_t>(spec.scale_max) > spec.canvas)
        throw ParameterError("synthetic scale " + std::to_string(spec.scale_max) + " exceeds canvas " +
                             std::to_string(spec.canvas));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> scale_d(spec.scale_min, spec.scale_max);
    std::uniform_real_distribution<float> noise(0.0f, 0.45f), fg(0.65f, 1.0f), jitter(-0.05f, 0.05f);
    const std::size_t c = spec.canvas;
    Dataset ds;
    ds.class_count = spec.class_count;
    ds.split = "synthetic";
    ds.images = Tensor4f(spec.n, 3, c, c);
    ds.labels.resize(spec.n);
    ds.scales.resize(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const int cls = static_cast<int>(i % static_cast<std::size_t>(spec.class_count));
        const int s = scale_d(rng);
        std::uniform_int_distribution<std::size_t> pos(0, c - static_cast<std::size_t>(s));
        const std::size_t y0 = pos(rng), x0 = pos(rng);
        std::array<float, 3> color{fg(rng), fg(rng), fg(rng)};
        for (std::size_t ch = 0; ch < 3; ++ch) {
            float* p = ds.images.plane(i, ch);
            for (std::size_t j = 0; j < c * c; ++j) p[j] = noise(rng);
        }
        for (int a = 0; a < s; ++a)
            for (int b = 0; b < s; ++b) {
                const double v = (a + 0.5) / s, u = (b + 0.5) / s;
                if (!shape_contains(cls, u, v)) continue;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    ds.images(i, ch, y0 + static_cast<std::size_t>(a), x0 + static_cast<std::size_t>(b)) =
                        std::clamp(color[ch] + jitter(rng), 0.0f, 1.0f);
            }
        ds.labels[i] = cls;
        ds.scales[i] = static_cast<float>(s);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Normalization

inline Normalization compute_normalization(const Dataset& ds) {
    const Shape4 s = ds.images.shape();
    Normalization n;
    for (std::size_t c = 0; c < s.c; ++c) {
        double sum = 0, sq = 0;
        for (std::size_t i = 0; i < s.n; ++i) {
            const float* p = ds.images.plane(i, c);
            for (std::size_t j = 0; j < s.plane(); ++j) {
                sum += p[j];
                sq += static_cast<double>(p[j]) * p[j];
            }
        }
        const double cnt = static_cast<double>(s.n * s.plane());
        const double mu = sum / cnt;
        n.mean.push_back(static_cast<float>(mu));
        n.stddev.push_back(static_cast<float>(std::sqrt(std::max(sq / cnt - mu * mu, 1e-12))));
    }
    return n;
}

/// Standardizes raw [0,1] images in place with the given constants.
inline void normalize(Dataset& ds, const Normalization& n) {
    const Shape4 s = ds.images.shape();
    if (!ds.norm.mean.empty()) throw StateError("dataset is already normalized");
    if (n.mean.size() != s.c || n.stddev.size() != s.c)
        throw DimensionError("normalization constants do not match " + std::to_string(s.c) + " channels");
    for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t c = 0; c < s.c; ++c) {
            float* p = ds.images.plane(i, c);
            for (std::size_t j = 0; j < s.plane(); ++j) p[j] = (p[j] - n.mean[c]) / n.stddev[c];
        }
    ds.norm = n;
}

// ---------------------------------------------------------------------------
// Probe transforms

struct ProbeTransform {
    enum class Kind { scale, context };
    Kind kind = Kind::scale;
    double factor = 1.0;
    std::size_t crop = 0;
    std::size_t reference = 40;

    static ProbeTransform scale(double f) { return {Kind::scale, f, 0, 40}; }
    static ProbeTransform context(std::size_t crop, std::size_t reference = 40) {
        return {Kind::context, 1.0, crop, reference};
    }

    void validate() const {
        if (kind == Kind::scale) {
            static constexpr std::array<double, 5> ok{0.25, 0.5, 1.0, 2.0, 4.0};
            if (std::find(ok.begin(), ok.end(), factor) == ok.end())
                throw ParameterError("scale factor must be one of 1/4, 1/2, 1, 2, 4");
        } else {
            if (reference == 0) throw ParameterError("context reference extent must be positive");
            if (crop == 0 || crop > reference)
                throw ParameterError("crop " + std::to_string(crop) + " must lie within the reference extent " +
                                     std::to_string(reference));
        }
    }

    std::string str() const {
        if (kind == Kind::scale) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "scale x%g", factor);
            return buf;
        }
        return "context " + std::to_string(crop) + "/" + std::to_string(reference);
    }
};

/// Half-pixel bilinear resize of every plane (shares the kernel-interpolation taps).
inline Tensor4f resize_bilinear(const Tensor4f& x, std::size_t h, std::size_t w) {
    const Shape4 s = x.shape();
    if (h == 0 || w == 0) throw ParameterError("resize target must be non-empty");
    if (h == s.h && w == s.w) return x;
    const auto ry = linear_taps(s.h, h, GridAlign::half_pixel);
    const auto rx = linear_taps(s.w, w, GridAlign::half_pixel);
    Tensor4f out(s.n, s.c, h, w);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) resample_plane(x.plane(n, c), s.h, s.w, out.plane(n, c), h, w, ry, rx);
    return out;
}

inline Tensor4f center_crop(const Tensor4f& x, std::size_t crop) {
    const Shape4 s = x.shape();
    if (crop > s.h || crop > s.w) throw ParameterError("crop larger than image");
    const std::size_t oy = (s.h - crop) / 2, ox = (s.w - crop) / 2;
    Tensor4f out(s.n, s.c, crop, crop);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < crop; ++i)
                std::copy(x.plane(n, c) + (oy + i) * s.w + ox, x.plane(n, c) + (oy + i) * s.w + ox + crop,
                          out.plane(n, c) + i * crop);
    return out;
}

inline Tensor4f apply_probe(const Tensor4f& images, const ProbeTransform& t) {
    t.validate();
    const Shape4 s = images.shape();
    if (t.kind == ProbeTransform::Kind::scale) {
        const auto h = static_cast<std::size_t>(std::lround(static_cast<double>(s.h) * t.factor));
        const auto w = static_cast<std::size_t>(std::lround(static_cast<double>(s.w) * t.factor));
        return resize_bilinear(images, std::max<std::size_t>(1, h), std::max<std::size_t>(1, w));
    }
    return center_crop(resize_bilinear(images, t.reference, t.reference), t.crop);
}

inline Dataset apply_probe(const Dataset& ds, const ProbeTransform& t) {
    Dataset out = ds;
    out.images = apply_probe(ds.images, t);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence in the weight container

inline void save_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    WeightStore s;
    s.fingerprint["dataset"] = {{"class_count", ds.class_count}, {"split", ds.split}};
    if (!ds.norm.mean.empty()) s.fingerprint["normalization"] = {{"mean", ds.norm.mean}, {"std", ds.norm.stddev}};
    const Shape4 sh = ds.images.shape();
    s.tensors.push_back({"images",
                         {static_cast<std::uint32_t>(sh.n), static_cast<std::uint32_t>(sh.c),
                          static_cast<std::uint32_t>(sh.h), static_cast<std::uint32_t>(sh.w)},
                         ds.images});
    const auto n = static_cast<std::uint32_t>(ds.size());
    Tensor4f labels(n, 1, 1, 1);
    for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = static_cast<float>(ds.labels[i]);
    s.tensors.push_back({"labels", {n}, labels});
    if (!ds.scales.empty()) s.tensors.push_back({"scales", {n}, Tensor4f(Shape4{n, 1, 1, 1}, ds.scales)});
    save_weight_store(s, path);
}

inline Dataset load_dataset(const std::string& path) {
    const WeightStore s = load_weight_store(path);
    if (!s.fingerprint.contains("dataset")) throw FormatError("fingerprint_mismatch", path + " is not a dataset file");
    const NamedTensor* im = s.find("images");
    const NamedTensor* lb = s.find("labels");
    if (!im || !lb) throw FormatError("missing_tensor", path + ": dataset needs images and labels");
    Dataset ds;
    ds.images = im->values;
    ds.class_count = s.fingerprint["dataset"].value("class_count", 0);
    ds.split = s.fingerprint["dataset"].value("split", std::string());
    for (float v : lb->values.values()) ds.labels.push_back(static_cast<int>(v));
    if (const NamedTensor* sc = s.find("scales"))
        ds.scales.assign(sc->values.values().begin(), sc->values.values().end());
    if (s.fingerprint.contains("normalization")) {
        ds.norm.mean = s.fingerprint["normalization"].value("mean", std::vector<float>{});
        ds.norm.stddev = s.fingerprint["normalization"].value("std", std::vector<float>{});
    }
    ds.validate();
    return ds;
}

}  // namespace dynaconv
