#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dynaconv/data.hpp"

using namespace dynaconv;

namespace {

const std::string kData = DYNACONV_TEST_DATA;

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("dynaconv_data_" + name)).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::string error_kind(auto&& fn) {
    try {
        fn();
    } catch (const FormatError& e) {
        return e.kind();
    }
    return "none";
}

/// Textbook half-pixel bilinear sample of one plane at output (i, j).
double bilinear_resize_at(const Tensor4f& x, std::size_t c, std::size_t h, std::size_t w, std::size_t i, std::size_t j) {
    const Shape4 s = x.shape();
    auto coord = [](std::size_t k, std::size_t src, std::size_t dst) {
        double v = (k + 0.5) * double(src) / double(dst) - 0.5;
        return std::clamp(v, 0.0, double(src - 1));
    };
    const double y = coord(i, s.h, h), xx = coord(j, s.w, w);
    const auto y0 = std::size_t(y), x0 = std::size_t(xx);
    const std::size_t y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
    const double fy = y - y0, fx = xx - x0;
    return (1 - fy) * ((1 - fx) * x(0, c, y0, x0) + fx * x(0, c, y0, x1)) +
           fy * ((1 - fx) * x(0, c, y1, x0) + fx * x(0, c, y1, x1));
}

Dataset small_synthetic(std::uint64_t seed = 3) {
    SyntheticSpec spec;
    spec.n = 40;
    spec.class_count = 8;
    spec.scale_min = 4;
    spec.scale_max = 30;
    return gen_scale_synthetic(spec, seed);
}

}  // namespace

TEST(Cifar10, FixtureRecordsMatchIndependentWriter) {
    const auto ds = load_cifar10_file(kData + "/cifar_three.bin");
    ASSERT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.images.shape(), (Shape4{3, 3, 32, 32}));
    EXPECT_EQ(ds.labels, (std::vector<int>{0, 7, 9}));
    const int labels[3] = {0, 7, 9};
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j : {0u, 1u, 1023u, 1024u, 2047u, 3071u})
            EXPECT_FLOAT_EQ(ds.images.data()[r * 3072 + j], float((labels[r] * 31 + int(j)) % 256) / 255.0f);
    // first record: channel-major planes, row-major pixels
    EXPECT_FLOAT_EQ(ds.images(0, 1, 0, 5), float((1024 + 5) % 256) / 255.0f);
}

TEST(Cifar10, FullBatchSizeArithmetic) {
    std::vector<char> batch(30'730'000, 0);
    const auto ds = parse_cifar10(batch);
    EXPECT_EQ(ds.size(), 10'000u);
    EXPECT_EQ(ds.images.shape(), (Shape4{10'000, 3, 32, 32}));
}

TEST(Cifar10, MalformedInputRejected) {
    EXPECT_EQ(error_kind([] { load_cifar10_file(kData + "/cifar_badlabel.bin"); }), "label_range");
    std::vector<char> rec(kCifarRecord, 0);
    rec[0] = static_cast<char>(255);
    EXPECT_EQ(error_kind([&] { parse_cifar10(rec); }), "label_range");
    EXPECT_EQ(error_kind([] { parse_cifar10(std::vector<char>(kCifarRecord + 1, 0)); }), "bad_size");
    EXPECT_EQ(error_kind([] { parse_cifar10({}); }), "bad_size");
    EXPECT_EQ(error_kind([] { load_cifar10("/nonexistent-dir", "test"); }), "missing_file");
    EXPECT_THROW(load_cifar10(kData, "validation"), ConfigError);
}

TEST(Idx, FixtureMatchesHeaderAndReplicatesChannels) {
    const auto ds = load_idx(kData + "/idx_images.bin", kData + "/idx_labels.bin");
    EXPECT_EQ(ds.images.shape(), (Shape4{2, 3, 4, 5}));
    EXPECT_EQ(ds.labels, (std::vector<int>{3, 1}));
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_FLOAT_EQ(ds.images(1, c, 2, 3), float(20 + 2 * 5 + 3) / 255.0f);
        EXPECT_FLOAT_EQ(ds.images(0, c, 0, 0), 0.0f);
    }
}

TEST(Idx, HeaderArithmeticAndConsistencyErrors) {
    std::vector<unsigned char> img{0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 28, 0, 0, 0, 28};
    img.resize(16 + 3 * 28 * 28, 7);
    const std::string ip = temp_path("img.idx"), lp = temp_path("lbl.idx"), bad = temp_path("bad.idx");
    write_bytes(ip, img);
    write_bytes(lp, {0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2});
    const auto ds = load_idx(ip, lp);
    EXPECT_EQ(ds.images.shape(), (Shape4{3, 3, 28, 28}));
    write_bytes(bad, {0, 0, 8, 1, 0, 0, 0, 2, 0, 1});
    EXPECT_EQ(error_kind([&] { load_idx(ip, bad); }), "count_mismatch");
    EXPECT_EQ(error_kind([&] { load_idx(lp, lp); }), "bad_magic");
    write_bytes(bad, {0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 12});
    EXPECT_EQ(error_kind([&] { load_idx(ip, bad); }), "label_range");
    for (const auto& p : {ip, lp, bad}) std::filesystem::remove(p);
}

TEST(Synthetic, DeterministicForFixedSeed) {
    const auto a = small_synthetic(11), b = small_synthetic(11), c = small_synthetic(12);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.scales, b.scales);
    EXPECT_NE(a.images, c.images);
}

TEST(Synthetic, ScaleMetadataMatchesRenderedExtent) {
    const auto ds = small_synthetic();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::size_t y0 = 99, y1 = 0, x0 = 99, x1 = 0;
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x)
                if (ds.images(i, 0, y, x) > 0.5f && ds.images(i, 1, y, x) > 0.5f && ds.images(i, 2, y, x) > 0.5f) {
                    y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
                }
        ASSERT_LE(y0, y1) << "sample " << i << " rendered nothing";
        const double extent = double(std::max(y1 - y0, x1 - x0) + 1);
        EXPECT_NEAR(extent, ds.scales[i], 1.0) << "sample " << i << " class " << kShapeNames[ds.labels[i]];
    }
}

TEST(Synthetic, ClassHistogramUniformWithinOne) {
    SyntheticSpec spec;
    spec.n = 103;
    spec.class_count = 5;
    const auto ds = gen_scale_synthetic(spec, 1);
    std::vector<int> hist(5, 0);
    for (int l : ds.labels) ++hist[l];
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    EXPECT_LE(*hi - *lo, 1);
}

TEST(Synthetic, ParameterErrors) {
    SyntheticSpec spec;
    spec.scale_max = 40;
    EXPECT_THROW(gen_scale_synthetic(spec, 1), ParameterError);
    spec = {};
    spec.class_count = 9;
    EXPECT_THROW(gen_scale_synthetic(spec, 1), ParameterError);
}

TEST(Probe, ScaleFactorsAndIdentity) {
    const auto ds = small_synthetic();
    EXPECT_EQ(apply_probe(ds.images, ProbeTransform::scale(1.0)), ds.images);
    EXPECT_EQ(apply_probe(ds.images, ProbeTransform::scale(2.0)).shape(), (Shape4{40, 3, 64, 64}));
    EXPECT_EQ(apply_probe(ds.images, ProbeTransform::scale(4.0)).shape().h, 128u);
    EXPECT_EQ(apply_probe(ds.images, ProbeTransform::scale(0.25)).shape().w, 8u);
    EXPECT_THROW(apply_probe(ds.images, ProbeTransform::scale(3.0)), ParameterError);
}

TEST(Probe, ResizeMatchesTextbookBilinear) {
    const auto ds = small_synthetic();
    const Tensor4f one = batch_images(ds, 0, 1);
    for (std::size_t target : {8u, 16u, 40u, 64u}) {
        const auto r = resize_bilinear(one, target, target);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < target; i += 3)
                for (std::size_t j = 0; j < target; j += 5)
                    EXPECT_NEAR(r(0, c, i, j), bilinear_resize_at(one, c, target, target, i, j), 1e-6);
    }
}

TEST(Probe, ContextCropOfFullExtentEqualsResize) {
    const auto ds = small_synthetic();
    EXPECT_EQ(apply_probe(ds.images, ProbeTransform::context(40)), resize_bilinear(ds.images, 40, 40));
    const auto c20 = apply_probe(ds.images, ProbeTransform::context(20));
    EXPECT_EQ(c20.shape(), (Shape4{40, 3, 20, 20}));
    EXPECT_EQ(c20(3, 1, 0, 0), resize_bilinear(ds.images, 40, 40)(3, 1, 10, 10));
    EXPECT_THROW(apply_probe(ds.images, ProbeTransform::context(48)), ParameterError);
}

TEST(Probe, CommutesWithBatchingAndStaysInRange) {
    auto ds = small_synthetic();
    normalize(ds, compute_normalization(ds));
    std::vector<float> lo(3, 1e9f), hi(3, -1e9f);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t j = 0; j < 1024; ++j) {
                lo[c] = std::min(lo[c], ds.images.plane(i, c)[j]);
                hi[c] = std::max(hi[c], ds.images.plane(i, c)[j]);
            }
    for (const auto& t : {ProbeTransform::scale(0.25), ProbeTransform::scale(0.5), ProbeTransform::scale(2.0),
                          ProbeTransform::scale(4.0), ProbeTransform::context(24), ProbeTransform::context(36)}) {
        const auto whole = apply_probe(ds.images, t);
        const auto part = apply_probe(batch_images(ds, 13, 29), t);
        const std::size_t per = part.size() / 16;
        for (std::size_t k = 0; k < part.size(); ++k) ASSERT_EQ(part[k], whole[13 * per + k]) << t.str();
        for (std::size_t i = 0; i < whole.shape().n; ++i)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t j = 0; j < whole.shape().plane(); ++j) {
                    ASSERT_GE(whole.plane(i, c)[j], lo[c] - 1e-5f) << t.str();
                    ASSERT_LE(whole.plane(i, c)[j], hi[c] + 1e-5f) << t.str();
                }
    }
}

TEST(Normalization, StandardizesChannels) {
    auto ds = small_synthetic();
    const auto n = compute_normalization(ds);
    normalize(ds, n);
    const auto after = compute_normalization(ds);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(after.mean[c], 0.0f, 1e-4f);
        EXPECT_NEAR(after.stddev[c], 1.0f, 1e-4f);
    }
    EXPECT_THROW(normalize(ds, n), StateError);
}

TEST(DatasetFile, RoundTripThroughWeightContainer) {
    auto ds = small_synthetic();
    normalize(ds, compute_normalization(ds));
    const std::string p = temp_path("ds.dynw");
    save_dataset(ds, p);
    const auto back = load_dataset(p);
    EXPECT_EQ(back.images, ds.images);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.scales, ds.scales);
    EXPECT_EQ(back.norm, ds.norm);
    EXPECT_EQ(back.class_count, 8);
    std::filesystem::remove(p);
}
