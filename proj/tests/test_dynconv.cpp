#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dynaconv/dynconv.hpp"

using namespace dynaconv;

namespace {

Tensor4d random_tensor(Shape4 s, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor4d t(s);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

/// Number of window placements of a span-`span` window stepping by `s`
/// across a padded line of length h + 2p, counted one by one.
std::size_t count_windows(std::size_t h, std::size_t p, std::size_t span, std::size_t s) {
    std::size_t n = 0;
    for (std::size_t start = 0; start + span <= h + 2 * p - 1; start += s) ++n;
    return n;
}

/// Explicit zero insertion of D-1 zeros between kernel taps.
Tensor4d dilate_kernel(const Tensor4d& k, int d) {
    const Shape4 s = k.shape();
    const std::size_t kd = (s.h - 1) * d + 1;
    Tensor4d out(s.n, s.c, kd, kd);
    for (std::size_t o = 0; o < s.n; ++o)
        for (std::size_t i = 0; i < s.c; ++i)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x) out(o, i, y * d, x * d) = k(o, i, y, x);
    return out;
}

/// Places x on the even lattice of a (2h, 2w) zero map.
Tensor4d zero_insert_input(const Tensor4d& x) {
    const Shape4 s = x.shape();
    Tensor4d z(s.n, s.c, 2 * s.h, 2 * s.w);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t xx = 0; xx < s.w; ++xx) z(n, c, 2 * y, 2 * xx) = x(n, c, y, xx);
    return z;
}

/// Bilinear value of a 2-D grid at a fractional (y, x) position.
double bilinear_at(const Tensor4d& k, std::size_t o, std::size_t i, double y, double x) {
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, k.shape().h - 1), x1 = std::min(x0 + 1, k.shape().w - 1);
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * ((1 - fx) * k(o, i, y0, x0) + fx * k(o, i, y0, x1)) +
           fy * ((1 - fx) * k(o, i, y1, x0) + fx * k(o, i, y1, x1));
}

/// Scalar graph: mean(probe * dynamic_conv(x, W, b)).
GraphFn conv_graph(ConvConfig cfg, Tensor4d probe, bool with_bias) {
    return [cfg, probe, with_bias](Tape<double>& t, std::span<const Var> p) {
        Var y = dynamic_conv(t, p[0], p[1], with_bias ? p[2] : Var{}, cfg);
        Var pr = t.leaf(probe);
        return reduce(t, ReduceKind::mean, mul(t, y, pr), Axes::all());
    };
}

GradCheckReport check_conv(ConvConfig cfg, std::size_t cin, std::size_t cout, std::size_t h, bool bias,
                           unsigned seed) {
    std::mt19937 rng(seed);
    auto x = random_tensor({2, cin, h, h}, rng);
    auto k = random_tensor({cout, cin / cfg.groups, 3, 3}, rng);
    const Extent2 o = output_shape(h, h, cfg);
    auto probe = random_tensor({2, cout, o.h, o.w}, rng);
    std::vector<Tensor4d> params{x, k};
    if (bias) params.push_back(random_tensor({cout, 1, 1, 1}, rng));
    return grad_check(conv_graph(cfg, probe, bias), params, 1e-5, 1e-4, 48);
}

}  // namespace

// ---------------------------------------------------------------------------
// output_shape

TEST(OutputShape, StrideTwoHalvesResolution) {
    ConvConfig cfg{.stride = 2, .dilation = 1, .kernel_size = 3};
    EXPECT_EQ(output_shape(56, 56, cfg), (Extent2{28, 28}));
}

TEST(OutputShape, SamePaddingIdentity) {
    ConvConfig cfg{};
    EXPECT_EQ(cfg.padding(), 1);
    EXPECT_EQ(output_shape(7, 7, cfg), (Extent2{7, 7}));
}

TEST(OutputShape, StrideThreeDilationTwoMatchesWindowCount) {
    ConvConfig cfg{.stride = 3, .dilation = 2, .kernel_size = 3};
    EXPECT_EQ(cfg.padding(), 2);
    const std::size_t expected = count_windows(32, 2, 2 * 2, 3);
    EXPECT_EQ(expected, 11u);
    EXPECT_EQ(output_shape(32, 32, cfg).h, expected);
}

TEST(OutputShape, FractionalDoubles) {
    ConvConfig cfg{.stride = Stride::half()};
    EXPECT_EQ(output_shape(8, 5, cfg), (Extent2{16, 10}));
}

// ---------------------------------------------------------------------------
// conv_forward

TEST(ConvForward, OnesKernelOnOnesInput) {
    ConvWeights<double> w{Tensor4d(1, 1, 3, 3, 1.0), std::nullopt};
    auto y = conv_forward(Tensor4d(1, 1, 3, 3, 1.0), w, ConvConfig{});
    EXPECT_DOUBLE_EQ(y(0, 0, 1, 1), 9);
    EXPECT_DOUBLE_EQ(y(0, 0, 0, 0), 4);
    EXPECT_DOUBLE_EQ(y(0, 0, 0, 2), 4);
    EXPECT_DOUBLE_EQ(y(0, 0, 2, 0), 4);
    EXPECT_DOUBLE_EQ(y(0, 0, 2, 2), 4);
    EXPECT_DOUBLE_EQ(y(0, 0, 0, 1), 6);
}

TEST(ConvForward, DilationTwoOnDeltaSpreadsKernel) {
    std::mt19937 rng(1);
    auto k = random_tensor({1, 1, 3, 3}, rng);
    Tensor4d delta(1, 1, 5, 5);
    delta(0, 0, 2, 2) = 1;
    ConvConfig cfg{.dilation = 2};
    auto y = conv_forward(delta, ConvWeights<double>{k, std::nullopt}, cfg);
    auto oracle = kernels::conv2d_direct(delta, dilate_kernel(k, 2), 1, 2, 1, 1);
    EXPECT_LT(max_abs_diff(y, oracle), 1e-14);
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) EXPECT_NEAR(y(0, 0, 4 - 2 * ky, 4 - 2 * kx), k(0, 0, ky, kx), 1e-14);
    EXPECT_DOUBLE_EQ(y(0, 0, 1, 1), 0.0);
}

TEST(ConvForward, IdentityKernel) {
    std::mt19937 rng(2);
    auto x = random_tensor({2, 1, 6, 7}, rng);
    Tensor4d k(1, 1, 3, 3);
    k(0, 0, 1, 1) = 1;
    EXPECT_EQ(conv_forward(x, ConvWeights<double>{k, std::nullopt}, ConvConfig{}), x);
}

TEST(ConvForward, ChannelMismatch) {
    ConvWeights<double> w{Tensor4d(4, 3, 3, 3), std::nullopt};
    EXPECT_THROW(conv_forward(Tensor4d(1, 2, 5, 5), w, ConvConfig{}), DimensionError);
    ConvConfig grouped{.groups = 2};
    ConvWeights<double> wg{Tensor4d(4, 2, 3, 3), std::nullopt};
    EXPECT_NO_THROW(conv_forward(Tensor4d(1, 4, 5, 5), wg, grouped));
    EXPECT_THROW(conv_forward(Tensor4d(1, 3, 5, 5), wg, grouped), DimensionError);
}

TEST(ConvForward, RejectsOptionsOutsideUniverse) {
    ConvWeights<double> w{Tensor4d(1, 1, 3, 3), std::nullopt};
    Tensor4d x(1, 1, 8, 8);
    EXPECT_THROW(conv_forward(x, w, ConvConfig{.dilation = 6}), ConfigError);
    EXPECT_THROW(conv_forward(x, w, ConvConfig{.kernel_size = 4}), ConfigError);
    EXPECT_THROW(conv_forward(x, w, ConvConfig{.stride = 5}), ConfigError);
    EXPECT_THROW(conv_forward(x, w, ConvConfig{.stride = Stride::half()}), ConfigError);
}

TEST(ConvForward, FastPathAgreesWithDirectReference) {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const int groups = std::array{1, 2, 4}[trial % 3];
        const std::size_t cin = 4, cout = 4;
        const int s = 1 + trial % 4, d = 1 + trial % 5, k = 1 + 2 * (trial % 5);
        auto x = random_tensor({2, cin, static_cast<std::size_t>(9 + trial % 7), 11}, rng).cast<float>();
        auto w = random_tensor({cout, cin / groups, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng)
                     .cast<float>();
        const int p = d * (k - 1) / 2;
        auto fast = kernels::conv2d(x, w, s, p, d, groups);
        auto ref = kernels::conv2d_direct(x, w, s, p, d, groups);
        EXPECT_LT(max_abs_diff(fast, ref), 1e-5f) << "trial " << trial;
    }
}

// ---------------------------------------------------------------------------
// fractional_forward

TEST(FractionalForward, DoublesResolution) {
    ConvWeights<double> w{Tensor4d(3, 2, 3, 3, 0.1), std::nullopt};
    auto y = fractional_forward(Tensor4d(1, 2, 8, 8, 1.0), w, ConvConfig{.stride = Stride::half()});
    EXPECT_EQ(y.shape(), (Shape4{1, 3, 16, 16}));
}

TEST(FractionalForward, DeltaStampsKernelOnStrideTwoLattice) {
    std::mt19937 rng(4);
    auto k = random_tensor({1, 1, 3, 3}, rng);
    Tensor4d delta(1, 1, 4, 4);
    delta(0, 0, 1, 2) = 1;
    ConvConfig cfg{.stride = Stride::half()};
    auto y = fractional_forward(delta, ConvWeights<double>{k, std::nullopt}, cfg);

    // Scatter oracle: input (iy, ix) lands on output 2*iy - p + ky with the flipped kernel.
    Tensor4d oracle(1, 1, 8, 8);
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
            const int oy = 2 * 1 - 1 + ky, ox = 2 * 2 - 1 + kx;
            oracle(0, 0, oy, ox) += k(0, 0, 2 - ky, 2 - kx);
        }
    EXPECT_LT(max_abs_diff(y, oracle), 1e-14);
}

TEST(FractionalForward, EqualsSamePaddedConvOverZeroInsertedInput) {
    std::mt19937 rng(5);
    for (int d = 1; d <= 3; ++d)
        for (int k : {1, 3, 5}) {
            auto x = random_tensor({2, 4, 5, 6}, rng);
            auto w = random_tensor({6, 2, 3, 3}, rng);
            ConvConfig cfg{.stride = Stride::half(), .dilation = d, .kernel_size = k, .groups = 2};
            auto y = fractional_forward(x, ConvWeights<double>{w, std::nullopt}, cfg);
            ConvConfig flat{.stride = 1, .dilation = d, .kernel_size = k, .groups = 2};
            auto oracle = conv_forward(zero_insert_input(x), ConvWeights<double>{w, std::nullopt}, flat);
            EXPECT_LT(max_abs_diff(y, oracle), 1e-12) << "d=" << d << " k=" << k;
        }
}

TEST(FractionalForward, FastPathAgreesWithScatterReference) {
    std::mt19937 rng(6);
    auto x = random_tensor({2, 4, 5, 7}, rng);
    auto tk = random_tensor({4, 3, 5, 5}, rng);
    auto fast = kernels::conv_transpose2d(x, tk, 2, 4, 2, 1, 2);
    auto ref = kernels::conv_transpose2d_direct(x, tk, 2, 4, 2, 1, 2);
    EXPECT_LT(max_abs_diff(fast, ref), 1e-12);
}

TEST(FractionalForward, AdjointOfStrideTwoConvolution) {
    std::mt19937 rng(7);
    // All-ones single-channel kernel: flip/swap is a no-op, so the pair is exact.
    {
        ConvWeights<double> w{Tensor4d(1, 1, 3, 3, 1.0), std::nullopt};
        auto x = random_tensor({1, 1, 10, 10}, rng);
        auto y = random_tensor({1, 1, 5, 5}, rng);
        auto ax = conv_forward(x, w, ConvConfig{.stride = 2});
        auto aty = fractional_forward(y, w, ConvConfig{.stride = Stride::half()});
        EXPECT_NEAR(dot(ax, y), dot(x, aty), 1e-10);
    }
    // Random multi-channel kernel: the transposed op uses the stored kernel as (in, out).
    for (int d = 1; d <= 5; ++d) {
        auto w = random_tensor({3, 2, 3, 3}, rng);
        auto x = random_tensor({2, 2, 12, 12}, rng);
        auto y = random_tensor({2, 3, 6, 6}, rng);
        auto ax = kernels::conv2d(x, w, 2, d, d, 1);
        auto aty = kernels::conv_transpose2d(y, w, 2, d, d, 1, 1);
        EXPECT_NEAR(dot(ax, y), dot(x, aty), 1e-10) << "d=" << d;
    }
}

TEST(FractionalForward, NotAllowedForLayer) {
    ConvWeights<double> w{Tensor4d(1, 1, 3, 3), std::nullopt};
    EXPECT_THROW(fractional_forward(Tensor4d(1, 1, 4, 4), w, ConvConfig{.stride = Stride::half()}, false),
                 ConfigError);
    EXPECT_THROW(fractional_forward(Tensor4d(1, 2, 4, 4), w, ConvConfig{.stride = Stride::half()}), DimensionError);
}

// ---------------------------------------------------------------------------
// interpolate_kernel

TEST(InterpolateKernel, StoredSizeIsIdentity) {
    std::mt19937 rng(8);
    auto k = random_tensor({2, 3, 3, 3}, rng);
    EXPECT_EQ(interpolate_kernel(k, 3), k);
    EXPECT_DOUBLE_EQ(ConvConfig{}.alpha(3), 1.0);
}

TEST(InterpolateKernel, SizeOneSamplesCentre) {
    Tensor4d k(Shape4{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto r = interpolate_kernel(k, 1);
    ASSERT_EQ(r.shape(), (Shape4{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(r[0], 5.0);
}

TEST(InterpolateKernel, SizeFiveMatchesBilinearOracle) {
    Tensor4d k(Shape4{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    std::mt19937 rng(9);
    auto k2 = random_tensor({2, 2, 3, 3}, rng);
    for (const auto* src : {&k, &k2}) {
        for (int size : {5, 7, 9}) {
            auto r = interpolate_kernel(*src, size);
            const double step = 2.0 / (size - 1);
            for (std::size_t o = 0; o < src->shape().n; ++o)
                for (std::size_t i = 0; i < src->shape().c; ++i)
                    for (int a = 0; a < size; ++a)
                        for (int b = 0; b < size; ++b)
                            EXPECT_NEAR(r(o, i, a, b), bilinear_at(*src, o, i, a * step, b * step), 1e-14);
        }
    }
    // Linear ramp kernel stays linear: centre row of K=5 is 4, 4.5, 5, 5.5, 6.
    auto r = interpolate_kernel(k, 5);
    EXPECT_NEAR(r(0, 0, 2, 1), 4.5, 1e-14);
    EXPECT_NEAR(r(0, 0, 0, 0), 1.0, 1e-14);
    EXPECT_NEAR(r(0, 0, 4, 4), 9.0, 1e-14);
}

TEST(InterpolateKernel, UnsupportedSize) {
    Tensor4d k(1, 1, 3, 3);
    EXPECT_THROW(interpolate_kernel(k, 4), ConfigError);
    EXPECT_THROW(interpolate_kernel(k, 11), ConfigError);
}

TEST(InterpolateKernel, AdjointIdentity) {
    std::mt19937 rng(10);
    auto k = random_tensor({2, 2, 3, 3}, rng);
    for (int size : {1, 5, 7, 9}) {
        auto g = random_tensor({2, 2, static_cast<std::size_t>(size), static_cast<std::size_t>(size)}, rng);
        EXPECT_NEAR(dot(interpolate_kernel(k, size), g), dot(k, interpolate_kernel_adjoint(g, 3)), 1e-12);
    }
}

// ---------------------------------------------------------------------------
// conv_backward

TEST(ConvBackward, DefaultAttributes) {
    auto r = check_conv(ConvConfig{}, 2, 3, 6, true, 11);
    EXPECT_TRUE(r.passed()) << r.max_rel_error;
}

TEST(ConvBackward, EveryDilation) {
    for (int d = 2; d <= 5; ++d) {
        auto r = check_conv(ConvConfig{.dilation = d}, 2, 2, 7, false, 12 + d);
        EXPECT_TRUE(r.passed()) << "d=" << d << " " << r.max_rel_error;
    }
}

TEST(ConvBackward, EveryKernelSize) {
    for (int k : {1, 3, 5, 7, 9}) {
        auto r = check_conv(ConvConfig{.kernel_size = k}, 2, 2, 6, false, 20 + k);
        EXPECT_TRUE(r.passed()) << "k=" << k << " " << r.max_rel_error;
    }
}

TEST(ConvBackward, FractionalStride) {
    for (int k : {1, 3, 5}) {
        auto r = check_conv(ConvConfig{.stride = Stride::half(), .dilation = 2, .kernel_size = k}, 2, 3, 4, true, 30 + k);
        EXPECT_TRUE(r.passed()) << "k=" << k << " " << r.max_rel_error;
    }
}

TEST(ConvBackward, StridedGroupedAndDepthwise) {
    auto r = check_conv(ConvConfig{.stride = 3, .dilation = 2, .kernel_size = 5, .groups = 2}, 4, 4, 9, false, 40);
    EXPECT_TRUE(r.passed()) << r.max_rel_error;
    auto dw = check_conv(ConvConfig{.stride = Stride::half(), .kernel_size = 7, .groups = 3}, 3, 3, 4, false, 41);
    EXPECT_TRUE(dw.passed()) << dw.max_rel_error;
}

TEST(ConvBackward, MissingSavedActivations) {
    ConvWeights<double> w{Tensor4d(1, 1, 3, 3), std::nullopt};
    EXPECT_THROW(conv_backward(Tensor4d(1, 1, 4, 4), Tensor4d(), w, ConvConfig{}), StateError);
}

// ---------------------------------------------------------------------------
// count_macs

TEST(CountMacs, MatchesInstrumentedConvolution) {
    ConvConfig cfg{};
    const Shape4 x{1, 2, 8, 8};
    EXPECT_EQ(count_macs(x, 4, cfg), 4608u);
    std::uint64_t counted = 0;
    kernels::conv2d_direct(Tensor4d(x, 1.0), Tensor4d(4, 2, 3, 3, 1.0), 1, 1, 1, 1, &counted);
    EXPECT_EQ(counted, 4608u);
}

TEST(CountMacs, KernelOneAndStrideTwo) {
    EXPECT_EQ(count_macs(Shape4{1, 2, 8, 8}, 4, ConvConfig{.kernel_size = 1}), 512u);
    const auto s1 = count_macs(Shape4{1, 2, 16, 16}, 4, ConvConfig{.stride = 1});
    const auto s2 = count_macs(Shape4{1, 2, 16, 16}, 4, ConvConfig{.stride = 2});
    EXPECT_EQ(s1, 4 * s2);
}

// ---------------------------------------------------------------------------
// Invariants

TEST(DynconvInvariants, WeightsUntouchedByAnyConfig) {
    std::mt19937 rng(50);
    ConvWeights<float> w{random_tensor({4, 2, 3, 3}, rng).cast<float>(), random_tensor({4, 1, 1, 1}, rng).cast<float>()};
    const auto before = w;
    auto x = random_tensor({1, 2, 9, 9}, rng).cast<float>();
    for (Stride s : {Stride::half(), Stride(1), Stride(2), Stride(3), Stride(4)})
        for (int d = 1; d <= 5; ++d)
            for (int k : {1, 3, 5, 7, 9}) dynamic_conv(x, w, ConvConfig{.stride = s, .dilation = d, .kernel_size = k});
    EXPECT_EQ(w.kernel, before.kernel);
    EXPECT_EQ(*w.bias, *before.bias);
}

TEST(DynconvInvariants, ShapeLawOverRandomConfigs) {
    std::mt19937 rng(51);
    std::uniform_int_distribution<int> hd(1, 24), sd(0, 4), dd(1, 5), kd(0, 4), gd(0, 1);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t h = hd(rng), w = hd(rng);
        const int si = sd(rng);
        ConvConfig cfg{.stride = si == 0 ? Stride::half() : Stride(si), .dilation = dd(rng),
                       .kernel_size = 1 + 2 * kd(rng), .groups = gd(rng) ? 2 : 1};
        ConvWeights<float> wt{Tensor4f(2, 2 / cfg.groups, 3, 3, 0.5f), std::nullopt};
        auto y = dynamic_conv(Tensor4f(1, 2, h, w, 1.0f), wt, cfg);
        const Extent2 e = output_shape(h, w, cfg);
        ASSERT_EQ(y.shape(), (Shape4{1, 2, e.h, e.w})) << "trial " << trial;
        ASSERT_GE(e.h, 1u);
    }
}

TEST(DynconvInvariants, AlphaCompensatesTapCount) {
    ConvWeights<double> w{Tensor4d(2, 2, 3, 3, 0.25), std::nullopt};
    Tensor4d x(1, 2, 24, 24, 1.5);
    auto base = conv_forward(x, w, ConvConfig{});
    for (int k : {1, 5, 7, 9}) {
        auto y = conv_forward(x, w, ConvConfig{.kernel_size = k});
        for (std::size_t i = 5; i < 19; ++i)
            for (std::size_t j = 5; j < 19; ++j) EXPECT_NEAR(y(0, 1, i, j), base(0, 1, i, j), 1e-5) << "k=" << k;
    }
}

TEST(DynconvInvariants, DilationEqualsZeroInsertedKernel) {
    std::mt19937 rng(52);
    for (int d = 1; d <= 5; ++d) {
        auto x = random_tensor({1, 3, 13, 11}, rng);
        auto k = random_tensor({2, 3, 3, 3}, rng);
        auto dil = kernels::conv2d_direct(x, k, 1, d, d, 1);
        auto ins = kernels::conv2d_direct(x, dilate_kernel(k, d), 1, d, 1, 1);
        EXPECT_EQ(dil, ins) << "d=" << d;
        auto fast = conv_forward(x, ConvWeights<double>{k, std::nullopt}, ConvConfig{.dilation = d});
        EXPECT_LT(max_abs_diff(fast, ins), 1e-10);
    }
}

TEST(DynconvInvariants, FractionalThenStrideTwoRestoresResolution) {
    ConvWeights<float> w{Tensor4f(3, 3, 3, 3, 0.1f), std::nullopt};
    for (std::size_t h : {1u, 4u, 7u, 16u}) {
        auto up = fractional_forward(Tensor4f(1, 3, h, h + 1, 1.0f), w, ConvConfig{.stride = Stride::half()});
        auto down = conv_forward(up, w, ConvConfig{.stride = 2});
        EXPECT_EQ(down.shape(), (Shape4{1, 3, h, h + 1}));
    }
}
