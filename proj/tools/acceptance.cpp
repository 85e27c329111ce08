// Acceptance run: one PASS / FAIL / NOT RUN line per primary criterion.
//
// Desk-scale experiments use the synthetic scale dataset; the CIFAR-10
// experiment runs only when DYNACONV_CIFAR10_DIR points at the binary batches.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dynaconv/config.hpp"

using namespace dynaconv;

namespace {

enum class Status { pass, fail, not_run };

struct Outcome {
    Status status = Status::pass;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const Outcome& o, double seconds, double budget_seconds) {
    Status s = o.status;
    std::string detail = o.detail;
    if (s == Status::pass && budget_seconds > 0 && seconds > budget_seconds) {
        s = Status::fail;
        detail += "; runtime over budget";
    }
    const char* tag = s == Status::pass ? "PASS   " : s == Status::fail ? "FAIL   " : "NOT RUN";
    if (s == Status::fail) ++failures;
    char t[64];
    if (budget_seconds > 0)
        std::snprintf(t, sizeof t, "%.1fs of %.0fs", seconds, budget_seconds);
    else
        std::snprintf(t, sizeof t, "%.1fs", seconds);
    std::printf("%s  %-22s  [%s]  %s\n", tag, name.c_str(), t, detail.c_str());
    std::fflush(stdout);
}

void info(const std::string& name, const std::string& detail) {
    std::printf("INFO     %-22s  %s\n", name.c_str(), detail.c_str());
    std::fflush(stdout);
}

bool selected(const std::string& name) {
    const char* only = std::getenv("DYNACONV_ACCEPTANCE_ONLY");
    if (!only || !*only) return true;
    const std::string list = std::string(",") + only + ",";
    return list.find("," + name + ",") != std::string::npos;
}

template <class Fn>
void criterion(const std::string& name, double budget_seconds, Fn&& fn) {
    if (!selected(name)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(name, o, dt, budget_seconds);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Tensor4d random_tensor(Shape4 s, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor4d t(s);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

double dot(const Tensor4d& a, const Tensor4d& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs_diff(const Tensor4d& a, const Tensor4d& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor4d dilate_kernel(const Tensor4d& k, int d) {
    const Shape4 s = k.shape();
    const std::size_t kd = (s.h - 1) * static_cast<std::size_t>(d) + 1;
    Tensor4d out(s.n, s.c, kd, kd);
    for (std::size_t o = 0; o < s.n; ++o)
        for (std::size_t i = 0; i < s.c; ++i)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x) out(o, i, y * d, x * d) = k(o, i, y, x);
    return out;
}

// ---------------------------------------------------------------------------
// Toy sweeps

SweepResult toy(std::size_t n, std::size_t M, int classes, double p_correct, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> cls(0, classes - 1);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    SweepResult sr;
    sr.perms.assign(M, ModelSpec{}.default_configuration());
    for (std::size_t m = 0; m < M; ++m) {
        sr.perms[m][3].dilation = static_cast<int>(m % 5) + 1;
        sr.perms[m][2].dilation = static_cast<int>(m / 5 % 5) + 1;
    }
    sr.attributes = {Attribute::dilation};
    sr.slots = SlotSet::parse("CD");
    sr.macs.assign(M, 0);
    for (std::size_t i = 0; i < n; ++i) {
        sr.labels.push_back(cls(rng));
        for (std::size_t m = 0; m < M; ++m) {
            const int p = u(rng) < p_correct ? sr.labels.back() : cls(rng);
            sr.pred.push_back(static_cast<std::uint16_t>(p));
            sr.conf.push_back(p == sr.labels.back() ? 0.3f + 0.7f * u(rng) : 0.49f * u(rng));
        }
    }
    return sr;
}

/// Lower-middle median of sorted (Q, index) pairs, computed by full sort.
double median_by_sort(const SweepResult& sr) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sr.samples(); ++i) {
        std::vector<std::pair<double, std::size_t>> row;
        for (std::size_t m = 0; m < sr.count(); ++m) row.push_back({sr.q(i, m), m});
        std::sort(row.begin(), row.end());
        hits += sr.correct(i, row[(row.size() - 1) / 2].second);
    }
    return static_cast<double>(hits) / static_cast<double>(sr.samples());
}

/// Dominance: best >= every static accuracy >= worst.
bool dominance(const SweepResult& sr) {
    const Bounds b = bounds(sr);
    for (std::size_t m = 0; m < sr.count(); ++m) {
        const double a = static_accuracy(sr, m);
        if (a > b.best || a < b.worst) return false;
    }
    return b.worst <= b.median && b.median <= b.best;
}

/// Best achievable coverage with any k-subset, by enumeration.
double exhaustive_subset(const SweepResult& sr, std::size_t k) {
    const std::size_t M = sr.count();
    double best = 0;
    for (std::uint32_t mask = 0; mask < (1u << M); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < sr.samples(); ++i) {
            bool any = false;
            for (std::size_t m = 0; m < M; ++m) any = any || ((mask >> m & 1u) && sr.correct(i, m));
            hits += any;
        }
        best = std::max(best, static_cast<double>(hits) / static_cast<double>(sr.samples()));
    }
    return best;
}

/// Toy whose correct sets form a laminar family (disjoint or nested), where greedy coverage is optimal.
SweepResult laminar_toy(std::size_t M, std::uint32_t seed) {
    std::mt19937 rng(seed);
    const std::size_t n = 60;
    SweepResult sr = toy(n, M, 4, 0.0, seed);
    std::uniform_int_distribution<std::size_t> owner(0, M - 1);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    // sample i belongs to a random "block"; perms 0..M/2-1 own blocks; perm M/2+j covers a prefix of block j
    const std::size_t blocks = std::max<std::size_t>(1, M / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = owner(rng) % blocks;
        const bool in_prefix = u(rng) < 0.4f;
        for (std::size_t m = 0; m < M; ++m) {
            bool hit = m == b || (m >= blocks && m - blocks == b && in_prefix);
            const int lab = sr.labels[i];
            sr.pred[sr.cell(i, m)] = static_cast<std::uint16_t>(hit ? lab : (lab + 1) % 4);
            sr.conf[sr.cell(i, m)] = hit ? 0.5f + 0.5f * u(rng) : 0.4f * u(rng);
        }
    }
    return sr;
}

// ---------------------------------------------------------------------------
// Desk-scale fixtures (synthetic)

ModelSpec desk_spec() {
    ModelSpec s = ModelSpec::mini_resnet({8, 16, 16, 32}, 4, 8);
    return s;
}

EnumerateOptions stride_enum(const std::string& slots) {
    EnumerateOptions eo;
    eo.attributes = {Attribute::stride};
    eo.slots = SlotSet::parse(slots);
    return eo;
}

struct Desk {
    Dataset train, eval;
    std::optional<Model<float>> static_model, rof_model;
    std::optional<SweepResult> pre, post;
    double static_acc = 0;
};

Desk& desk() {
    static Desk d;
    return d;
}

void prepare_static() {
    Desk& d = desk();
    if (d.static_model) return;
    SyntheticSpec tr;
    tr.n = 1024;
    SyntheticSpec ev;
    ev.n = 96;
    d.train = gen_scale_synthetic(tr, 7);
    d.eval = gen_scale_synthetic(ev, 8);
    const Normalization norm = compute_normalization(d.train);
    normalize(d.train, norm);
    normalize(d.eval, norm);
    auto model = Model<float>::build(desk_spec(), 7);
    model.normalization() = norm;
    TrainConfig tc;
    tc.epochs = 12;
    tc.decay_epoch = 9;
    tc.lr = 0.05;
    tc.seed = 7;
    train_static(model, d.train, tc);
    d.static_acc = evaluate_accuracy(model, d.eval, model.spec().default_configuration());
    d.static_model = std::move(model);
}

// ---------------------------------------------------------------------------
// Criteria

Outcome numerics() {
    std::mt19937 rng(101);
    double worst_grad = 0;
    std::size_t paths = 0, failed = 0;
    auto graph = [](ConvConfig cfg, Tensor4d probe) {
        return GraphFn([cfg, probe](Tape<double>& t, std::span<const Var> p) {
            Var y = dynamic_conv(t, p[0], p[1], p[2], cfg);
            return reduce(t, ReduceKind::mean, mul(t, y, t.leaf(probe)), Axes::all());
        });
    };
    auto check = [&](ConvConfig cfg, std::size_t h) {
        const std::size_t cin = 2, cout = 3;
        auto x = random_tensor({2, cin, h, h}, rng);
        auto k = random_tensor({cout, cin / static_cast<std::size_t>(cfg.groups), 3, 3}, rng);
        auto b = random_tensor({cout, 1, 1, 1}, rng);
        const Extent2 o = output_shape(h, h, cfg);
        auto probe = random_tensor({2, cout, o.h, o.w}, rng);
        const auto r = grad_check(graph(cfg, probe), {x, k, b}, 1e-5, 1e-4, 64);
        worst_grad = std::max(worst_grad, r.max_rel_error);
        ++paths;
        failed += !r.passed();
    };
    check(ConvConfig{}, 7);
    for (int d = 2; d <= 5; ++d) check(ConvConfig{.dilation = d}, 8);
    for (int k : {1, 3, 5, 7, 9}) check(ConvConfig{.kernel_size = k}, 7);
    for (int k : {1, 3, 5}) check(ConvConfig{.stride = Stride::half(), .kernel_size = k}, 4);
    check(ConvConfig{.stride = Stride::half(), .dilation = 2}, 4);
    for (int s : {2, 3, 4}) check(ConvConfig{.stride = s, .kernel_size = 5}, 9);

    double worst_dil = 0;
    for (int d = 1; d <= 5; ++d) {
        auto x = random_tensor({1, 3, 13, 11}, rng);
        auto k = random_tensor({2, 3, 3, 3}, rng);
        auto fast = conv_forward(x, ConvWeights<double>{k, std::nullopt}, ConvConfig{.dilation = d});
        auto oracle = kernels::conv2d_direct(x, dilate_kernel(k, d), 1, d, 1, 1);
        worst_dil = std::max(worst_dil, max_abs_diff(fast, oracle));
    }
    double worst_adj = 0;
    for (int d = 1; d <= 5; ++d)
        for (int ks : {1, 3, 5}) {
            auto w = random_tensor({3, 2, static_cast<std::size_t>(ks), static_cast<std::size_t>(ks)}, rng);
            auto x = random_tensor({2, 2, 12, 12}, rng);
            const int pad = d * (ks - 1) / 2;
            auto ax = kernels::conv2d(x, w, 2, pad, d, 1);
            auto y = random_tensor(ax.shape(), rng);
            const std::size_t extra = 12 - ((ax.shape().h - 1) * 2 + static_cast<std::size_t>(d * (ks - 1)) + 1 -
                                            2 * static_cast<std::size_t>(pad));
            auto aty = kernels::conv_transpose2d(y, w, 2, pad, d, static_cast<int>(extra), 1);
            const double lhs = dot(ax, y), rhs = dot(x, aty);
            worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
        }
    const bool ok = failed == 0 && worst_dil <= 1e-10 && worst_adj <= 1e-10;
    return {ok ? Status::pass : Status::fail,
            std::to_string(paths) + " gradient paths, " + std::to_string(failed) + " failed, max rel err " +
                fmt("%.2e", worst_grad) + " (tol 1e-4); dilation equivalence " + fmt("%.2e", worst_dil) +
                ", adjoint identity " + fmt("%.2e", worst_adj) + " (tol 1e-10)"};
}

Outcome shape_cost() {
    std::mt19937 rng(202);
    std::uniform_int_distribution<int> hd(1, 24), sd(0, 4), dd(1, 5), kd(0, 4), gd(0, 1);
    std::size_t mismatches = 0;
    const std::size_t trials = 1000;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t h = static_cast<std::size_t>(hd(rng)), w = static_cast<std::size_t>(hd(rng));
        const int si = sd(rng);
        ConvConfig cfg{.stride = si == 0 ? Stride::half() : Stride(si), .dilation = dd(rng),
                       .kernel_size = 1 + 2 * kd(rng), .groups = gd(rng) ? 2 : 1};
        ConvWeights<float> wt{Tensor4f(4, static_cast<std::size_t>(4 / cfg.groups), 3, 3, 0.5f), std::nullopt};
        const auto y = dynamic_conv(Tensor4f(1, 4, h, w, 1.0f), wt, cfg);
        const Extent2 e = output_shape(h, w, cfg);
        mismatches += y.shape() != Shape4{1, 4, e.h, e.w};
    }
    std::size_t mac_checks = 0, mac_mismatches = 0;
    const std::vector<ConvConfig> layer_cfgs{
        {}, {.stride = 2, .dilation = 3}, {.stride = Stride::half(), .kernel_size = 5},
        {.stride = 3, .kernel_size = 9, .groups = 2}, {.stride = 4, .dilation = 5, .kernel_size = 1},
        {.stride = Stride::half(), .dilation = 2, .kernel_size = 7, .groups = 2}};
    for (const auto& cfg : layer_cfgs) {
        const Shape4 xs{2, 4, 9, 11};
        ConvWeights<double> w{Tensor4d(6, static_cast<std::size_t>(4 / cfg.groups), 3, 3, 0.1), std::nullopt};
        std::uint64_t counted = 0;
        instrumented_conv(Tensor4d(xs, 1.0), w, cfg, counted);
        ++mac_checks;
        mac_mismatches += counted != count_macs(xs, 6, cfg);
    }
    auto model = Model<float>::build(ModelSpec::mini_resnet({4, 8, 8, 8}, 4, 4), 3);
    const auto perms = enumerate_permutations(model.spec(), stride_enum("ABCD"));
    for (std::size_t m = 0; m < perms.size(); m += 61) {
        const Tensor4f x(1, 3, 32, 32, 0.5f);
        ++mac_checks;
        mac_mismatches += model.instrumented_macs(x, perms[m]) != model.trace(perms[m], 32, 32).macs;
    }
    const bool ok = mismatches == 0 && mac_mismatches == 0 && mac_checks >= 5;
    return {ok ? Status::pass : Status::fail,
            std::to_string(trials) + " random layer configurations, " + std::to_string(mismatches) +
                " shape mismatches; " + std::to_string(mac_checks) + " MAC checks (layers and whole networks), " +
                std::to_string(mac_mismatches) + " mismatches"};
}

Outcome quality_bounds() {
    std::size_t grid = 0, bad = 0;
    for (int k = 0; k <= 1000; ++k) {
        const double t = k / 1000.0;
        for (bool c : {false, true}) {
            ++grid;
            bad += quality(t, c) != (c ? t + 1.0 : t);
        }
    }
    std::size_t sweeps = 0, dom_fail = 0, med_fail = 0;
    for (std::uint32_t s = 0; s < 200; ++s) {
        const auto sr = toy(1 + s % 37, 1 + (s * 7) % 24, 2 + static_cast<int>(s % 5), 0.2 + 0.003 * s, s);
        ++sweeps;
        dom_fail += !dominance(sr);
        med_fail += bounds(sr).median != median_by_sort(sr);
    }
    Desk& d = desk();
    for (const auto* sr : {d.pre ? &*d.pre : nullptr, d.post ? &*d.post : nullptr})
        if (sr) {
            ++sweeps;
            dom_fail += !dominance(*sr);
            med_fail += bounds(*sr).median != median_by_sort(*sr);
        }
    const bool ok = bad == 0 && dom_fail == 0 && med_fail == 0;
    return {ok ? Status::pass : Status::fail,
            std::to_string(grid) + " (t, correct) grid points, " + std::to_string(bad) + " wrong; " +
                std::to_string(sweeps) + " sweeps, " + std::to_string(dom_fail) + " dominance and " +
                std::to_string(med_fail) + " median mismatches"};
}

Outcome budget_table() {
    const auto three = budget(3, 625), two = budget(2, 625), one = budget(1, 625);
    const bool ok = three.per_attribute == 8 && three.total() == 512 && two.per_attribute == 25 &&
                    two.total() == 625 && one.per_attribute == 625;
    return {ok ? Status::pass : Status::fail,
            "(3 attrs, 625) -> R=" + std::to_string(three.per_attribute) + "/" + std::to_string(three.total()) +
                "; (2 attrs) -> R=" + std::to_string(two.per_attribute) + "/" + std::to_string(two.total()) +
                " (expected 8/512 and 25/625)"};
}

Outcome greedy_suite() {
    std::size_t curves = 0, mono_fail = 0, end_fail = 0, toys = 0, exceed = 0, friendly = 0, friendly_fail = 0;
    auto curve_checks = [&](const SweepResult& sr) {
        const auto c = greedy_accumulate(sr, sr.count());
        ++curves;
        for (std::size_t k = 1; k < c.size(); ++k) mono_fail += c[k].accuracy < c[k - 1].accuracy;
        end_fail += c.back().accuracy != bounds(sr).best;
        return c;
    };
    for (std::uint32_t s = 0; s < 60; ++s) {
        const std::size_t M = 2 + s % 9;
        const auto sr = toy(25 + s % 11, M, 3, 0.25, 1000 + s);
        const auto c = curve_checks(sr);
        ++toys;
        for (std::size_t k = 1; k <= M; ++k) exceed += c[k - 1].accuracy > exhaustive_subset(sr, k) + 1e-15;
        const auto lam = laminar_toy(2 + s % 9, 2000 + s);
        const auto lc = curve_checks(lam);
        ++friendly;
        for (std::size_t k = 1; k <= lam.count(); ++k) friendly_fail += lc[k - 1].accuracy != exhaustive_subset(lam, k);
    }
    Desk& d = desk();
    if (d.pre) curve_checks(*d.pre);
    const bool ok = mono_fail == 0 && end_fail == 0 && exceed == 0 && friendly_fail == 0;
    return {ok ? Status::pass : Status::fail,
            std::to_string(curves) + " curves (" + std::to_string(mono_fail) + " non-monotone, " +
                std::to_string(end_fail) + " endpoint mismatches); " + std::to_string(toys) +
                " random toys, " + std::to_string(exceed) + " steps above the exhaustive optimum; " +
                std::to_string(friendly) + " laminar toys, " + std::to_string(friendly_fail) +
                " steps off the optimum"};
}

Outcome rof_directional() {
    prepare_static();
    Desk& d = desk();
    const auto perms = enumerate_permutations(d.static_model->spec(), stride_enum("ABCD"));
    SweepOptions so;
    so.threads = resolve_threads();
    d.pre = comprehensive_sweep(*d.static_model, d.eval, perms, so, {Attribute::stride}, SlotSet::all());
    Model<float> rof = *d.static_model;
    TrainConfig tc;
    tc.epochs = 40;
    tc.decay_epoch = 30;
    tc.lr = 0.02;
    tc.seed = 11;
    tc.sampling = TrainConfig::Sampling::uniform_random;
    rof_finetune(rof, d.train, tc, perms);
    d.post = comprehensive_sweep(rof, d.eval, perms, so, {Attribute::stride}, SlotSet::all());
    d.rof_model = std::move(rof);
    const auto vr = volatility_report(*d.pre, *d.post);
    const double u0 = mean_unique_predictions(*d.pre), u1 = mean_unique_predictions(*d.post);
    const bool ok = vr.post_volatility() < vr.pre_volatility() && vr.post.median > vr.pre.median && u1 < u0;
    return {ok ? Status::pass : Status::fail,
            "synthetic scale data, stride ABCD (" + std::to_string(perms.size()) + " permutations, " +
                std::to_string(d.eval.size()) + " samples): volatility " + fmt("%.3f", vr.pre_volatility()) + " -> " +
                fmt("%.3f", vr.post_volatility()) + ", median " + fmt("%.3f", vr.pre.median) + " -> " +
                fmt("%.3f", vr.post.median) + ", mean unique predictions " + fmt("%.3f", u0) + " -> " +
                fmt("%.3f", u1)};
}

Outcome dominance_analog_line(const SweepResult& sr, std::size_t default_index, const std::string& what) {
    const Bounds b = bounds(sr);
    const double st = static_accuracy(sr, default_index);
    const bool ok = b.best >= st + 0.05 && b.worst <= st - 0.15;
    return {ok ? Status::pass : Status::fail,
            what + ": static " + fmt("%.3f", st) + ", best-case " + fmt("%.3f", b.best) + " (need >= static + 0.05), worst-case " +
                fmt("%.3f", b.worst) + " (need <= static - 0.15)"};
}

std::size_t default_index(const SweepResult& sr, const ModelSpec& spec) {
    for (std::size_t m = 0; m < sr.count(); ++m)
        if (sr.perms[m] == spec.default_configuration()) return m;
    throw ConfigError("default configuration missing from sweep");
}

Outcome cifar_dominance() {
    const char* dir = std::getenv("DYNACONV_CIFAR10_DIR");
    if (!dir || !*dir) return {Status::not_run, "DYNACONV_CIFAR10_DIR is not set; CIFAR-10 is not available offline"};
    Dataset train = load_cifar10(dir, "train"), test = load_cifar10(dir, "test");
    std::vector<std::size_t> tr(20000), te(1000);
    std::iota(tr.begin(), tr.end(), 0);
    std::iota(te.begin(), te.end(), 0);
    train = subset(train, tr);
    test = subset(test, te);
    const Normalization norm = compute_normalization(train);
    normalize(train, norm);
    normalize(test, norm);
    auto model = Model<float>::build(ModelSpec::mini_resnet({16, 32, 64, 128}, 10, 16), 0);
    model.normalization() = norm;
    TrainConfig tc;
    tc.epochs = 15;
    tc.decay_epoch = 10;
    tc.batch = 64;
    tc.lr = 0.05;
    tc.weight_decay = 5e-4;
    train_static(model, train, tc);
    const auto perms = enumerate_permutations(model.spec(), stride_enum("ABCD"));
    SweepOptions so;
    so.threads = resolve_threads();
    so.batch = 100;
    const auto sr = comprehensive_sweep(model, test, perms, so, {Attribute::stride}, SlotSet::all());
    const double st = static_accuracy(sr, default_index(sr, model.spec()));
    Outcome o = dominance_analog_line(sr, default_index(sr, model.spec()), "CIFAR-10 stride ABCD");
    if (st < 0.60) {
        o.status = Status::fail;
        o.detail += "; static accuracy below 0.60";
    }
    return o;
}

Outcome efficiency_criterion() {
    std::size_t toys = 0, bad = 0;
    for (std::uint32_t s = 0; s < 100; ++s) {
        const auto sr = toy(20 + s % 13, 2 + s % 15, 3, 0.4, 3000 + s);
        std::mt19937_64 rng(s);
        std::vector<std::uint64_t> costs(sr.count());
        for (auto& c : costs) c = rng() % 1000;
        for (const auto& ref : {EfficiencyReference::best_case(), EfficiencyReference::fixed(s % sr.count(), "fixed")}) {
            const auto r = efficiency_oracle(sr, costs, ref);
            ++toys;
            bad += r.accuracy != r.reference_accuracy || r.avg_macs > r.reference_avg_macs;
        }
    }
    prepare_static();
    Desk& d = desk();
    const Model<float>& model = d.rof_model ? *d.rof_model : *d.static_model;
    ModelSpec spec = model.spec();
    spec.options = efficiency_option_sets();
    Model<float> m = model;
    m.set_options(spec.options);
    EnumerateOptions eo;
    eo.attributes = {Attribute::stride, Attribute::size};
    const auto perms = enumerate_permutations(spec, eo);
    std::vector<std::size_t> idx(32);
    std::iota(idx.begin(), idx.end(), 0);
    const Dataset ev = subset(d.eval, idx);
    SweepOptions so;
    so.threads = resolve_threads();
    const auto sr = comprehensive_sweep(m, ev, perms, so, eo.attributes, SlotSet::all());
    const auto costs = cost_table(m, perms, 32, 32);
    std::size_t desk_bad = 0;
    std::string line;
    for (const auto& ref : {EfficiencyReference::fixed(default_index(sr, spec), "default"), EfficiencyReference::best_case()}) {
        const auto r = efficiency_oracle(sr, costs, ref);
        desk_bad += r.accuracy != r.reference_accuracy || r.avg_macs > r.reference_avg_macs;
        line += "; " + ref.name + ": accuracy " + fmt("%.3f", r.reference_accuracy) + " at " +
                fmt("%.5f", r.reference_avg_macs / 1e9) + " -> " + fmt("%.5f", r.avg_macs / 1e9) + " GMACs";
    }
    const bool ok = bad == 0 && desk_bad == 0;
    return {ok ? Status::pass : Status::fail,
            std::to_string(toys) + " toy checks, " + std::to_string(bad) + " violations; desk model, " +
                std::to_string(perms.size()) + " permutations x " + std::to_string(ev.size()) + " samples, " +
                std::to_string(desk_bad) + " violations" + line};
}

Outcome scale_probe() {
    prepare_static();
    Desk& d = desk();
    const Model<float>& model = d.rof_model ? *d.rof_model : *d.static_model;
    const auto perms = enumerate_permutations(model.spec(), stride_enum("CD"));
    SweepOptions so;
    so.threads = resolve_threads();
    std::vector<double> factors{0.25, 0.5, 1.0, 2.0, 4.0}, mean_d;
    std::string detail;
    for (double f : factors) {
        const auto ds = apply_probe(d.eval, ProbeTransform::scale(f));
        const auto sr = comprehensive_sweep(model, ds, perms, so, {Attribute::stride}, SlotSet::parse("CD"));
        const auto rep = preference_report(sr, model.spec().options);
        mean_d.push_back(mean_preferred(sr, rep, 3, Attribute::stride));
        detail += (detail.empty() ? "" : ", ") + fmt("x%g", f) + ":" + fmt("%.2f", mean_d.back());
    }
    const double rho = spearman(factors, mean_d);
    return {rho > 0 ? Status::pass : Status::fail,
            "stride-dynamic (ROF) model, stride sweep over C and D; mean preferred D stride " + detail +
                "; Spearman rho " + fmt("%.3f", rho) + " (need > 0)"};
}

}  // namespace

int main() {
    pin_blas_single_thread();
    std::printf("dynaconv %s acceptance\n", kVersion);
    criterion("numerics", 120, numerics);
    criterion("shape-cost", 120, shape_cost);
    criterion("rof-directional", 3600, rof_directional);
    if (desk().rof_model) {
        Desk& d = desk();
        const auto perms = enumerate_permutations(d.static_model->spec(), stride_enum("CD"));
        SweepOptions so;
        so.threads = resolve_threads();
        const auto pre = comprehensive_sweep(*d.static_model, d.eval, perms, so, {Attribute::stride}, SlotSet::parse("CD"));
        const auto post = comprehensive_sweep(*d.rof_model, d.eval, perms, so, {Attribute::stride}, SlotSet::parse("CD"));
        const auto vr = volatility_report(pre, post);
        info("rof-stride-cd", "same models, stride sweep over C and D (" + std::to_string(perms.size()) +
                                  " permutations): volatility " + fmt("%.3f", vr.pre_volatility()) + " -> " +
                                  fmt("%.3f", vr.post_volatility()) + ", median " + fmt("%.3f", vr.pre.median) +
                                  " -> " + fmt("%.3f", vr.post.median) + ", mean unique predictions " +
                                  fmt("%.3f", mean_unique_predictions(pre)) + " -> " +
                                  fmt("%.3f", mean_unique_predictions(post)));
    }
    criterion("quality-bounds", 60, quality_bounds);
    criterion("budget", 0, budget_table);
    criterion("greedy", 60, greedy_suite);
    criterion("cifar10-dominance", 3600, cifar_dominance);
    {
        Desk& d = desk();
        if (d.pre) {
            const Bounds b = bounds(*d.pre);
            const double st = static_accuracy(*d.pre, default_index(*d.pre, d.static_model->spec()));
            info("dominance-analog", "synthetic stride ABCD sweep (not the CIFAR-10 criterion): static " +
                                         fmt("%.3f", st) + ", best-case " + fmt("%.3f", b.best) + ", worst-case " +
                                         fmt("%.3f", b.worst));
        }
    }
    criterion("efficiency", 0, efficiency_criterion);
    criterion("scale-probe", 0, scale_probe);
    std::printf("%s\n", failures == 0 ? "acceptance: no failures" : ("acceptance: " + std::to_string(failures) + " failure(s)").c_str());
    return failures == 0 ? 0 : 1;
}
