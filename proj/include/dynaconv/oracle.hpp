#pragma once

// Oracle selection over a comprehensive (sample x permutation) sweep.
//
// Sweep file ("DYNS"), little-endian:
//   magic "DYNS" | u16 version (=1) | u16 flags
//   u32 header length | UTF-8 JSON header
//     {"samples": n, "permutations": M, "table": [...], "attributes": [...],
//      "slots": "ABCD", "macs": [per-permutation MACs per sample], "dataset": {...}}
//   u16 labels[n]
//   u16 predictions[n*M]   (cell (i, m) at i*M + m)
//   f32 confidences[n*M]   (true-class softmax probability)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaconv/data.hpp"
#include "dynaconv/model.hpp"
#include "dynaconv/parallel.hpp"

namespace dynaconv {

// ---------------------------------------------------------------------------
// Permutations

struct SlotSet {
    std::array<bool, kSlotCount> active{};

    static SlotSet all() { return {{true, true, true, true}}; }
    static SlotSet parse(const std::string& s) {
        SlotSet out;
        for (char ch : s) out.active[static_cast<std::size_t>(slot_index(ch))] = true;
        if (out.empty()) throw ConfigError("active slot set must not be empty");
        return out;
    }
    bool empty() const { return std::none_of(active.begin(), active.end(), [](bool b) { return b; }); }
    std::string str() const {
        std::string s;
        for (std::size_t i = 0; i < kSlotCount; ++i)
            if (active[i]) s += kSlotNames[i];
        return s;
    }
};

/// Compact label listing only the swept attributes of the active slots, e.g. "A:s2,d1 D:s1/2,d3".
inline std::string permutation_label(const Configuration& c, const std::vector<Attribute>& attrs, const SlotSet& slots) {
    std::string s;
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        if (!slots.active[i]) continue;
        if (!s.empty()) s += ' ';
        s += kSlotNames[i];
        s += ':';
        bool first = true;
        for (Attribute a : kAllAttributes) {
            if (std::find(attrs.begin(), attrs.end(), a) == attrs.end()) continue;
            if (!first) s += ',';
            first = false;
            switch (a) {
                case Attribute::stride: s += "s" + c[i].stride.str(); break;
                case Attribute::dilation: s += "d" + std::to_string(c[i].dilation); break;
                case Attribute::size: s += "k" + std::to_string(c[i].kernel_size); break;
            }
        }
    }
    return s;
}

struct EnumerateOptions {
    std::vector<Attribute> attributes{Attribute::stride};
    SlotSet slots = SlotSet::all();
    double guard_area_factor = 16.0;  // <= 0 disables the guard
    std::size_t input_h = 32, input_w = 32;
};

/// Cartesian product of the active slots' options, slot-major (A..D) then
/// attribute order (stride, dilation, size), last key fastest. Inactive slots
/// and attributes stay at their defaults.
inline std::vector<Configuration> enumerate_permutations(const ModelSpec& spec, const EnumerateOptions& opt) {
    if (opt.slots.empty()) throw ConfigError("enumerate: no active slots");
    if (opt.attributes.empty()) throw ConfigError("enumerate: no attributes");
    struct Digit {
        std::size_t slot;
        Attribute attr;
        std::size_t radix;
    };
    std::vector<Digit> digits;
    for (std::size_t s = 0; s < kSlotCount; ++s) {
        if (!opt.slots.active[s]) continue;
        for (Attribute a : kAllAttributes) {
            if (std::find(opt.attributes.begin(), opt.attributes.end(), a) == opt.attributes.end()) continue;
            const auto& o = spec.options[s];
            const std::size_t r = a == Attribute::stride ? o.strides.size()
                                  : a == Attribute::dilation ? o.dilations.size()
                                                             : o.sizes.size();
            digits.push_back({s, a, r});
        }
    }
    std::size_t total = 1;
    for (const auto& d : digits) total *= d.radix;
    std::vector<Configuration> out;
    const double cap = opt.guard_area_factor * static_cast<double>(opt.input_h * opt.input_w);
    std::vector<std::size_t> idx(digits.size(), 0);
    for (std::size_t m = 0; m < total; ++m) {
        Configuration c = spec.default_configuration();
        for (std::size_t k = 0; k < digits.size(); ++k) {
            const auto& o = spec.options[digits[k].slot];
            auto& slot = c[digits[k].slot];
            switch (digits[k].attr) {
                case Attribute::stride: slot.stride = o.strides[idx[k]]; break;
                case Attribute::dilation: slot.dilation = o.dilations[idx[k]]; break;
                case Attribute::size: slot.kernel_size = o.sizes[idx[k]]; break;
            }
        }
        bool keep = true;
        if (opt.guard_area_factor > 0) {
            const auto tr = Model<float>::trace_shapes(spec, c, opt.input_h, opt.input_w);
            keep = static_cast<double>(tr.max_area) <= cap;
        }
        if (keep) out.push_back(c);
        for (std::size_t k = digits.size(); k-- > 0;) {
            if (++idx[k] < digits[k].radix) break;
            idx[k] = 0;
        }
    }
    if (out.empty()) throw ConfigError("enumerate: every permutation was removed by the resolution guard");
    return out;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepResult {
    std::vector<Configuration> perms;
    std::vector<Attribute> attributes;
    SlotSet slots = SlotSet::all();
    std::vector<int> labels;
    std::vector<std::uint16_t> pred;  // i * M + m
    std::vector<float> conf;
    std::vector<std::uint64_t> macs;  // per permutation, per sample
    nlohmann::json dataset = nlohmann::json::object();

    std::size_t samples() const noexcept { return labels.size(); }
    std::size_t count() const noexcept { return perms.size(); }
    std::size_t cell(std::size_t i, std::size_t m) const noexcept { return i * perms.size() + m; }
    bool correct(std::size_t i, std::size_t m) const { return pred[cell(i, m)] == labels[i]; }
    double q(std::size_t i, std::size_t m) const;
    std::string label(std::size_t m) const { return permutation_label(perms[m], attributes, slots); }
};

/// Per-permutation quality: t + 1 when the prediction is correct, else t.
inline double quality(double t, bool correct) {
    if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("quality: confidence outside [0, 1]");
    return correct ? t + 1.0 : t;
}

inline double SweepResult::q(std::size_t i, std::size_t m) const { return quality(conf[cell(i, m)], correct(i, m)); }

struct SweepOptions {
    int threads = 1;
    std::size_t batch = 64;  // samples per chunk at 32x32; shrunk in proportion to larger input areas
    double scale = 1.0;  // informational, stored in the header
};

/// Softmax argmax (lowest index on ties) and true-class probability of one logits row.
inline std::pair<std::uint16_t, float> prediction_of(const float* row, std::size_t k, int label) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[arg]) arg = j;
    const double mx = row[arg];
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double t = std::exp(static_cast<double>(row[label]) - mx) / z;
    return {static_cast<std::uint16_t>(arg), static_cast<float>(std::clamp(t, 0.0, 1.0))};
}

/// Runs every sample through every permutation. Work is split into fixed
/// (permutation, sample-chunk) units that fill disjoint cells, so the result
/// is independent of thread count and scheduling.
inline SweepResult comprehensive_sweep(const Model<float>& model, const Dataset& ds, std::vector<Configuration> perms,
                                       const SweepOptions& opt = {}, std::vector<Attribute> attributes = {},
                                       SlotSet slots = SlotSet::all()) {
    ds.validate();
    if (perms.empty()) throw ConfigError("sweep: empty permutation list");
    if (ds.class_count > model.spec().class_count)
        throw ConfigError("sweep: dataset has more classes than the model head");
    if (ds.images.shape().c != static_cast<std::size_t>(model.spec().in_channels))
        throw DimensionError("sweep: dataset channels do not match the model input");
    if (opt.batch == 0) throw ConfigError("sweep: batch must be positive");
    SweepResult r;
    r.perms = std::move(perms);
    r.attributes = std::move(attributes);
    r.slots = slots;
    r.labels = ds.labels;
    const std::size_t n = ds.size(), M = r.count();
    r.pred.assign(n * M, 0);
    r.conf.assign(n * M, 0.0f);
    const Shape4 is = ds.images.shape();
    r.dataset = {{"samples", n}, {"class_count", ds.class_count}, {"split", ds.split},
                 {"extent", {is.h, is.w}}};
    for (const auto& c : r.perms) r.macs.push_back(model.trace(c, is.h, is.w).macs);

    const std::size_t area = is.h * is.w;
    const std::size_t step = std::max<std::size_t>(1, area <= 1024 ? opt.batch : opt.batch * 1024 / area);
    const std::size_t chunks = (n + step - 1) / step;
    const auto k = static_cast<std::size_t>(model.spec().class_count);
    parallel_for(M * chunks, resolve_threads(opt.threads), [&](std::size_t unit) {
        const std::size_t m = unit / chunks, c = unit % chunks;
        const std::size_t b0 = c * step, b1 = std::min(n, b0 + step);
        Tensor4f logits;
        try {
            logits = model.logits(batch_images(ds, b0, b1), r.perms[m]);
        } catch (const Error& e) {
            throw ConfigError("sweep: permutation " + std::to_string(m) + " (" + configuration_string(r.perms[m]) +
                              ") failed on samples [" + std::to_string(b0) + ", " + std::to_string(b1) +
                              "): " + e.what());
        }
        for (std::size_t i = b0; i < b1; ++i) {
            const auto [p, t] = prediction_of(logits.data() + (i - b0) * k, k, r.labels[i]);
            r.pred[r.cell(i, m)] = p;
            r.conf[r.cell(i, m)] = t;
        }
    });
    return r;
}

// ---------------------------------------------------------------------------
// Analyses

struct Bounds {
    double worst = 0, median = 0, best = 0;
};

/// Index of the permutation at rank `which` (0 = min) of Q_i ascending, ties by lowest index.
inline std::size_t ranked_permutation(const SweepResult& sr, std::size_t i, std::size_t which) {
    std::vector<std::size_t> order(sr.count());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sr.q(i, a) < sr.q(i, b); });
    return order[which];
}

inline std::size_t best_permutation(const SweepResult& sr, std::size_t i) {
    std::size_t best = 0;
    double bq = sr.q(i, 0);
    for (std::size_t m = 1; m < sr.count(); ++m)
        if (const double q = sr.q(i, m); q > bq) bq = q, best = m;
    return best;
}

inline std::size_t worst_permutation(const SweepResult& sr, std::size_t i) {
    std::size_t worst = 0;
    double wq = sr.q(i, 0);
    for (std::size_t m = 1; m < sr.count(); ++m)
        if (const double q = sr.q(i, m); q < wq) wq = q, worst = m;
    return worst;
}

/// Lower middle for even M.
inline std::size_t median_permutation(const SweepResult& sr, std::size_t i) {
    return ranked_permutation(sr, i, (sr.count() - 1) / 2);
}

inline Bounds bounds(const SweepResult& sr) {
    if (sr.count() == 0 || sr.samples() == 0) throw ParameterError("bounds: empty sweep");
    Bounds b;
    for (std::size_t i = 0; i < sr.samples(); ++i) {
        b.best += sr.correct(i, best_permutation(sr, i));
        b.median += sr.correct(i, median_permutation(sr, i));
        b.worst += sr.correct(i, worst_permutation(sr, i));
    }
    const auto n = static_cast<double>(sr.samples());
    return {b.worst / n, b.median / n, b.best / n};
}

inline double static_accuracy(const SweepResult& sr, std::size_t m) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sr.samples(); ++i) hits += sr.correct(i, m);
    return static_cast<double>(hits) / static_cast<double>(sr.samples());
}

/// hist[u] = number of samples with exactly u distinct predicted classes (hist[0] unused).
inline std::vector<std::size_t> unique_predictions(const SweepResult& sr) {
    std::vector<std::size_t> hist(sr.count() + 1, 0);
    std::vector<std::uint16_t> row;
    for (std::size_t i = 0; i < sr.samples(); ++i) {
        row.assign(sr.pred.begin() + static_cast<std::ptrdiff_t>(sr.cell(i, 0)),
                   sr.pred.begin() + static_cast<std::ptrdiff_t>(sr.cell(i, 0) + sr.count()));
        std::sort(row.begin(), row.end());
        ++hist[static_cast<std::size_t>(std::unique(row.begin(), row.end()) - row.begin())];
    }
    while (hist.size() > 2 && hist.back() == 0) hist.pop_back();
    return hist;
}

struct GreedyStep {
    std::size_t k = 0;
    double accuracy = 0;
    std::size_t perm = 0;
};

/// Best-case accuracy of a permutation subset: a sample counts when the
/// highest-quality member of the subset predicts it correctly.
inline double subset_best_case(const SweepResult& sr, const std::vector<std::size_t>& subset) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sr.samples(); ++i) {
        std::size_t arg = subset.front();
        for (std::size_t m : subset)
            if (sr.q(i, m) > sr.q(i, arg) || (sr.q(i, m) == sr.q(i, arg) && m < arg)) arg = m;
        hits += sr.correct(i, arg);
    }
    return static_cast<double>(hits) / static_cast<double>(sr.samples());
}

/// Greedy accumulation: each step adds the permutation with the largest
/// best-case accuracy of the grown set (ties: larger summed max-quality, then
/// lowest index).
inline std::vector<GreedyStep> greedy_accumulate(const SweepResult& sr, std::size_t k_max) {
    const std::size_t n = sr.samples(), M = sr.count();
    if (k_max > M) throw ParameterError("greedy: k_max " + std::to_string(k_max) + " exceeds M = " + std::to_string(M));
    std::vector<double> cur_q(n, -1.0);
    std::vector<char> cur_ok(n, 0), used(M, 0);
    std::vector<double> qcell(n * M);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < M; ++m) qcell[i * M + m] = sr.q(i, m);
    std::vector<GreedyStep> curve;
    for (std::size_t k = 1; k <= k_max; ++k) {
        std::size_t best_m = M, best_hits = 0;
        double best_sum = -1;
        for (std::size_t m = 0; m < M; ++m) {
            if (used[m]) continue;
            std::size_t hits = 0;
            double sum = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double q = qcell[i * M + m];
                if (q > cur_q[i]) {
                    hits += sr.correct(i, m);
                    sum += q;
                } else {
                    hits += cur_ok[i];
                    sum += cur_q[i];
                }
            }
            if (best_m == M || hits > best_hits || (hits == best_hits && sum > best_sum)) {
                best_m = m, best_hits = hits, best_sum = sum;
            }
        }
        used[best_m] = 1;
        for (std::size_t i = 0; i < n; ++i) {
            const double q = qcell[i * M + best_m];
            if (q > cur_q[i]) cur_q[i] = q, cur_ok[i] = sr.correct(i, best_m);
        }
        curve.push_back({k, static_cast<double>(best_hits) / static_cast<double>(n), best_m});
    }
    return curve;
}

struct BudgetPlan {
    std::size_t attributes = 1;
    std::uint64_t cap = 625;
    std::uint64_t per_attribute = 0;
    std::uint64_t total() const {
        std::uint64_t t = 1;
        for (std::size_t a = 0; a < attributes; ++a) t *= per_attribute;
        return t;
    }
};

/// Largest R with R^attributes <= cap.
inline BudgetPlan budget(std::size_t attributes, std::uint64_t cap = 625) {
    if (attributes < 1 || cap < 1) throw ParameterError("budget: attributes and cap must be positive");
    auto fits = [&](std::uint64_t r) {
        std::uint64_t t = 1;
        for (std::size_t a = 0; a < attributes; ++a) {
            if (t > cap / r) return false;
            t *= r;
        }
        return t <= cap;
    };
    std::uint64_t r = 1;
    while (fits(r + 1)) ++r;
    return {attributes, cap, r};
}

/// Top-R greedy permutations per attribute sweep, crossed so that each combined
/// permutation sets every swept attribute of every slot at once. The first
/// sweep varies slowest; within a sweep, greedy rank order.
inline std::vector<Configuration> combined_space(const std::vector<const SweepResult*>& sweeps, const BudgetPlan& plan,
                                                 const Configuration& base) {
    if (sweeps.empty()) throw ParameterError("combined_space: no sweeps");
    std::vector<std::vector<Configuration>> top;
    for (const SweepResult* s : sweeps) {
        if (plan.per_attribute > s->count())
            throw ParameterError("combined_space: R = " + std::to_string(plan.per_attribute) + " exceeds the " +
                                 std::to_string(s->count()) + " available permutations");
        std::vector<Configuration> pick;
        for (const auto& st : greedy_accumulate(*s, plan.per_attribute)) pick.push_back(s->perms[st.perm]);
        top.push_back(std::move(pick));
    }
    std::vector<Configuration> out;
    std::vector<std::size_t> idx(top.size(), 0);
    while (true) {
        Configuration c = base;
        for (std::size_t a = 0; a < top.size(); ++a) {
            const Configuration& src = top[a][idx[a]];
            for (Attribute attr : sweeps[a]->attributes)
                for (std::size_t s = 0; s < kSlotCount; ++s) {
                    if (!sweeps[a]->slots.active[s]) continue;
                    if (attr == Attribute::stride) c[s].stride = src[s].stride;
                    if (attr == Attribute::dilation) c[s].dilation = src[s].dilation;
                    if (attr == Attribute::size) c[s].kernel_size = src[s].kernel_size;
                }
        }
        out.push_back(c);
        std::size_t k = top.size();
        while (k-- > 0) {
            if (++idx[k] < top[k].size()) break;
            idx[k] = 0;
        }
        if (k == static_cast<std::size_t>(-1)) break;
    }
    return out;
}

struct Marginal {
    std::size_t slot = 0;
    Attribute attribute = Attribute::stride;
    std::vector<std::pair<std::string, double>> fractions;  // option -> share, option-set order
};

struct PreferenceReport {
    std::string group;
    std::vector<double> path_fractions;  // per permutation
    std::vector<Marginal> marginals;
};

inline std::string option_text(const SlotSetting& s, Attribute a) {
    switch (a) {
        case Attribute::stride: return s.stride.str();
        case Attribute::dilation: return std::to_string(s.dilation);
        case Attribute::size: return std::to_string(s.kernel_size);
    }
    return "?";
}

inline std::vector<std::string> option_texts(const SlotOptions& o, Attribute a) {
    std::vector<std::string> out;
    if (a == Attribute::stride)
        for (Stride s : o.strides) out.push_back(s.str());
    if (a == Attribute::dilation)
        for (int d : o.dilations) out.push_back(std::to_string(d));
    if (a == Attribute::size)
        for (int k : o.sizes) out.push_back(std::to_string(k));
    return out;
}

/// Preferred permutation per sample is argmax Q_i (lowest index on ties).
/// Marginals tally each active slot's option inside the preferred permutations.
inline PreferenceReport preference_report(const SweepResult& sr, const OptionSets& options, std::string group = "all") {
    PreferenceReport rep;
    rep.group = std::move(group);
    rep.path_fractions.assign(sr.count(), 0.0);
    const auto n = static_cast<double>(sr.samples());
    for (std::size_t i = 0; i < sr.samples(); ++i) rep.path_fractions[best_permutation(sr, i)] += 1.0 / n;
    for (std::size_t s = 0; s < kSlotCount; ++s) {
        if (!sr.slots.active[s]) continue;
        for (Attribute a : kAllAttributes) {
            if (std::find(sr.attributes.begin(), sr.attributes.end(), a) == sr.attributes.end()) continue;
            Marginal mg{s, a, {}};
            for (const auto& t : option_texts(options[s], a)) mg.fractions.push_back({t, 0.0});
            for (std::size_t m = 0; m < sr.count(); ++m) {
                const auto t = option_text(sr.perms[m][s], a);
                for (auto& [name, f] : mg.fractions)
                    if (name == t) f += rep.path_fractions[m];
            }
            rep.marginals.push_back(std::move(mg));
        }
    }
    return rep;
}

/// Per-layer mode: each sweep varies a single slot; its marginal comes from
/// that sweep's preferred permutations.
inline std::vector<Marginal> layerwise_marginals(const std::vector<const SweepResult*>& single_slot_sweeps,
                                                 const OptionSets& options) {
    std::vector<Marginal> out;
    for (const SweepResult* sr : single_slot_sweeps) {
        std::size_t active = 0;
        for (std::size_t s = 0; s < kSlotCount; ++s) active += sr->slots.active[s];
        if (active != 1) throw ParameterError("layerwise_marginals: each sweep must vary exactly one slot");
        for (const auto& m : preference_report(*sr, options).marginals) out.push_back(m);
    }
    return out;
}

/// Mean number of distinct predicted classes per sample.
inline double mean_unique_predictions(const SweepResult& sr) {
    const auto hist = unique_predictions(sr);
    double s = 0;
    for (std::size_t u = 1; u < hist.size(); ++u) s += static_cast<double>(u * hist[u]);
    return s / static_cast<double>(sr.samples());
}

/// Numeric mean of one slot's preferred option (stride 1/2 counts as 0.5).
inline double mean_preferred(const SweepResult& sr, const PreferenceReport& rep, std::size_t slot, Attribute a) {
    double s = 0;
    for (std::size_t m = 0; m < sr.count(); ++m) {
        const auto& c = sr.perms[m][slot];
        const double v = a == Attribute::stride ? c.stride.value() : a == Attribute::dilation ? c.dilation : c.kernel_size;
        s += rep.path_fractions[m] * v;
    }
    return s;
}

/// Average ranks, 1-based; ties share the mean of their positions.
inline std::vector<double> ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
        i = j + 1;
    }
    return r;
}

/// Spearman rank correlation (Pearson on average ranks). 0 when either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ParameterError("spearman: need two equal-length series of length >= 2");
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Persistence and reports

inline nlohmann::json configuration_json(const Configuration& c) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : c) j.push_back({{"stride", s.stride.str()}, {"dilation", s.dilation}, {"size", s.kernel_size}});
    return j;
}

inline Configuration configuration_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != kSlotCount) throw FormatError("bad_header", "configuration needs four slots");
    Configuration c;
    for (std::size_t i = 0; i < kSlotCount; ++i)
        c[i] = {Stride::parse(j[i].at("stride").get<std::string>()), j[i].at("dilation").get<int>(),
                j[i].at("size").get<int>()};
    return c;
}

inline void save_sweep(const SweepResult& sr, const std::string& path) {
    nlohmann::json h;
    h["samples"] = sr.samples();
    h["permutations"] = sr.count();
    h["slots"] = sr.slots.str();
    h["attributes"] = nlohmann::json::array();
    for (Attribute a : sr.attributes) h["attributes"].push_back(to_string(a));
    h["table"] = nlohmann::json::array();
    for (const auto& c : sr.perms) h["table"].push_back(configuration_json(c));
    h["macs"] = sr.macs;
    h["dataset"] = sr.dataset;
    detail::ByteWriter w;
    w.put_bytes("DYNS", 4);
    w.put<std::uint16_t>(1);
    w.put<std::uint16_t>(0);
    const std::string hs = h.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(hs.size()));
    w.put_bytes(hs.data(), hs.size());
    for (int l : sr.labels) w.put<std::uint16_t>(static_cast<std::uint16_t>(l));
    w.put_bytes(sr.pred.data(), sr.pred.size() * sizeof(std::uint16_t));
    w.put_bytes(sr.conf.data(), sr.conf.size() * sizeof(float));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("unwritable", "cannot write '" + path + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
}

inline SweepResult load_sweep(const std::string& path) {
    detail::ByteReader r(detail::read_file(path));
    if (r.get_string(4) != "DYNS") throw FormatError("bad_magic", path + " is not a sweep file");
    if (r.get<std::uint16_t>() != 1) throw FormatError("bad_version", "unsupported sweep file version");
    r.get<std::uint16_t>();
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(r.get_string(r.get<std::uint32_t>()));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("bad_header", e.what());
    }
    SweepResult sr;
    const std::size_t n = h.at("samples"), M = h.at("permutations");
    sr.slots = SlotSet::parse(h.at("slots").get<std::string>());
    for (const auto& a : h.at("attributes")) sr.attributes.push_back(parse_attribute(a.get<std::string>()));
    for (const auto& c : h.at("table")) sr.perms.push_back(configuration_from_json(c));
    sr.macs = h.at("macs").get<std::vector<std::uint64_t>>();
    sr.dataset = h.value("dataset", nlohmann::json::object());
    if (sr.perms.size() != M || sr.macs.size() != M) throw FormatError("bad_header", "permutation table size mismatch");
    for (std::size_t i = 0; i < n; ++i) sr.labels.push_back(r.get<std::uint16_t>());
    sr.pred.resize(n * M);
    sr.conf.resize(n * M);
    r.get_bytes(sr.pred.data(), sr.pred.size() * sizeof(std::uint16_t));
    r.get_bytes(sr.conf.data(), sr.conf.size() * sizeof(float));
    if (!r.at_end()) throw FormatError("trailing_bytes", "unexpected data after sweep body");
    return sr;
}

inline nlohmann::json bounds_json(const SweepResult& sr) {
    const Bounds b = bounds(sr);
    double best_static = 0, worst_static = 1;
    std::size_t best_m = 0;
    for (std::size_t m = 0; m < sr.count(); ++m) {
        const double a = static_accuracy(sr, m);
        if (a > best_static) best_static = a, best_m = m;
        worst_static = std::min(worst_static, a);
    }
    return {{"permutations", sr.count()},    {"samples", sr.samples()},
            {"best", b.best},                {"median", b.median},
            {"worst", b.worst},              {"best_single_permutation", best_m},
            {"best_single_accuracy", best_static}, {"worst_single_accuracy", worst_static}};
}

inline std::string greedy_csv(const SweepResult& sr, const std::vector<GreedyStep>& curve) {
    std::string s = "k,best_case_accuracy,permutation_index,permutation\n";
    for (const auto& st : curve)
        s += std::to_string(st.k) + "," + std::to_string(st.accuracy) + "," + std::to_string(st.perm) + ",\"" +
             sr.label(st.perm) + "\"\n";
    return s;
}

inline std::string unique_csv(const std::vector<std::size_t>& hist) {
    std::string s = "unique_predictions,samples\n";
    for (std::size_t u = 1; u < hist.size(); ++u) s += std::to_string(u) + "," + std::to_string(hist[u]) + "\n";
    return s;
}

inline std::string marginals_csv(const std::vector<PreferenceReport>& reports) {
    std::string s = "group,slot,attribute,option,fraction\n";
    for (const auto& r : reports)
        for (const auto& m : r.marginals)
            for (const auto& [opt, f] : m.fractions)
                s += r.group + "," + kSlotNames[m.slot] + "," + to_string(m.attribute) + "," + opt + "," +
                     std::to_string(f) + "\n";
    return s;
}

inline nlohmann::json paths_json(const SweepResult& sr, const PreferenceReport& rep) {
    nlohmann::json j;
    j["group"] = rep.group;
    j["paths"] = nlohmann::json::array();
    for (std::size_t m = 0; m < sr.count(); ++m)
        if (rep.path_fractions[m] > 0)
            j["paths"].push_back({{"index", m}, {"permutation", sr.label(m)}, {"fraction", rep.path_fractions[m]}});
    return j;
}

}  // namespace dynaconv
