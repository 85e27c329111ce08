#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaconv/model.hpp"
#include "dynaconv/oracle.hpp"

namespace dynaconv {

/// Strides {1,2,3,4}, sizes {1,3}, dilation 1 in every slot.
inline OptionSets efficiency_option_sets() {
    OptionSets o;
    for (auto& s : o) {
        s.strides = {1, 2, 3, 4};
        s.dilations = {1};
        s.sizes = {1, 3};
    }
    return o;
}

/// Per-sample MACs of each permutation (convolutions + linear head), by shape algebra.
inline std::vector<std::uint64_t> cost_table(const Model<float>& model, const std::vector<Configuration>& perms,
                                             std::size_t h, std::size_t w) {
    std::vector<std::uint64_t> out;
    out.reserve(perms.size());
    for (const auto& c : perms) {
        model.check(c);
        out.push_back(model.trace(c, h, w).macs);
    }
    return out;
}

/// Reference whose predictions must be preserved: a fixed permutation, or the
/// per-sample best-case oracle choice.
struct EfficiencyReference {
    enum class Kind { fixed, best_case };
    Kind kind = Kind::fixed;
    std::size_t perm = 0;
    std::string name;

    static EfficiencyReference fixed(std::size_t m, std::string name) { return {Kind::fixed, m, std::move(name)}; }
    static EfficiencyReference best_case() { return {Kind::best_case, 0, "best-case"}; }
};

struct EfficiencyResult {
    std::vector<std::size_t> choice;     // chosen permutation per sample
    std::vector<std::size_t> reference;  // reference permutation per sample
    double accuracy = 0;
    double reference_accuracy = 0;
    double avg_macs = 0;
    double reference_avg_macs = 0;
};

/// Per sample, the cheapest permutation (ties: lowest index) whose prediction
/// equals the reference prediction.
inline EfficiencyResult efficiency_oracle(const SweepResult& sr, const std::vector<std::uint64_t>& costs,
                                          const EfficiencyReference& ref) {
    if (costs.size() != sr.count()) throw ParameterError("efficiency: cost table does not match the sweep");
    if (ref.kind == EfficiencyReference::Kind::fixed && ref.perm >= sr.count())
        throw ParameterError("efficiency: reference permutation " + std::to_string(ref.perm) + " is not in the sweep");
    EfficiencyResult r;
    std::size_t hits = 0, ref_hits = 0;
    double macs = 0, ref_macs = 0;
    for (std::size_t i = 0; i < sr.samples(); ++i) {
        const std::size_t rm = ref.kind == EfficiencyReference::Kind::fixed ? ref.perm : best_permutation(sr, i);
        const auto target = sr.pred[sr.cell(i, rm)];
        std::size_t pick = rm;
        for (std::size_t m = 0; m < sr.count(); ++m)
            if (sr.pred[sr.cell(i, m)] == target && (costs[m] < costs[pick] || (costs[m] == costs[pick] && m < pick)))
                pick = m;
        r.choice.push_back(pick);
        r.reference.push_back(rm);
        hits += sr.correct(i, pick);
        ref_hits += sr.correct(i, rm);
        macs += static_cast<double>(costs[pick]);
        ref_macs += static_cast<double>(costs[rm]);
    }
    const auto n = static_cast<double>(sr.samples());
    r.accuracy = static_cast<double>(hits) / n;
    r.reference_accuracy = static_cast<double>(ref_hits) / n;
    r.avg_macs = macs / n;
    r.reference_avg_macs = ref_macs / n;
    return r;
}

struct FrontierPoint {
    std::string label;
    long long perm = -1;  // -1 for per-sample oracles
    double accuracy = 0;
    double avg_gmacs = 0;
};

/// Static points for every permutation, the best-case point, and the efficient
/// variant of each reference.
inline std::vector<FrontierPoint> frontier(const SweepResult& sr, const std::vector<std::uint64_t>& costs,
                                           const std::vector<EfficiencyReference>& refs) {
    if (costs.size() != sr.count()) throw ParameterError("frontier: cost table does not match the sweep");
    std::vector<FrontierPoint> pts;
    for (std::size_t m = 0; m < sr.count(); ++m)
        pts.push_back({"static " + sr.label(m), static_cast<long long>(m), static_accuracy(sr, m),
                       static_cast<double>(costs[m]) / 1e9});
    const auto best = efficiency_oracle(sr, costs, EfficiencyReference::best_case());
    pts.push_back({"best-case", -1, best.reference_accuracy, best.reference_avg_macs / 1e9});
    for (const auto& ref : refs) {
        const auto r = efficiency_oracle(sr, costs, ref);
        pts.push_back({"efficient " + ref.name,
                       ref.kind == EfficiencyReference::Kind::fixed ? static_cast<long long>(ref.perm) : -1,
                       r.accuracy, r.avg_macs / 1e9});
    }
    return pts;
}

inline std::string frontier_csv(const std::vector<FrontierPoint>& pts) {
    std::string s = "label,permutation-index,accuracy,avg-GMACs\n";
    char buf[96];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof buf, ",%lld,%.6f,%.9f\n", p.perm, p.accuracy, p.avg_gmacs);
        s += "\"" + p.label + "\"" + buf;
    }
    return s;
}

inline nlohmann::json efficiency_summary(const SweepResult& sr, const std::vector<std::uint64_t>& costs,
                                         const std::vector<EfficiencyReference>& refs) {
    nlohmann::json j;
    std::size_t cheapest = 0, best_static = 0;
    for (std::size_t m = 0; m < sr.count(); ++m) {
        if (costs[m] < costs[cheapest]) cheapest = m;
        if (static_accuracy(sr, m) > static_accuracy(sr, best_static)) best_static = m;
    }
    j["permutations"] = sr.count();
    j["cheapest_static"] = {{"index", cheapest}, {"permutation", sr.label(cheapest)},
                            {"accuracy", static_accuracy(sr, cheapest)}, {"gmacs", costs[cheapest] / 1e9}};
    j["best_static"] = {{"index", best_static}, {"permutation", sr.label(best_static)},
                        {"accuracy", static_accuracy(sr, best_static)}, {"gmacs", costs[best_static] / 1e9}};
    auto add = [&](const EfficiencyReference& ref) {
        const auto r = efficiency_oracle(sr, costs, ref);
        j["references"].push_back({{"reference", ref.name},
                                   {"reference_accuracy", r.reference_accuracy},
                                   {"reference_avg_gmacs", r.reference_avg_macs / 1e9},
                                   {"efficient_accuracy", r.accuracy},
                                   {"efficient_avg_gmacs", r.avg_macs / 1e9},
                                   {"cost_ratio", r.avg_macs > 0 ? r.reference_avg_macs / r.avg_macs : 0.0}});
    };
    add(EfficiencyReference::best_case());
    for (const auto& ref : refs) add(ref);
    return j;
}

}  // namespace dynaconv
