#include <gtest/gtest.h>

#include <random>

#include "dynaconv/efficiency.hpp"

using namespace dynaconv;

namespace {

Model<float> efficiency_model(std::array<int, 4> widths = {8, 16, 32, 64}) {
    auto spec = ModelSpec::mini_resnet(widths, 10, 8);
    spec.options = efficiency_option_sets();
    return Model<float>::build(spec, 1);
}

std::vector<Configuration> efficiency_perms(const ModelSpec& spec) {
    EnumerateOptions o;
    o.attributes = {Attribute::stride, Attribute::size};
    o.guard_area_factor = 0;
    return enumerate_permutations(spec, o);
}

SweepResult toy(const std::vector<int>& labels, const std::vector<std::vector<int>>& pred,
                const std::vector<std::vector<float>>& conf) {
    SweepResult sr;
    const std::size_t M = pred.front().size();
    sr.perms.assign(M, ModelSpec{}.default_configuration());
    sr.attributes = {Attribute::stride};
    sr.slots = SlotSet::parse("D");
    sr.labels = labels;
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t m = 0; m < M; ++m) {
            sr.pred.push_back(static_cast<std::uint16_t>(pred[i][m]));
            sr.conf.push_back(conf[i][m]);
        }
    sr.macs.assign(M, 0);
    return sr;
}

}  // namespace

TEST(CostTable, RaisingOneStrideNeverIncreasesMacs) {
    const auto model = efficiency_model();
    const auto perms = efficiency_perms(model.spec());
    const auto costs = cost_table(model, perms, 32, 32);
    std::map<std::string, std::uint64_t> by_config;
    for (std::size_t m = 0; m < perms.size(); ++m) by_config[configuration_string(perms[m])] = costs[m];
    std::size_t checked = 0;
    for (const auto& c : perms)
        for (std::size_t s = 0; s < kSlotCount; ++s) {
            if (c[s].stride.step() == 4) continue;
            Configuration up = c;
            up[s].stride = Stride(c[s].stride.step() + 1);
            EXPECT_LE(by_config.at(configuration_string(up)), by_config.at(configuration_string(c)));
            ++checked;
        }
    EXPECT_GT(checked, 1000u);
}

TEST(CostTable, MaximalStrideUnitSizeIsGlobalMinimum) {
    const auto model = efficiency_model();
    const auto perms = efficiency_perms(model.spec());
    ASSERT_EQ(perms.size(), 4096u);
    const auto costs = cost_table(model, perms, 32, 32);
    const auto lowest = *std::min_element(costs.begin(), costs.end());
    Configuration target;
    for (auto& s : target) s = {4, 1, 1};
    const auto pos = std::find(perms.begin(), perms.end(), target) - perms.begin();
    // ties are expected once the map has collapsed to 1x1
    EXPECT_EQ(costs[static_cast<std::size_t>(pos)], lowest);
}

TEST(CostTable, AnalyticEqualsInstrumentedCount) {
    const auto model = efficiency_model({4, 8, 8, 8});
    std::mt19937 rng(2);
    std::normal_distribution<float> nd;
    Tensor4f x(1, 3, 32, 32);
    for (auto& v : x.values()) v = nd(rng);
    auto perms = efficiency_perms(model.spec());
    std::vector<Configuration> picks{model.spec().default_configuration()};
    for (int k = 0; k < 6; ++k) picks.push_back(perms[rng() % perms.size()]);
    const auto costs = cost_table(model, picks, 32, 32);
    for (std::size_t k = 0; k < picks.size(); ++k)
        EXPECT_EQ(costs[k], model.instrumented_macs(x, picks[k])) << configuration_string(picks[k]);
    Configuration bad = picks[0];
    bad[0].dilation = 2;
    EXPECT_THROW(cost_table(model, {bad}, 32, 32), ConfigError);
}

TEST(EfficiencyOracle, HandBuiltChoices) {
    // costs: m0 = 100, m1 = 40, m2 = 10, m3 = 40
    const std::vector<std::uint64_t> costs{100, 40, 10, 40};
    const auto sr = toy({0, 1, 2},
                        {{0, 0, 1, 0},    // m1 and m3 agree with m0; m1 is the lower index
                         {1, 2, 2, 2},    // nothing cheaper agrees with m0
                         {2, 2, 2, 2}},   // all agree -> globally cheapest
                        {{0.6f, 0.6f, 0.1f, 0.6f}, {0.5f, 0.2f, 0.2f, 0.2f}, {0.7f, 0.7f, 0.7f, 0.7f}});
    const auto r = efficiency_oracle(sr, costs, EfficiencyReference::fixed(0, "m0"));
    EXPECT_EQ(r.choice, (std::vector<std::size_t>{1, 0, 2}));
    EXPECT_DOUBLE_EQ(r.avg_macs, (40 + 100 + 10) / 3.0);
    EXPECT_DOUBLE_EQ(r.accuracy, r.reference_accuracy);
    EXPECT_THROW(efficiency_oracle(sr, costs, EfficiencyReference::fixed(4, "x")), ParameterError);
    EXPECT_THROW(efficiency_oracle(sr, {1, 2}, EfficiencyReference::fixed(0, "x")), ParameterError);
}

TEST(EfficiencyOracle, PreservesPredictionsAndDominatesCostOnRandomSweeps) {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 40, M = 9;
        std::vector<int> labels(n);
        std::vector<std::vector<int>> pred(n, std::vector<int>(M));
        std::vector<std::vector<float>> conf(n, std::vector<float>(M));
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng() % 4);
            for (std::size_t m = 0; m < M; ++m) {
                pred[i][m] = static_cast<int>(rng() % 4);
                conf[i][m] = pred[i][m] == labels[i] ? 0.6f : 0.2f;
            }
        }
        const auto sr = toy(labels, pred, conf);
        std::vector<std::uint64_t> costs(M);
        for (auto& c : costs) c = 1 + rng() % 50;
        for (const auto& ref : {EfficiencyReference::fixed(rng() % M, "fixed"), EfficiencyReference::best_case()}) {
            const auto r = efficiency_oracle(sr, costs, ref);
            EXPECT_EQ(r.accuracy, r.reference_accuracy);
            EXPECT_LE(r.avg_macs, r.reference_avg_macs);
            for (std::size_t i = 0; i < n; ++i) {
                EXPECT_LE(costs[r.choice[i]], costs[r.reference[i]]);
                EXPECT_EQ(sr.pred[sr.cell(i, r.choice[i])], sr.pred[sr.cell(i, r.reference[i])]);
                // brute force: no agreeing permutation is strictly cheaper
                for (std::size_t m = 0; m < M; ++m) {
                    if (sr.pred[sr.cell(i, m)] == sr.pred[sr.cell(i, r.reference[i])]) {
                        EXPECT_GE(costs[m], costs[r.choice[i]]);
                    }
                }
            }
        }
    }
}

TEST(Frontier, PointsAgainstBruteForce) {
    const std::vector<std::uint64_t> costs{3'000'000'000, 1'000'000'000, 500'000'000};
    const auto sr = toy({0, 1}, {{0, 0, 1}, {0, 1, 1}}, {{0.6f, 0.7f, 0.3f}, {0.4f, 0.9f, 0.55f}});
    const auto pts = frontier(sr, costs, {EfficiencyReference::fixed(0, "default")});
    ASSERT_EQ(pts.size(), 3u + 2u);
    EXPECT_DOUBLE_EQ(pts[0].accuracy, 0.5);
    EXPECT_DOUBLE_EQ(pts[1].accuracy, 1.0);
    EXPECT_DOUBLE_EQ(pts[2].avg_gmacs, 0.5);
    // best case: sample 0 -> m1 (1.7), sample 1 -> m1 (1.9)
    EXPECT_EQ(pts[3].label, "best-case");
    EXPECT_DOUBLE_EQ(pts[3].accuracy, 1.0);
    EXPECT_DOUBLE_EQ(pts[3].avg_gmacs, 1.0);
    // efficient default: sample 0 pred 0 -> m1 (1 G); sample 1 pred 0 -> m0 only (3 G)
    EXPECT_DOUBLE_EQ(pts[4].accuracy, 0.5);
    EXPECT_DOUBLE_EQ(pts[4].avg_gmacs, 2.0);
    EXPECT_LE(pts[4].avg_gmacs, pts[0].avg_gmacs);
    const auto csv = frontier_csv(pts);
    EXPECT_EQ(csv.rfind("label,permutation-index,accuracy,avg-GMACs\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
    const auto summary = efficiency_summary(sr, costs, {EfficiencyReference::fixed(0, "default")});
    EXPECT_EQ(summary["cheapest_static"]["index"], 2);
    EXPECT_EQ(summary["references"].size(), 2u);
}
