#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("dynaconv_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    /// Exit status of the CLI; stdout and stderr go to dir/log.txt.
    int run(const std::string& args) {
        const std::string cmd = std::string(DYNACONV_CLI) + " " + args + " > " + (dir_ / "log.txt").string() + " 2>&1";
        const int st = std::system(cmd.c_str());
        return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    }
    std::string log() const { return slurp(dir_ / "log.txt"); }

    std::string write_config(const json& doc, const std::string& name = "config.json") {
        const auto p = dir_ / name;
        std::ofstream(p) << doc.dump(2);
        return p.string();
    }

    json tiny() const {
        json doc = json::parse(R"({
          "seed": 5,
          "model": {"block": "basic-residual", "widths": [4, 4, 4, 4], "stem_width": 4, "class_count": 4},
          "data": {"source": "synthetic", "synthetic": {"train": 64, "eval": 12, "class_count": 4}},
          "options": {"preset": "default"},
          "sweep": {"attributes": ["stride"], "slots": "CD", "guard": 16, "batch": 8},
          "train": {"epochs": 1, "batch": 16, "lr": 0.05, "decay_epoch": 1}
        })");
        doc["output"] = {{"dir", (dir_ / "out").string()}};
        return doc;
    }

    /// Trains the tiny model once and returns the weights path.
    std::string trained(const json& doc) {
        const auto cfg = write_config(doc, "train.json");
        EXPECT_EQ(run("train --config " + cfg + " --output " + (dir_ / "train").string()), 0) << log();
        return (dir_ / "train" / "weights.dynw").string();
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, ValidateShippedConfigs) {
    for (const auto& e : fs::directory_iterator(std::string(DYNACONV_SOURCE_DIR) + "/configs")) {
        EXPECT_EQ(run("validate --config " + e.path().string()), 0) << log();
        EXPECT_NE(log().find("0 violations"), std::string::npos);
    }
}

TEST_F(Cli, ValidateEmptyDocumentExitsWithSchemaCode) {
    EXPECT_EQ(run("validate --config " + write_config(json::object())), 2);
    for (const char* s : {"/model", "/data", "/options", "/sweep", "/train", "/output"})
        EXPECT_NE(log().find(std::string(s) + ": missing required section"), std::string::npos) << s;
}

TEST_F(Cli, UpsamplingInSlotAIsRejected) {
    auto doc = tiny();
    doc["options"] = json::parse(R"({
      "A": {"stride": ["1/2", "1"], "dilation": [1], "size": [3]},
      "B": {"stride": ["2"], "dilation": [1], "size": [3]},
      "C": {"stride": ["2"], "dilation": [1], "size": [3]},
      "D": {"stride": ["2"], "dilation": [1], "size": [3]}
    })");
    const auto cfg = write_config(doc);
    EXPECT_EQ(run("validate --config " + cfg), 2);
    EXPECT_NE(log().find("/options/A/stride/0: option-not-allowed"), std::string::npos) << log();
    EXPECT_EQ(run("sweep --config " + cfg), 2);
}

TEST_F(Cli, ExitCodesByErrorCategory) {
    const auto cfg = write_config(tiny());
    EXPECT_EQ(run("sweep --config " + (dir_ / "absent.json").string()), 3);
    EXPECT_EQ(run("sweep --config " + cfg), 3) << log();  // no weights configured
    EXPECT_NE(log().find("model.weights"), std::string::npos);
    EXPECT_EQ(run("sweep --config " + cfg + " --set model.weights=" + (dir_ / "none.dynw").string()), 3);
    EXPECT_EQ(run("report --config " + cfg), 3);
    EXPECT_EQ(run("sweep --config " + cfg + " --set sweep.bogus=1"), 2);
    EXPECT_EQ(run("sweep --config " + cfg + " --threads"), 2);
    std::ofstream(dir_ / "garbage.dynw") << "not a weight file";
    EXPECT_EQ(run("sweep --config " + cfg + " --set model.weights=" + (dir_ / "garbage.dynw").string()), 4);
}

TEST_F(Cli, SinglePermutationSweepCollapsesBounds) {
    auto doc = tiny();
    doc["model"]["weights"] = trained(doc);
    doc["options"] = json::parse(R"({
      "A": {"stride": ["1"], "dilation": [1], "size": [3]},
      "B": {"stride": ["2"], "dilation": [1], "size": [3]},
      "C": {"stride": ["2"], "dilation": [1], "size": [3]},
      "D": {"stride": ["2"], "dilation": [1], "size": [3]}
    })");
    ASSERT_EQ(run("sweep --config " + write_config(doc)), 0) << log();
    const auto b = json::parse(slurp(dir_ / "out" / "bounds.json"));
    EXPECT_EQ(b["permutations"], 1);
    EXPECT_EQ(b["worst"], b["median"]);
    EXPECT_EQ(b["median"], b["best"]);
    const auto manifest = json::parse(slurp(dir_ / "out" / "run.json"));
    EXPECT_EQ(manifest["command"], "sweep");
    EXPECT_EQ(manifest["seed"], 5);
    EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
    EXPECT_TRUE(manifest["versions"].contains("dynaconv"));
}

TEST_F(Cli, ReportRegeneratesIdenticalArtifactsAndSweepsAreReproducible) {
    auto doc = tiny();
    doc["model"]["weights"] = trained(doc);
    const auto cfg = write_config(doc);
    ASSERT_EQ(run("sweep --config " + cfg + " --output " + (dir_ / "a").string()), 0) << log();
    ASSERT_EQ(run("sweep --config " + cfg + " --threads 3 --output " + (dir_ / "b").string()), 0) << log();
    ASSERT_EQ(run("report --config " + cfg + " --output " + (dir_ / "r").string() +
                  " --set sweep.input=" + (dir_ / "a" / "sweep.dyns").string()),
              0)
        << log();
    for (const char* f : {"bounds.json", "static.csv", "unique.csv", "greedy.csv", "marginals.csv", "paths.json"}) {
        const auto a = slurp(dir_ / "a" / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, slurp(dir_ / "b" / f)) << f;
        EXPECT_EQ(a, slurp(dir_ / "r" / f)) << f;
    }
    EXPECT_EQ(slurp(dir_ / "a" / "sweep.dyns"), slurp(dir_ / "b" / "sweep.dyns"));
}

TEST_F(Cli, ResumeReusesMatchingSweepAndRejectsStaleOne) {
    auto doc = tiny();
    doc["model"]["weights"] = trained(doc);
    const auto cfg = write_config(doc);
    ASSERT_EQ(run("sweep --config " + cfg), 0) << log();
    ASSERT_EQ(run("sweep --config " + cfg + " --set sweep.resume=true"), 0) << log();
    EXPECT_NE(log().find("resumed sweep.dyns"), std::string::npos);
    EXPECT_EQ(run("sweep --config " + cfg + " --set sweep.resume=true --set sweep.slots=D"), 2);
}

TEST_F(Cli, CombinedBudgetArithmetic) {
    auto doc = tiny();
    doc["model"]["weights"] = trained(doc);
    doc["data"]["synthetic"]["eval"] = 4;
    const auto cfg = write_config(doc);
    ASSERT_EQ(run("combined --config " + cfg), 0) << log();
    auto b = json::parse(slurp(dir_ / "out" / "budget.json"));
    EXPECT_EQ(b["per_attribute"], 8);
    EXPECT_EQ(b["total"], 512);
    EXPECT_EQ(b["permutations"], 512);
    ASSERT_EQ(run("combined --config " + cfg + " --set 'sweep.combined_attributes=[\"stride\",\"size\"]' --output " +
                  (dir_ / "two").string()),
              0)
        << log();
    b = json::parse(slurp(dir_ / "two" / "budget.json"));
    EXPECT_EQ(b["per_attribute"], 25);
    EXPECT_EQ(b["total"], 625);
}

TEST_F(Cli, GreedyThenCombinedFromSerializedSweeps) {
    auto doc = tiny();
    doc["model"]["weights"] = trained(doc);
    doc["data"]["synthetic"]["eval"] = 4;
    const auto cfg = write_config(doc);
    ASSERT_EQ(run("combined --config " + cfg), 0) << log();
    ASSERT_EQ(run("greedy --config " + cfg + " --output " + (dir_ / "g").string() + " --set sweep.input=" +
                  (dir_ / "out" / "sweep_stride.dyns").string()),
              0)
        << log();
    const auto g = json::parse(slurp(dir_ / "g" / "greedy.json"));
    EXPECT_EQ(g["endpoint_accuracy"], g["best_case_accuracy"]);
    ASSERT_EQ(run("combined --config " + cfg + " --set sweep.resume=true"), 0) << log();
    EXPECT_NE(log().find("resumed sweep_combined.dyns"), std::string::npos);
    EXPECT_EQ(json::parse(slurp(dir_ / "out" / "budget.json"))["total"], 512);
}

TEST_F(Cli, EfficiencyAndProbesWriteReports) {
    auto doc = tiny();
    doc["model"]["weights"] = trained(doc);
    doc["data"]["synthetic"]["eval"] = 8;
    doc["options"] = {{"preset", "efficiency"}};
    doc["sweep"]["attributes"] = json::array({"stride", "size"});
    doc["sweep"]["slots"] = "D";
    auto cfg = write_config(doc);
    ASSERT_EQ(run("efficiency --config " + cfg), 0) << log();
    const auto e = json::parse(slurp(dir_ / "out" / "efficiency.json"));
    EXPECT_TRUE(e["accuracy_preserved_and_macs_not_higher"].get<bool>());
    EXPECT_EQ(slurp(dir_ / "out" / "frontier.csv").rfind("label,permutation-index,accuracy,avg-GMACs\n", 0), 0u);

    doc["options"] = {{"preset", "default"}};
    doc["sweep"]["attributes"] = json::array({"stride"});
    cfg = write_config(doc);
    ASSERT_EQ(run("probe-scale --config " + cfg + " --output " + (dir_ / "ps").string()), 0) << log();
    const auto ps = json::parse(slurp(dir_ / "ps" / "probe_scale.json"));
    EXPECT_EQ(ps["levels"].size(), 5u);
    EXPECT_TRUE(ps["spearman"]["D"].contains("stride"));
    ASSERT_EQ(run("probe-context --config " + cfg + " --output " + (dir_ / "pc").string()), 0) << log();
    EXPECT_EQ(json::parse(slurp(dir_ / "pc" / "probe_context.json"))["levels"].size(), 6u);
}

TEST_F(Cli, RofWritesVolatilityAndLogs) {
    auto doc = tiny();
    doc["model"]["weights"] = trained(doc);
    doc["sweep"]["slots"] = "D";
    ASSERT_EQ(run("rof --config " + write_config(doc)), 0) << log();
    const auto v = json::parse(slurp(dir_ / "out" / "volatility.json"));
    for (const char* k : {"pre", "post", "pre_volatility", "post_volatility", "pre_mean_unique_predictions"})
        EXPECT_TRUE(v.contains(k)) << k;
    EXPECT_EQ(slurp(dir_ / "out" / "rof_log.csv").rfind("epoch,batch,loss,lr,permutation_index\n", 0), 0u);
    EXPECT_TRUE(fs::exists(dir_ / "out" / "weights_rof.dynw"));
}
