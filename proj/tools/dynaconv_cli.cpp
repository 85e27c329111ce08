#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dynaconv/config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dynaconv;

namespace {

enum ExitCode { kOk = 0, kSchema = 2, kMissing = 3, kRuntime = 4 };

class MissingInput : public Error {
public:
    using Error::Error;
};

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw MissingInput(what + " is not configured");
    if (!fs::exists(path)) throw MissingInput(what + " '" + path + "' does not exist");
}

void log(const std::string& msg) { std::cerr << "[dynaconv] " << msg << "\n"; }

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

class Run {
public:
    Run(std::string command, RunConfig cfg, int threads)
        : command_(std::move(command)), cfg_(std::move(cfg)), out_(cfg_.output.dir), threads_(threads) {
        fs::create_directories(out_);
    }

    const RunConfig& cfg() const { return cfg_; }
    int threads() const { return threads_; }
    std::string path(const std::string& name) const { return (out_ / name).string(); }

    void note(const std::string& name) { artifacts_.push_back(name); }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream f(path(name), std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("unwritable", "cannot write '" + path(name) + "'");
        f << text;
        note(name);
    }
    void write_json(const std::string& name, const json& j) {
        if (cfg_.output.json) write_text(name, j.dump(2) + "\n");
    }
    void write_csv(const std::string& name, const std::string& text) {
        if (cfg_.output.csv) write_text(name, text);
    }

    // Lazily built so that commands fed from serialized sweeps never touch weights.
    Model<float>& model() {
        if (!model_) {
            require_file(cfg_.weights, "weights file (model.weights)");
            model_ = load_weights<float>(cfg_.weights, cfg_.spec);
        }
        return *model_;
    }

    Dataset load_split(bool train) const {
        const auto& d = cfg_.data;
        Dataset ds;
        switch (d.source) {
            case DataConfig::Source::synthetic:
                ds = gen_scale_synthetic(train ? d.synthetic_train : d.synthetic_eval, d.synthetic_seed + (train ? 0 : 1));
                ds.split = train ? "synthetic-train" : "synthetic-eval";
                break;
            case DataConfig::Source::cifar10: {
                std::string dir = d.dir;
                if (dir.empty())
                    if (const char* env = std::getenv("DYNACONV_CIFAR10_DIR")) dir = env;
                if (dir.empty()) throw MissingInput("CIFAR-10 directory is not configured (data.dir or DYNACONV_CIFAR10_DIR)");
                require_file(dir, "CIFAR-10 directory");
                try {
                    ds = load_cifar10(dir, train ? "train" : "test");
                } catch (const FormatError& e) {
                    if (e.kind() == "missing_file") throw MissingInput(e.what());
                    throw;
                }
                break;
            }
            case DataConfig::Source::idx:
                require_file(train ? d.train_images : d.eval_images, "IDX images");
                require_file(train ? d.train_labels : d.eval_labels, "IDX labels");
                ds = train ? load_idx(d.train_images, d.train_labels, cfg_.spec.class_count)
                           : load_idx(d.eval_images, d.eval_labels, cfg_.spec.class_count);
                break;
            case DataConfig::Source::dataset:
                require_file(train ? d.train_path : d.eval_path, train ? "dataset file (data.train_path)"
                                                                        : "dataset file (data.eval_path)");
                ds = load_dataset(train ? d.train_path : d.eval_path);
                break;
        }
        const std::size_t limit = train ? d.train_limit : d.eval_limit;
        if (limit > 0 && limit < ds.size()) {
            std::vector<std::size_t> idx(limit);
            std::iota(idx.begin(), idx.end(), 0);
            ds = subset(ds, idx);
        }
        return ds;
    }

    /// Split standardized with the model's stored constants.
    Dataset prepared(bool train) {
        if (auto& cache = train ? train_ : eval_) return *cache;
        Dataset ds = load_split(train);
        if (!model().normalization().mean.empty()) normalize(ds, model().normalization());
        (train ? train_ : eval_) = ds;
        return ds;
    }

    std::vector<Configuration> permutations(const std::vector<Attribute>& attrs, const SlotSet& slots) const {
        EnumerateOptions eo;
        eo.attributes = attrs;
        eo.slots = slots;
        eo.guard_area_factor = cfg_.sweep.guard;
        eo.input_h = eo.input_w = static_cast<std::size_t>(cfg_.spec.input_size);
        return enumerate_permutations(cfg_.spec, eo);
    }

    /// Runs a sweep into `file`, or reloads it when resuming and it matches.
    SweepResult sweep(const Dataset& ds, const std::vector<Configuration>& perms, const std::vector<Attribute>& attrs,
                      const SlotSet& slots, const std::string& file, double scale = 1.0) {
        const std::string p = path(file);
        if (cfg_.sweep.resume && fs::exists(p)) {
            SweepResult sr = load_sweep(p);
            if (sr.perms != perms || sr.labels != ds.labels)
                throw ConfigError("resume: " + p + " does not match the configured permutations and data");
            log("resumed " + file);
            note(file);
            return sr;
        }
        log("sweep " + file + ": " + std::to_string(perms.size()) + " permutations x " + std::to_string(ds.size()) +
            " samples");
        SweepOptions so;
        so.threads = threads_;
        so.batch = cfg_.sweep.batch;
        so.scale = scale;
        SweepResult sr = comprehensive_sweep(model(), ds, perms, so, attrs, slots);
        save_sweep(sr, p);
        note(file);
        return sr;
    }

    /// The configured sweep: `sweep.input` when given, otherwise computed into sweep.dyns.
    SweepResult main_sweep() {
        if (!cfg_.sweep.input.empty()) {
            require_file(cfg_.sweep.input, "sweep file (sweep.input)");
            return load_sweep(cfg_.sweep.input);
        }
        return sweep(prepared(false), permutations(cfg_.sweep.attributes, cfg_.sweep.slots), cfg_.sweep.attributes,
                     cfg_.sweep.slots, "sweep.dyns");
    }

    void manifest(const json& extra = json::object()) {
        json j;
        j["command"] = command_;
        j["config_hash"] = cfg_.hash();
        j["seed"] = cfg_.seed;
        j["threads"] = threads_;
        j["versions"] = {{"dynaconv", kVersion},
                         {"weight_format", 1},
                         {"sweep_format", 1},
                         {"compiler", __VERSION__},
                         {"cplusplus", __cplusplus}};
        j["config"] = cfg_.doc;
        j["artifacts"] = artifacts_;
        for (const auto& [k, v] : extra.items()) j[k] = v;
        std::ofstream f(path("run.json"), std::ios::trunc);
        f << j.dump(2) << "\n";
    }

private:
    std::string command_;
    RunConfig cfg_;
    fs::path out_;
    int threads_;
    std::vector<std::string> artifacts_;
    std::optional<Model<float>> model_;
    std::optional<Dataset> train_, eval_;
};

std::string static_csv(const SweepResult& sr) {
    std::string s = "permutation_index,permutation,accuracy,macs\n";
    char buf[64];
    for (std::size_t m = 0; m < sr.count(); ++m) {
        std::snprintf(buf, sizeof buf, ",%.6f,%llu\n", static_accuracy(sr, m),
                      static_cast<unsigned long long>(sr.macs[m]));
        s += std::to_string(m) + ",\"" + sr.label(m) + "\"" + buf;
    }
    return s;
}

/// Bounds, static accuracies, unique-prediction histogram, greedy curve, marginals and paths.
void write_analyses(Run& run, const SweepResult& sr, const std::string& prefix = "") {
    const auto& sc = run.cfg().sweep;
    run.write_json(prefix + "bounds.json", bounds_json(sr));
    run.write_csv(prefix + "static.csv", static_csv(sr));
    run.write_csv(prefix + "unique.csv", unique_csv(unique_predictions(sr)));
    const std::size_t k = sc.greedy_k == 0 ? sr.count() : std::min(sc.greedy_k, sr.count());
    run.write_csv(prefix + "greedy.csv", greedy_csv(sr, greedy_accumulate(sr, k)));
    const auto rep = preference_report(sr, run.cfg().spec.options, "global");
    run.write_csv(prefix + "marginals.csv", marginals_csv({rep}));
    run.write_json(prefix + "paths.json", paths_json(sr, rep));
}

std::vector<SlotSet> single_slots(const SlotSet& slots) {
    std::vector<SlotSet> out;
    for (std::size_t s = 0; s < kSlotCount; ++s)
        if (slots.active[s]) {
            SlotSet one;
            one.active[s] = true;
            out.push_back(one);
        }
    return out;
}

void write_layerwise(Run& run, const std::vector<const SweepResult*>& sweeps) {
    PreferenceReport rep;
    rep.group = "layerwise";
    rep.marginals = layerwise_marginals(sweeps, run.cfg().spec.options);
    run.write_csv("marginals_layerwise.csv", marginals_csv({rep}));
}

json bounds_obj(const Bounds& b) { return {{"worst", b.worst}, {"median", b.median}, {"best", b.best}}; }

std::optional<std::size_t> index_of(const SweepResult& sr, const Configuration& c) {
    for (std::size_t m = 0; m < sr.count(); ++m)
        if (sr.perms[m] == c) return m;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_train(Run& run) {
    const auto& rc = run.cfg();
    Dataset train = run.load_split(true), eval = run.load_split(false);
    auto model = Model<float>::build(rc.spec, rc.init_seed);
    const Normalization norm = compute_normalization(train);
    normalize(train, norm);
    normalize(eval, norm);
    model.normalization() = norm;
    TrainConfig tc = rc.train;
    tc.sampling = TrainConfig::Sampling::fixed_default;
    tc.checkpoint_dir = run.path("checkpoints");
    log("train: " + std::to_string(train.size()) + " samples, " + std::to_string(tc.epochs) + " epochs");
    const TrainLog tl = train_static(model, train, tc);
    save_weights(model, run.path("weights.dynw"));
    run.note("weights.dynw");
    if (tc.checkpoint_every > 0)
        for (int e = tc.checkpoint_every; e <= tc.epochs; e += tc.checkpoint_every)
            run.note("checkpoints/checkpoint_epoch" + std::to_string(e) + ".dynw");
    run.write_csv("train_log.csv", tl.csv());
    const double acc = evaluate_accuracy(model, eval, rc.spec.default_configuration(), rc.sweep.batch);
    log("static eval accuracy " + fmt_g(acc));
    run.write_json("train.json", {{"train_samples", train.size()},
                                  {"eval_samples", eval.size()},
                                  {"parameter_count", model.parameter_count()},
                                  {"static_eval_accuracy", acc},
                                  {"epoch_loss", tl.epoch_loss},
                                  {"epoch_train_accuracy", tl.epoch_accuracy}});
}

void cmd_rof(Run& run) {
    const auto& rc = run.cfg();
    const auto perms = run.permutations(rc.sweep.attributes, rc.sweep.slots);
    const Dataset eval = run.prepared(false);
    const SweepResult pre = run.sweep(eval, perms, rc.sweep.attributes, rc.sweep.slots, "sweep_pre.dyns");
    TrainConfig tc = rc.train;
    tc.sampling = TrainConfig::Sampling::uniform_random;
    tc.checkpoint_dir = run.path("checkpoints");
    const Dataset train = run.prepared(true);
    log("rof: " + std::to_string(perms.size()) + " permutations, " + std::to_string(tc.epochs) + " epochs");
    const TrainLog tl = rof_finetune(run.model(), train, tc, perms);
    save_weights(run.model(), run.path("weights_rof.dynw"));
    run.note("weights_rof.dynw");
    run.write_csv("rof_log.csv", tl.csv());
    SweepOptions so;
    so.threads = run.threads();
    so.batch = rc.sweep.batch;
    const SweepResult post = comprehensive_sweep(run.model(), eval, perms, so, rc.sweep.attributes, rc.sweep.slots);
    save_sweep(post, run.path("sweep_post.dyns"));
    run.note("sweep_post.dyns");
    write_analyses(run, pre, "pre_");
    write_analyses(run, post, "post_");
    const auto vr = volatility_report(pre, post);
    json j = vr.json();
    const double u_pre = mean_unique_predictions(pre), u_post = mean_unique_predictions(post);
    j["pre_mean_unique_predictions"] = u_pre;
    j["post_mean_unique_predictions"] = u_post;
    if (auto d = index_of(pre, rc.spec.default_configuration())) {
        j["pre_static_default_accuracy"] = static_accuracy(pre, *d);
        j["post_static_default_accuracy"] = static_accuracy(post, *d);
    }
    j["volatility_decreased"] = vr.post_volatility() < vr.pre_volatility();
    j["median_increased"] = vr.post.median > vr.pre.median;
    j["unique_predictions_decreased"] = u_post < u_pre;
    run.write_json("volatility.json", j);
}

void cmd_sweep(Run& run) {
    const SweepResult sr = run.main_sweep();
    write_analyses(run, sr);
    if (run.cfg().sweep.layerwise) {
        std::vector<SweepResult> per;
        for (const auto& one : single_slots(run.cfg().sweep.slots))
            per.push_back(run.sweep(run.prepared(false), run.permutations(run.cfg().sweep.attributes, one),
                                    run.cfg().sweep.attributes, one, "sweep_slot" + one.str() + ".dyns"));
        std::vector<const SweepResult*> ptrs;
        for (const auto& s : per) ptrs.push_back(&s);
        write_layerwise(run, ptrs);
    }
}

void cmd_greedy(Run& run) {
    const SweepResult sr = run.main_sweep();
    const auto& sc = run.cfg().sweep;
    const std::size_t k = sc.greedy_k == 0 ? sr.count() : std::min(sc.greedy_k, sr.count());
    const auto curve = greedy_accumulate(sr, k);
    run.write_csv("greedy.csv", greedy_csv(sr, curve));
    const Bounds b = bounds(sr);
    run.write_json("greedy.json", {{"permutations", sr.count()},
                                   {"k_max", k},
                                   {"endpoint_accuracy", curve.back().accuracy},
                                   {"best_case_accuracy", b.best},
                                   {"k_for_best_case",
                                    std::find_if(curve.begin(), curve.end(),
                                                 [&](const GreedyStep& s) { return s.accuracy >= b.best; }) -
                                            curve.begin() + 1}});
}

void cmd_combined(Run& run) {
    const auto& sc = run.cfg().sweep;
    const BudgetPlan plan = budget(sc.combined_attributes.size(), sc.budget_cap);
    log("combined: " + std::to_string(sc.combined_attributes.size()) + " attributes, cap " +
        std::to_string(sc.budget_cap) + " -> R = " + std::to_string(plan.per_attribute) + ", total " +
        std::to_string(plan.total()));
    std::vector<SweepResult> per;
    for (Attribute a : sc.combined_attributes)
        per.push_back(run.sweep(run.prepared(false), run.permutations({a}, sc.slots), {a}, sc.slots,
                                "sweep_" + to_string(a) + ".dyns"));
    std::vector<const SweepResult*> ptrs;
    for (const auto& s : per) ptrs.push_back(&s);
    const auto perms = combined_space(ptrs, plan, run.cfg().spec.default_configuration());
    const SweepResult sr =
        run.sweep(run.prepared(false), perms, sc.combined_attributes, sc.slots, "sweep_combined.dyns");
    write_analyses(run, sr, "combined_");
    json j = {{"attributes", json::array()}, {"cap", plan.cap},         {"per_attribute", plan.per_attribute},
              {"total", plan.total()},       {"permutations", sr.count()}, {"combined", bounds_json(sr)}};
    for (std::size_t a = 0; a < per.size(); ++a) {
        j["attributes"].push_back(to_string(sc.combined_attributes[a]));
        j["single"][to_string(sc.combined_attributes[a])] = bounds_json(per[a]);
    }
    run.write_json("budget.json", j);
}

void cmd_probe(Run& run, bool scale) {
    const auto& rc = run.cfg();
    const auto perms = run.permutations(rc.sweep.attributes, rc.sweep.slots);
    const Dataset eval = run.prepared(false);
    std::vector<ProbeTransform> levels;
    std::vector<double> level_values;
    if (scale)
        for (double f : rc.data.scale_factors) levels.push_back(ProbeTransform::scale(f)), level_values.push_back(f);
    else
        for (std::size_t c : rc.data.context_crops)
            levels.push_back(ProbeTransform::context(c, rc.data.context_reference)),
                level_values.push_back(static_cast<double>(c));
    const std::string kind = scale ? "scale" : "context";
    std::vector<PreferenceReport> reports;
    json out = {{"probe", kind}, {"levels", json::array()}};
    // series[slot][attribute] of mean preferred values across levels
    std::map<std::string, std::map<std::string, std::vector<double>>> series;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const auto& t = levels[l];
        const std::string tag = scale ? "x" + fmt_g(t.factor) : "crop" + std::to_string(t.crop);
        const Dataset ds = apply_probe(eval, t);
        const SweepResult sr = run.sweep(ds, perms, rc.sweep.attributes, rc.sweep.slots,
                                         "probe_" + kind + "_" + tag + ".dyns", scale ? t.factor : 1.0);
        reports.push_back(preference_report(sr, rc.spec.options, t.str()));
        json lv = {{"level", level_values[l]}, {"label", t.str()}, {"bounds", bounds_obj(bounds(sr))}};
        for (std::size_t s = 0; s < kSlotCount; ++s) {
            if (!rc.sweep.slots.active[s]) continue;
            for (Attribute a : rc.sweep.attributes) {
                const double v = mean_preferred(sr, reports.back(), s, a);
                lv["mean_preferred"][std::string(1, kSlotNames[s])][to_string(a)] = v;
                series[std::string(1, kSlotNames[s])][to_string(a)].push_back(v);
            }
        }
        out["levels"].push_back(lv);
    }
    if (levels.size() >= 2)
        for (const auto& [slot, attrs] : series)
            for (const auto& [attr, vals] : attrs) out["spearman"][slot][attr] = spearman(level_values, vals);
    run.write_csv("probe_" + kind + "_marginals.csv", marginals_csv(reports));
    run.write_json("probe_" + kind + ".json", out);
}

void cmd_efficiency(Run& run) {
    const SweepResult sr = run.main_sweep();
    std::vector<EfficiencyReference> refs;
    for (const auto& name : run.cfg().sweep.references) {
        if (name == "default") {
            const auto d = index_of(sr, run.cfg().spec.default_configuration());
            if (!d) throw ConfigError("efficiency: the default configuration is not among the swept permutations");
            refs.push_back(EfficiencyReference::fixed(*d, "default"));
        } else if (name == "best-static") {
            std::size_t best = 0;
            for (std::size_t m = 1; m < sr.count(); ++m)
                if (static_accuracy(sr, m) > static_accuracy(sr, best)) best = m;
            refs.push_back(EfficiencyReference::fixed(best, "best-static"));
        } else {
            refs.push_back(EfficiencyReference::best_case());
        }
    }
    const auto& costs = sr.macs;
    run.write_csv("frontier.csv", frontier_csv(frontier(sr, costs, refs)));
    std::vector<EfficiencyReference> fixed_refs;
    for (const auto& r : refs)
        if (r.kind == EfficiencyReference::Kind::fixed) fixed_refs.push_back(r);
    json j = efficiency_summary(sr, costs, fixed_refs);
    bool ok = true;
    for (const auto& ref : refs) {
        const auto r = efficiency_oracle(sr, costs, ref);
        ok = ok && r.accuracy == r.reference_accuracy && r.avg_macs <= r.reference_avg_macs;
    }
    j["accuracy_preserved_and_macs_not_higher"] = ok;
    run.write_json("efficiency.json", j);
}

void cmd_report(Run& run) {
    const auto& sc = run.cfg().sweep;
    if (sc.input.empty()) throw MissingInput("report needs a finished sweep (sweep.input)");
    require_file(sc.input, "sweep file (sweep.input)");
    const SweepResult sr = load_sweep(sc.input);
    write_analyses(run, sr);
    if (sc.layerwise) {
        std::vector<SweepResult> per;
        for (const auto& one : single_slots(sc.slots)) {
            const auto p = (fs::path(sc.input).parent_path() / ("sweep_slot" + one.str() + ".dyns")).string();
            require_file(p, "per-slot sweep");
            per.push_back(load_sweep(p));
        }
        std::vector<const SweepResult*> ptrs;
        for (const auto& s : per) ptrs.push_back(&s);
        write_layerwise(run, ptrs);
    }
}

int report_violations(const std::string& path, const std::vector<Violation>& v) {
    if (v.empty()) {
        std::cout << path << ": ok (0 violations)\n";
        return kOk;
    }
    std::cout << path << ": " << v.size() << " violation(s)\n";
    for (const auto& x : v) std::cout << "  " << (x.path.empty() ? "/" : x.path) << ": " << x.message << "\n";
    return kSchema;
}

struct Flags {
    std::string config;
    std::vector<std::string> sets;
    std::string output;
    long long seed = -1;
    int threads = 0;
};

int dispatch(const std::string& command, const Flags& f) {
    json doc = read_config_file(f.config);
    for (const auto& s : f.sets) apply_override(doc, s);
    if (!f.output.empty()) apply_override(doc, "output.dir=" + json(f.output).dump());
    if (f.seed >= 0) doc["seed"] = static_cast<std::uint64_t>(f.seed);
    if (command == "validate") return report_violations(f.config, validate_config(doc));
    RunConfig rc = parse_run_config(doc);
    if (f.threads < 0) throw ConfigError("--threads must be positive");
    const int threads = f.threads > 0 ? f.threads : resolve_threads(rc.threads);
    pin_blas_single_thread();
    Run run(command, rc, threads);
    if (command == "train") cmd_train(run);
    else if (command == "rof") cmd_rof(run);
    else if (command == "sweep") cmd_sweep(run);
    else if (command == "greedy") cmd_greedy(run);
    else if (command == "combined") cmd_combined(run);
    else if (command == "probe-scale") cmd_probe(run, true);
    else if (command == "probe-context") cmd_probe(run, false);
    else if (command == "efficiency") cmd_efficiency(run);
    else if (command == "report") cmd_report(run);
    run.manifest();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inference-time dynamic convolution: training, oracle sweeps and reports"};
    app.require_subcommand(1);
    Flags f;
    const std::vector<std::pair<const char*, const char*>> commands{
        {"train", "train the model under its default configuration"},
        {"rof", "random option fine-tuning with pre/post sweeps"},
        {"sweep", "comprehensive sweep and oracle analyses"},
        {"greedy", "greedy accumulation curve"},
        {"combined", "budgeted combined-attribute sweep"},
        {"probe-scale", "preference shift under input rescaling"},
        {"probe-context", "preference shift under center crops"},
        {"efficiency", "efficiency oracle and MAC frontier"},
        {"report", "regenerate analyses from a serialized sweep"},
        {"validate", "check a config against the schema"},
    };
    for (const auto& [name, desc] : commands) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", f.config, "run configuration (JSON)")->required();
        sub->add_option("--set", f.sets, "dotted-path override key=value (repeatable)");
        sub->add_option("--output", f.output, "output directory");
        sub->add_option("--seed", f.seed, "global seed");
        sub->add_option("--threads", f.threads, "worker threads");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kSchema;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return dispatch(command, f);
    } catch (const SchemaError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kSchema;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kSchema;
    } catch (const MissingInput& e) {
        std::cerr << "missing input: " << e.what() << "\n";
        return kMissing;
    } catch (const FormatError& e) {
        std::cerr << (e.kind() == "missing_file" ? "missing input: " : "error: ") << e.what() << "\n";
        return e.kind() == "missing_file" ? kMissing : kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}
