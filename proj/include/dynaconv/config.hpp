#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaconv/data.hpp"
#include "dynaconv/efficiency.hpp"
#include "dynaconv/model.hpp"
#include "dynaconv/oracle.hpp"
#include "dynaconv/rof.hpp"

namespace dynaconv {

inline constexpr const char* kVersion = "0.1.0";

struct Violation {
    std::string path;  // JSON pointer
    std::string message;
};

/// Raised when a run configuration fails schema validation; carries every violation.
class SchemaError : public Error {
public:
    explicit SchemaError(std::vector<Violation> v) : Error(summary(v)), violations_(std::move(v)) {}
    const std::vector<Violation>& violations() const noexcept { return violations_; }

private:
    static std::string summary(const std::vector<Violation>& v) {
        std::string s = std::to_string(v.size()) + " config violation(s)";
        for (const auto& x : v) s += "\n  " + (x.path.empty() ? "/" : x.path) + ": " + x.message;
        return s;
    }
    std::vector<Violation> violations_;
};

struct DataConfig {
    enum class Source { synthetic, cifar10, idx, dataset };
    Source source = Source::synthetic;
    std::string dir;
    std::string train_images, train_labels, eval_images, eval_labels;
    std::string train_path, eval_path;
    SyntheticSpec synthetic_train, synthetic_eval;
    std::uint64_t synthetic_seed = 0;
    std::size_t train_limit = 0, eval_limit = 0;  // 0 keeps every sample
    std::vector<double> scale_factors{0.25, 0.5, 1.0, 2.0, 4.0};
    std::size_t context_reference = 40;
    std::vector<std::size_t> context_crops{20, 24, 28, 32, 36, 40};
};

struct SweepConfig {
    std::vector<Attribute> attributes;
    SlotSet slots;
    double guard = 16.0;
    std::size_t batch = 64;
    std::uint64_t budget_cap = 625;
    std::vector<Attribute> combined_attributes{Attribute::stride, Attribute::dilation, Attribute::size};
    bool layerwise = false;
    std::size_t greedy_k = 0;  // 0 runs to every permutation
    std::string input;         // existing sweep file
    bool resume = false;       // reuse sweep files already in the output directory
    std::vector<std::string> references{"default", "best-static"};
};

struct OutputConfig {
    std::string dir;
    bool csv = true;
    bool json = true;
};

struct RunConfig {
    nlohmann::json doc;
    ModelSpec spec;
    std::string weights;
    std::uint64_t init_seed = 0;
    DataConfig data;
    SweepConfig sweep;
    TrainConfig train;
    OutputConfig output;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 defers to DYNACONV_THREADS

    std::string hash() const;
};

/// FNV-1a over the canonical (sorted-key) dump.
inline std::string config_hash(const nlohmann::json& doc) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : doc.dump()) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string RunConfig::hash() const { return config_hash(doc); }

/// Applies "a.b.c=value". The value is parsed as JSON when possible, else kept as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json* cur = &doc;
    std::stringstream ss(key);
    std::string seg;
    std::vector<std::string> segs;
    while (std::getline(ss, seg, '.')) {
        if (seg.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
        segs.push_back(seg);
    }
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const bool last = i + 1 == segs.size();
        if (cur->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(segs[i]);
            } catch (const std::exception&) {
                throw ConfigError("override key '" + key + "': '" + segs[i] + "' indexes an array");
            }
            if (idx >= cur->size()) throw ConfigError("override key '" + key + "': index out of range");
            cur = &(*cur)[idx];
        } else {
            if (cur->is_null()) *cur = nlohmann::json::object();
            if (!cur->is_object()) throw ConfigError("override key '" + key + "': '" + segs[i] + "' is not inside an object");
            cur = &(*cur)[segs[i]];
        }
        if (last) *cur = value;
    }
}

inline nlohmann::json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing_file", "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    auto doc = nlohmann::json::parse(ss.str(), nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
    return doc;
}

namespace detail {

class Checker {
public:
    std::vector<Violation> out;

    void fail(const std::string& path, const std::string& msg) { out.push_back({path, msg}); }

    /// Reports keys outside `allowed`.
    void known(const nlohmann::json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
        for (const auto& [k, v] : obj.items()) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || k == a;
            if (!ok) fail(path + "/" + k, "unknown key");
        }
    }

    const nlohmann::json* object(const nlohmann::json& parent, const std::string& key, const std::string& path,
                                 bool required, const char* what = "missing required key") {
        if (!parent.contains(key)) {
            if (required) fail(path + "/" + key, what);
            return nullptr;
        }
        const auto& v = parent[key];
        if (!v.is_object()) {
            fail(path + "/" + key, "must be an object");
            return nullptr;
        }
        return &v;
    }

    template <class T>
    bool get(const nlohmann::json& obj, const std::string& key, const std::string& path, T& dst, bool required) {
        const std::string p = path + "/" + key;
        if (!obj.contains(key)) {
            if (required) fail(p, "missing required key");
            return false;
        }
        const auto& v = obj[key];
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) return fail(p, "must be a boolean"), false;
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) return fail(p, "must be a string"), false;
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) return fail(p, "must be a number"), false;
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || v.get<long long>() < 0) return fail(p, "must be a non-negative integer"), false;
        } else {
            if (!v.is_number_integer()) return fail(p, "must be an integer"), false;
        }
        dst = v.get<T>();
        return true;
    }

    template <class T>
    bool positive(const nlohmann::json& obj, const std::string& key, const std::string& path, T& dst, bool required) {
        if (!get(obj, key, path, dst, required)) return false;
        if (dst < 1) return fail(path + "/" + key, "must be positive"), false;
        return true;
    }

    bool string_list(const nlohmann::json& obj, const std::string& key, const std::string& path,
                     std::vector<std::string>& dst, bool required) {
        const std::string p = path + "/" + key;
        if (!obj.contains(key)) {
            if (required) fail(p, "missing required key");
            return false;
        }
        const auto& v = obj[key];
        if (!v.is_array() || v.empty()) return fail(p, "must be a non-empty array"), false;
        dst.clear();
        bool ok = true;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_string()) {
                fail(p + "/" + std::to_string(i), "must be a string");
                ok = false;
            } else {
                dst.push_back(v[i].get<std::string>());
            }
        }
        return ok;
    }

    bool attributes(const nlohmann::json& obj, const std::string& key, const std::string& path,
                    std::vector<Attribute>& dst, bool required) {
        std::vector<std::string> names;
        if (!string_list(obj, key, path, names, required)) return false;
        dst.clear();
        for (std::size_t i = 0; i < names.size(); ++i) {
            const std::string p = path + "/" + key + "/" + std::to_string(i);
            try {
                const Attribute a = parse_attribute(names[i]);
                if (std::find(dst.begin(), dst.end(), a) != dst.end())
                    fail(p, "duplicate attribute '" + names[i] + "'");
                else
                    dst.push_back(a);
            } catch (const Error&) {
                fail(p, "unknown attribute '" + names[i] + "' (stride, dilation, size)");
            }
        }
        std::sort(dst.begin(), dst.end());
        return true;
    }
};

inline std::optional<Stride> stride_value(const nlohmann::json& v) {
    try {
        if (v.is_string()) return Stride::parse(v.get<std::string>());
        if (v.is_number_integer()) return Stride(v.get<int>());
        if (v.is_number_float() && v.get<double>() == 0.5) return Stride::half();
    } catch (const Error&) {
    }
    return std::nullopt;
}

inline void check_model(Checker& ck, const nlohmann::json& m, RunConfig& rc) {
    const std::string P = "/model";
    ck.known(m, P, {"block", "widths", "blocks", "groups", "stem_width", "expansion", "class_count", "input_size",
                    "in_channels", "default_strides", "init_seed", "weights"});
    ModelSpec& s = rc.spec;
    std::string block;
    if (ck.get(m, "block", P, block, true)) {
        try {
            const BlockType b = parse_block_type(block);
            for (auto& st : s.stages) st.block = b;
        } catch (const Error&) {
            ck.fail(P + "/block", "unknown block type '" + block + "' (basic-residual, bottleneck, depthwise-separable)");
        }
    }
    auto four_ints = [&](const char* key, bool required, auto apply) {
        const std::string p = P + "/" + key;
        if (!m.contains(key)) {
            if (required) ck.fail(p, "missing required key");
            return;
        }
        const auto& v = m[key];
        if (!v.is_array() || v.size() != kSlotCount) return ck.fail(p, "must be an array of four integers");
        for (std::size_t i = 0; i < kSlotCount; ++i) {
            if (!v[i].is_number_integer() || v[i].get<long long>() < 1)
                ck.fail(p + "/" + std::to_string(i), "must be a positive integer");
            else
                apply(i, v[i].get<int>());
        }
    };
    four_ints("widths", true, [&](std::size_t i, int x) { s.stages[i].width = x; });
    four_ints("blocks", false, [&](std::size_t i, int x) { s.stages[i].blocks = x; });
    four_ints("groups", false, [&](std::size_t i, int x) { s.stages[i].groups = x; });
    ck.positive(m, "stem_width", P, s.stem_width, true);
    ck.positive(m, "class_count", P, s.class_count, true);
    ck.positive(m, "expansion", P, s.expansion, false);
    ck.positive(m, "input_size", P, s.input_size, false);
    ck.positive(m, "in_channels", P, s.in_channels, false);
    if (m.contains("default_strides")) {
        const auto& v = m["default_strides"];
        if (!v.is_array() || v.size() != kSlotCount) {
            ck.fail(P + "/default_strides", "must be an array of four strides");
        } else {
            for (std::size_t i = 0; i < kSlotCount; ++i) {
                if (auto st = stride_value(v[i]))
                    s.default_strides[i] = *st;
                else
                    ck.fail(P + "/default_strides/" + std::to_string(i), "not a stride");
            }
        }
    }
    rc.init_seed = rc.seed;
    ck.get(m, "init_seed", P, rc.init_seed, false);
    ck.get(m, "weights", P, rc.weights, false);
}

inline void check_options(Checker& ck, const nlohmann::json& o, RunConfig& rc) {
    const std::string P = "/options";
    if (o.contains("preset")) {
        ck.known(o, P, {"preset"});
        std::string preset;
        if (!ck.get(o, "preset", P, preset, true)) return;
        if (preset == "default")
            rc.spec.options = default_option_sets();
        else if (preset == "efficiency")
            rc.spec.options = efficiency_option_sets();
        else
            ck.fail(P + "/preset", "unknown preset '" + preset + "' (default, efficiency)");
        return;
    }
    ck.known(o, P, {"A", "B", "C", "D"});
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        const std::string name(1, kSlotNames[i]);
        const std::string sp = P + "/" + name;
        const nlohmann::json* slot = ck.object(o, name, P, true, "missing option set for slot");
        if (!slot) continue;
        ck.known(*slot, sp, {"stride", "dilation", "size"});
        SlotOptions& so = rc.spec.options[i];
        so = {};
        for (const char* key : {"stride", "dilation", "size"}) {
            const std::string kp = sp + "/" + key;
            if (!slot->contains(key)) {
                ck.fail(kp, "missing required key");
                continue;
            }
            const auto& arr = (*slot)[key];
            if (!arr.is_array() || arr.empty()) {
                ck.fail(kp, "must be a non-empty array");
                continue;
            }
            for (std::size_t j = 0; j < arr.size(); ++j) {
                const std::string ip = kp + "/" + std::to_string(j);
                if (std::string(key) == "stride") {
                    auto st = stride_value(arr[j]);
                    if (!st || !(*st == Stride::half() || (!st->fractional() && st->step() >= 1 && st->step() <= 4))) {
                        ck.fail(ip, "stride must be one of 1/2, 1, 2, 3, 4");
                    } else if (st->fractional() && i < 2) {
                        ck.fail(ip, "option-not-allowed: stride 1/2 (upsampling) is not allowed in slot " + name);
                    } else if (std::find(so.strides.begin(), so.strides.end(), *st) != so.strides.end()) {
                        ck.fail(ip, "duplicate option");
                    } else {
                        so.strides.push_back(*st);
                    }
                    continue;
                }
                if (!arr[j].is_number_integer()) {
                    ck.fail(ip, "must be an integer");
                    continue;
                }
                const int x = arr[j].get<int>();
                auto& dst = std::string(key) == "dilation" ? so.dilations : so.sizes;
                if (std::string(key) == "dilation" && (x < 1 || x > 5))
                    ck.fail(ip, "dilation must lie in 1..5");
                else if (std::string(key) == "size" && (x < 1 || x > 9 || x % 2 == 0))
                    ck.fail(ip, "size must be one of 1, 3, 5, 7, 9");
                else if (std::find(dst.begin(), dst.end(), x) != dst.end())
                    ck.fail(ip, "duplicate option");
                else
                    dst.push_back(x);
            }
        }
    }
}

inline void check_data(Checker& ck, const nlohmann::json& d, RunConfig& rc) {
    const std::string P = "/data";
    ck.known(d, P, {"source", "dir", "train_images", "train_labels", "eval_images", "eval_labels", "train_path",
                    "eval_path", "synthetic", "train_limit", "eval_limit", "probes"});
    DataConfig& dc = rc.data;
    std::string source;
    if (ck.get(d, "source", P, source, true)) {
        if (source == "synthetic") {
            dc.source = DataConfig::Source::synthetic;
            if (const auto* s = ck.object(d, "synthetic", P, true)) {
                const std::string sp = P + "/synthetic";
                ck.known(*s, sp, {"train", "eval", "class_count", "scale_min", "scale_max", "canvas", "seed"});
                SyntheticSpec base;
                ck.positive(*s, "class_count", sp, base.class_count, false);
                if (base.class_count > static_cast<int>(kShapeNames.size()))
                    ck.fail(sp + "/class_count", "at most " + std::to_string(kShapeNames.size()) + " shape classes");
                ck.positive(*s, "scale_min", sp, base.scale_min, false);
                ck.positive(*s, "scale_max", sp, base.scale_max, false);
                ck.positive(*s, "canvas", sp, base.canvas, false);
                if (base.scale_min > base.scale_max) ck.fail(sp, "scale_min exceeds scale_max");
                if (static_cast<std::size_t>(base.scale_max) > base.canvas) ck.fail(sp + "/scale_max", "exceeds the canvas");
                dc.synthetic_train = dc.synthetic_eval = base;
                ck.positive(*s, "train", sp, dc.synthetic_train.n, true);
                ck.positive(*s, "eval", sp, dc.synthetic_eval.n, true);
                dc.synthetic_seed = rc.seed;
                ck.get(*s, "seed", sp, dc.synthetic_seed, false);
            }
        } else if (source == "cifar10") {
            dc.source = DataConfig::Source::cifar10;
            ck.get(d, "dir", P, dc.dir, false);
        } else if (source == "idx") {
            dc.source = DataConfig::Source::idx;
            ck.get(d, "train_images", P, dc.train_images, true);
            ck.get(d, "train_labels", P, dc.train_labels, true);
            ck.get(d, "eval_images", P, dc.eval_images, true);
            ck.get(d, "eval_labels", P, dc.eval_labels, true);
        } else if (source == "dataset") {
            dc.source = DataConfig::Source::dataset;
            ck.get(d, "train_path", P, dc.train_path, false);
            ck.get(d, "eval_path", P, dc.eval_path, true);
        } else {
            ck.fail(P + "/source", "unknown source '" + source + "' (synthetic, cifar10, idx, dataset)");
        }
    }
    ck.get(d, "train_limit", P, dc.train_limit, false);
    ck.get(d, "eval_limit", P, dc.eval_limit, false);
    if (const auto* pr = ck.object(d, "probes", P, false)) {
        const std::string pp = P + "/probes";
        ck.known(*pr, pp, {"scale", "context"});
        if (pr->contains("scale")) {
            const auto& v = (*pr)["scale"];
            if (!v.is_array() || v.empty()) {
                ck.fail(pp + "/scale", "must be a non-empty array of factors");
            } else {
                dc.scale_factors.clear();
                for (std::size_t i = 0; i < v.size(); ++i) {
                    const std::string ip = pp + "/scale/" + std::to_string(i);
                    if (!v[i].is_number()) {
                        ck.fail(ip, "must be a number");
                        continue;
                    }
                    try {
                        ProbeTransform::scale(v[i].get<double>()).validate();
                        dc.scale_factors.push_back(v[i].get<double>());
                    } catch (const Error& e) {
                        ck.fail(ip, e.what());
                    }
                }
            }
        }
        if (const auto* c = ck.object(*pr, "context", pp, false)) {
            const std::string cp = pp + "/context";
            ck.known(*c, cp, {"reference", "crops"});
            ck.positive(*c, "reference", cp, dc.context_reference, false);
            if (c->contains("crops")) {
                const auto& v = (*c)["crops"];
                if (!v.is_array() || v.empty()) {
                    ck.fail(cp + "/crops", "must be a non-empty array of crop sizes");
                } else {
                    dc.context_crops.clear();
                    for (std::size_t i = 0; i < v.size(); ++i) {
                        const std::string ip = cp + "/crops/" + std::to_string(i);
                        if (!v[i].is_number_integer() || v[i].get<long long>() < 1) {
                            ck.fail(ip, "must be a positive integer");
                            continue;
                        }
                        const auto crop = v[i].get<std::size_t>();
                        if (crop == 0 || crop > dc.context_reference)
                            ck.fail(ip, "crop must lie within the reference extent " +
                                            std::to_string(dc.context_reference));
                        else
                            dc.context_crops.push_back(crop);
                    }
                }
            }
        }
    }
}

inline void check_sweep(Checker& ck, const nlohmann::json& s, RunConfig& rc) {
    const std::string P = "/sweep";
    ck.known(s, P, {"attributes", "slots", "guard", "batch", "budget_cap", "combined_attributes", "preferences",
                    "greedy_k", "input", "resume", "references"});
    SweepConfig& sc = rc.sweep;
    ck.attributes(s, "attributes", P, sc.attributes, true);
    std::string slots;
    if (ck.get(s, "slots", P, slots, true)) {
        try {
            sc.slots = SlotSet::parse(slots);
        } catch (const Error&) {
            ck.fail(P + "/slots", "must be a non-empty subset of ABCD");
        }
    }
    ck.get(s, "guard", P, sc.guard, true);
    ck.positive(s, "batch", P, sc.batch, false);
    ck.positive(s, "budget_cap", P, sc.budget_cap, false);
    ck.attributes(s, "combined_attributes", P, sc.combined_attributes, false);
    std::string pref = "global";
    if (ck.get(s, "preferences", P, pref, false) && pref != "global" && pref != "layerwise")
        ck.fail(P + "/preferences", "must be 'global' or 'layerwise'");
    sc.layerwise = pref == "layerwise";
    ck.get(s, "greedy_k", P, sc.greedy_k, false);
    ck.get(s, "input", P, sc.input, false);
    ck.get(s, "resume", P, sc.resume, false);
    if (ck.string_list(s, "references", P, sc.references, false))
        for (std::size_t i = 0; i < sc.references.size(); ++i) {
            const auto& r = sc.references[i];
            if (r != "default" && r != "best-static" && r != "best-case")
                ck.fail(P + "/references/" + std::to_string(i), "unknown reference '" + r +
                                                                     "' (default, best-static, best-case)");
        }
}

inline void check_train(Checker& ck, const nlohmann::json& t, RunConfig& rc) {
    const std::string P = "/train";
    ck.known(t, P, {"epochs", "batch", "lr", "lr_decay", "decay_epoch", "momentum", "weight_decay", "freeze_bn",
                    "checkpoint_every"});
    TrainConfig& tc = rc.train;
    ck.get(t, "epochs", P, tc.epochs, true);
    ck.get(t, "batch", P, tc.batch, true);
    ck.get(t, "lr", P, tc.lr, true);
    ck.get(t, "lr_decay", P, tc.lr_decay, false);
    ck.get(t, "decay_epoch", P, tc.decay_epoch, false);
    ck.get(t, "momentum", P, tc.momentum, false);
    ck.get(t, "weight_decay", P, tc.weight_decay, false);
    ck.get(t, "freeze_bn", P, tc.freeze_bn, false);
    ck.get(t, "checkpoint_every", P, tc.checkpoint_every, false);
    tc.seed = rc.seed;
    try {
        tc.validate();
    } catch (const Error& e) {
        ck.fail(P, e.what());
    }
}

inline void check_output(Checker& ck, const nlohmann::json& o, RunConfig& rc) {
    const std::string P = "/output";
    ck.known(o, P, {"dir", "formats"});
    ck.get(o, "dir", P, rc.output.dir, true);
    std::vector<std::string> formats;
    if (ck.string_list(o, "formats", P, formats, false)) {
        rc.output.csv = rc.output.json = false;
        for (std::size_t i = 0; i < formats.size(); ++i) {
            if (formats[i] == "csv")
                rc.output.csv = true;
            else if (formats[i] == "json")
                rc.output.json = true;
            else
                ck.fail(P + "/formats/" + std::to_string(i), "unknown format '" + formats[i] + "' (csv, json)");
        }
    }
}

}  // namespace detail

/// Validates the whole document and returns every violation; the parsed config
/// is only meaningful when the list is empty.
inline std::vector<Violation> check_run_config(const nlohmann::json& doc, RunConfig& rc) {
    detail::Checker ck;
    rc = RunConfig{};
    rc.doc = doc;
    if (!doc.is_object()) {
        ck.fail("", "config must be a JSON object");
        return ck.out;
    }
    ck.known(doc, "", {"model", "data", "options", "sweep", "train", "output", "seed", "threads"});
    ck.get(doc, "seed", "", rc.seed, false);
    if (ck.get(doc, "threads", "", rc.threads, false) && rc.threads < 1) ck.fail("/threads", "must be positive");
    const char* missing = "missing required section";
    const auto* model = ck.object(doc, "model", "", true, missing);
    const auto* data = ck.object(doc, "data", "", true, missing);
    const auto* options = ck.object(doc, "options", "", true, missing);
    const auto* sweep = ck.object(doc, "sweep", "", true, missing);
    const auto* train = ck.object(doc, "train", "", true, missing);
    const auto* output = ck.object(doc, "output", "", true, missing);
    if (model) detail::check_model(ck, *model, rc);
    if (options) detail::check_options(ck, *options, rc);
    if (data) detail::check_data(ck, *data, rc);
    if (sweep) detail::check_sweep(ck, *sweep, rc);
    if (train) detail::check_train(ck, *train, rc);
    if (output) detail::check_output(ck, *output, rc);
    if (ck.out.empty()) {
        try {
            rc.spec.validate();
        } catch (const Error& e) {
            ck.fail("/model", e.what());
        }
        if (rc.data.source == DataConfig::Source::synthetic && rc.data.synthetic_train.class_count > rc.spec.class_count)
            ck.fail("/data/synthetic/class_count", "exceeds the model's class_count");
        if (rc.data.source == DataConfig::Source::synthetic &&
            rc.data.synthetic_train.canvas != static_cast<std::size_t>(rc.spec.input_size))
            ck.fail("/data/synthetic/canvas", "must equal the model input_size");
    }
    return ck.out;
}

inline std::vector<Violation> validate_config(const nlohmann::json& doc) {
    RunConfig rc;
    return check_run_config(doc, rc);
}

inline RunConfig parse_run_config(const nlohmann::json& doc) {
    RunConfig rc;
    auto v = check_run_config(doc, rc);
    if (!v.empty()) throw SchemaError(std::move(v));
    return rc;
}

}  // namespace dynaconv
