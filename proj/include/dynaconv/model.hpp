#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaconv/dynconv.hpp"
#include "dynaconv/nn.hpp"
#include "dynaconv/weight_io.hpp"

namespace dynaconv {

inline constexpr std::size_t kSlotCount = 4;
inline constexpr std::array<char, kSlotCount> kSlotNames{'A', 'B', 'C', 'D'};

enum class Attribute { stride, dilation, size };
inline constexpr std::array<Attribute, 3> kAllAttributes{Attribute::stride, Attribute::dilation, Attribute::size};

inline std::string to_string(Attribute a) {
    switch (a) {
        case Attribute::stride: return "stride";
        case Attribute::dilation: return "dilation";
        case Attribute::size: return "size";
    }
    return "?";
}

inline Attribute parse_attribute(const std::string& s) {
    if (s == "stride") return Attribute::stride;
    if (s == "dilation") return Attribute::dilation;
    if (s == "size") return Attribute::size;
    throw ConfigError("unknown attribute '" + s + "'");
}

inline int slot_index(char name) {
    for (std::size_t i = 0; i < kSlotCount; ++i)
        if (kSlotNames[i] == name) return static_cast<int>(i);
    throw ConfigError(std::string("unknown dynamic slot '") + name + "'");
}

/// Attribute values active in one dynamic slot.
struct SlotSetting {
    Stride stride = 1;
    int dilation = 1;
    int kernel_size = 3;
    bool operator==(const SlotSetting&) const = default;
};

/// One setting per dynamic slot A..D.
using Configuration = std::array<SlotSetting, kSlotCount>;

/// Allowed values of each attribute in one slot.
struct SlotOptions {
    std::vector<Stride> strides;
    std::vector<int> dilations;
    std::vector<int> sizes;

    bool allows(const SlotSetting& s) const {
        return std::find(strides.begin(), strides.end(), s.stride) != strides.end() &&
               std::find(dilations.begin(), dilations.end(), s.dilation) != dilations.end() &&
               std::find(sizes.begin(), sizes.end(), s.kernel_size) != sizes.end();
    }
    bool allows_upsampling() const {
        return std::find(strides.begin(), strides.end(), Stride::half()) != strides.end();
    }
    bool operator==(const SlotOptions&) const = default;
};

using OptionSets = std::array<SlotOptions, kSlotCount>;

/// Full attribute universe, without stride 1/2 in the shallow slots A and B.
inline OptionSets default_option_sets() {
    OptionSets o;
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        o[i].strides = i < 2 ? std::vector<Stride>{1, 2, 3, 4} : std::vector<Stride>{Stride::half(), 1, 2, 3, 4};
        o[i].dilations = {1, 2, 3, 4, 5};
        o[i].sizes = {1, 3, 5, 7, 9};
    }
    return o;
}

inline void validate_option_sets(const OptionSets& o) {
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        const std::string slot(1, kSlotNames[i]);
        if (o[i].strides.empty() || o[i].dilations.empty() || o[i].sizes.empty())
            throw ConfigError("slot " + slot + ": empty option set");
        for (Stride s : o[i].strides) {
            if (!(s == Stride::half() || (!s.fractional() && s.step() >= 1 && s.step() <= 4)))
                throw ConfigError("slot " + slot + ": stride " + s.str() + " outside {1/2,1,2,3,4}");
            if (s.fractional() && i < 2)
                throw ConfigError("slot " + slot + ": stride 1/2 (upsampling) is not allowed in slots A and B");
        }
        for (int d : o[i].dilations)
            if (d < 1 || d > 5) throw ConfigError("slot " + slot + ": dilation " + std::to_string(d) + " outside 1..5");
        for (int k : o[i].sizes)
            if (k < 1 || k > 9 || k % 2 == 0)
                throw ConfigError("slot " + slot + ": size " + std::to_string(k) + " outside {1,3,5,7,9}");
    }
}

enum class BlockType { basic, bottleneck, depthwise };

inline std::string to_string(BlockType b) {
    switch (b) {
        case BlockType::basic: return "basic-residual";
        case BlockType::bottleneck: return "bottleneck";
        case BlockType::depthwise: return "depthwise-separable";
    }
    return "?";
}

inline BlockType parse_block_type(const std::string& s) {
    if (s == "basic-residual" || s == "basic") return BlockType::basic;
    if (s == "bottleneck") return BlockType::bottleneck;
    if (s == "depthwise-separable" || s == "depthwise") return BlockType::depthwise;
    throw ConfigError("unknown block type '" + s + "'");
}

struct StageSpec {
    BlockType block = BlockType::basic;
    int blocks = 1;
    int width = 16;
    int groups = 1;  // dynamic-conv cardinality for bottleneck stages
    bool operator==(const StageSpec&) const = default;
};

struct ModelSpec {
    int input_size = 32;
    int in_channels = 3;
    int class_count = 10;
    int stem_width = 16;
    int expansion = 4;  // bottleneck reduction / depthwise expansion ratio
    std::array<StageSpec, kSlotCount> stages{};
    std::array<Stride, kSlotCount> default_strides{1, 2, 2, 2};
    OptionSets options = default_option_sets();

    static ModelSpec mini_resnet(std::array<int, 4> widths = {16, 32, 64, 128}, int classes = 10, int stem = 16) {
        ModelSpec s;
        s.class_count = classes;
        s.stem_width = stem;
        for (std::size_t i = 0; i < kSlotCount; ++i) s.stages[i] = {BlockType::basic, 1, widths[i], 1};
        return s;
    }

    Configuration default_configuration() const {
        Configuration c;
        for (std::size_t i = 0; i < kSlotCount; ++i) c[i].stride = default_strides[i];
        return c;
    }

    void validate() const {
        if (input_size < 1 || in_channels < 1 || class_count < 1 || stem_width < 1 || expansion < 1)
            throw ConfigError("model spec: sizes must be positive");
        validate_option_sets(options);
        for (std::size_t i = 0; i < kSlotCount; ++i) {
            const auto& st = stages[i];
            const std::string slot(1, kSlotNames[i]);
            if (st.blocks < 1 || st.width < 1 || st.groups < 1)
                throw ConfigError("stage " + slot + ": blocks, width and groups must be positive");
            if (st.block == BlockType::bottleneck) {
                const int mid = bottleneck_mid(st);
                if (mid % st.groups != 0)
                    throw ConfigError("stage " + slot + ": bottleneck width " + std::to_string(mid) +
                                      " not divisible by groups " + std::to_string(st.groups));
            } else if (st.groups != 1) {
                throw ConfigError("stage " + slot + ": groups only apply to bottleneck stages");
            }
            SlotSetting def{default_strides[i], 1, 3};
            if (!options[i].allows(def))
                throw ConfigError("slot " + slot + ": default setting (stride " + default_strides[i].str() +
                                  ", dilation 1, size 3) is not in its option set");
        }
    }

    int bottleneck_mid(const StageSpec& st) const { return std::max(1, st.width / expansion); }

    /// Architecture identity (excludes option sets, which do not affect parameters).
    nlohmann::json architecture_json() const {
        nlohmann::json j;
        j["input_size"] = input_size;
        j["in_channels"] = in_channels;
        j["class_count"] = class_count;
        j["stem_width"] = stem_width;
        j["expansion"] = expansion;
        for (const auto& st : stages)
            j["stages"].push_back({{"block", to_string(st.block)}, {"blocks", st.blocks}, {"width", st.width},
                                   {"groups", st.groups}});
        for (Stride s : default_strides) j["default_strides"].push_back(s.str());
        return j;
    }
};


inline nlohmann::json options_to_json(const OptionSets& o) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        nlohmann::json s;
        s["stride"] = nlohmann::json::array();
        for (Stride st : o[i].strides) s["stride"].push_back(st.str());
        s["dilation"] = o[i].dilations;
        s["size"] = o[i].sizes;
        j[std::string(1, kSlotNames[i])] = s;
    }
    return j;
}

inline std::string configuration_string(const Configuration& c) {
    std::string s;
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        if (i) s += ' ';
        s += kSlotNames[i];
        s += ":s" + c[i].stride.str() + ",d" + std::to_string(c[i].dilation) + ",k" + std::to_string(c[i].kernel_size);
    }
    return s;
}

/// Shape-algebra walk of a configuration through the architecture.
struct ShapeTrace {
    Shape4 pre_pool{};            // (1, c, h, w)
    std::size_t max_area = 0;     // largest h*w of any feature map
    std::uint64_t macs = 0;       // convolutions + linear head, one sample
};

struct Normalization {
    std::vector<float> mean;
    std::vector<float> stddev;
    bool operator==(const Normalization&) const = default;
};

namespace detail {

struct ConvLayer {
    std::size_t weight = 0;
    std::size_t gamma = 0, beta = 0, mean = 0, var = 0;
    int groups = 1;
    int size = 3;
    std::size_t out = 0;
};

struct Block {
    BlockType type = BlockType::basic;
    int slot = -1;  // dynamic slot index for the first block of a stage
    std::vector<ConvLayer> convs;
    std::size_t dynamic_conv = 0;  // index into convs
    std::optional<ConvLayer> proj;
};

}  // namespace detail

/// Scale-decreasing CNN: stem, four stages whose first block holds a dynamic
/// 3x3 convolution (slots A..D), global average pool and a linear classifier.
template <class T>
class Model {
public:
    struct Param {
        std::string name;
        Tensor4<T> value;
        std::vector<std::uint32_t> dims;  // logical rank for persistence
        bool trainable = true;
    };

    struct TrainStep {
        T loss = 0;
        std::size_t correct = 0;
        std::vector<Tensor4<T>> grads;  // aligned with params(); empty for buffers
    };

    enum class NormMode { batch_stats, frozen };

    static Model build(const ModelSpec& spec, std::uint64_t seed) {
        spec.validate();
        Model m(spec);
        std::mt19937_64 rng(seed);
        m.layout(&rng);
        return m;
    }

    /// Rebuilds from a weight store; every parameter must be present with matching dims.
    static Model from_store(const ModelSpec& spec, const WeightStore& store) {
        spec.validate();
        const auto arch = store.fingerprint.value("model", nlohmann::json());
        if (arch != spec.architecture_json())
            throw FormatError("fingerprint_mismatch", "weight file was produced for a different architecture");
        Model m(spec);
        m.layout(nullptr);
        for (auto& p : m.params_) {
            const NamedTensor* t = store.find(p.name);
            if (!t) throw FormatError("missing_tensor", "weight file lacks '" + p.name + "'");
            if (t->values.shape() != p.value.shape())
                throw FormatError("dim_mismatch", "tensor '" + p.name + "' has dims " + t->values.shape().str() +
                                                      ", expected " + p.value.shape().str());
            p.value = t->values.template cast<T>();
            p.dims = t->dims;
        }
        if (store.tensors.size() != m.params_.size())
            throw FormatError("extra_tensor", "weight file holds tensors the model does not define");
        if (store.fingerprint.contains("normalization")) {
            m.norm_.mean = store.fingerprint["normalization"].value("mean", std::vector<float>{});
            m.norm_.stddev = store.fingerprint["normalization"].value("std", std::vector<float>{});
        }
        return m;
    }

    const ModelSpec& spec() const noexcept { return spec_; }
    std::vector<Param>& params() noexcept { return params_; }
    const std::vector<Param>& params() const noexcept { return params_; }
    Normalization& normalization() noexcept { return norm_; }
    const Normalization& normalization() const noexcept { return norm_; }

    /// Replaces the option sets used for validation (architecture unchanged).
    void set_options(const OptionSets& o) {
        validate_option_sets(o);
        ModelSpec s = spec_;
        s.options = o;
        s.validate();
        spec_ = s;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.value.size();
        return n;
    }

    nlohmann::json fingerprint() const {
        nlohmann::json j;
        j["model"] = spec_.architecture_json();
        if (!norm_.mean.empty()) j["normalization"] = {{"mean", norm_.mean}, {"std", norm_.stddev}};
        return j;
    }

    WeightStore to_store() const {
        WeightStore s;
        s.fingerprint = fingerprint();
        for (const auto& p : params_) s.tensors.push_back({p.name, p.dims, p.value.template cast<float>()});
        return s;
    }

    /// Throws ConfigError unless every slot setting is in its option set.
    void check(const Configuration& cfg) const {
        for (std::size_t i = 0; i < kSlotCount; ++i)
            if (!spec_.options[i].allows(cfg[i]))
                throw ConfigError(std::string("slot ") + kSlotNames[i] + ": stride " + cfg[i].stride.str() +
                                  ", dilation " + std::to_string(cfg[i].dilation) + ", size " +
                                  std::to_string(cfg[i].kernel_size) + " is not an allowed option");
    }

    /// Inference-mode logits (n, classes).
    Tensor4<T> logits(const Tensor4<T>& x, const Configuration& cfg) const {
        check(cfg);
        Tape<T> tape(false);
        Ctx ctx{tape, false, NormMode::frozen, nullptr, {}};
        bind(ctx, false);
        return tape.value(run(ctx, tape.leaf(x), cfg));
    }

    /// Measured shape of the last feature map before pooling.
    Shape4 pre_pool_shape(const Tensor4<T>& x, const Configuration& cfg) const {
        check(cfg);
        Tape<T> tape(false);
        Ctx ctx{tape, false, NormMode::frozen, nullptr, {}};
        bind(ctx, false);
        run(ctx, tape.leaf(x), cfg);
        return ctx.pre_pool;
    }

    /// Logits through the direct reference kernels; every executed multiply
    /// (padded taps and inserted zeros included) is added to `macs`.
    Tensor4<T> instrumented_logits(const Tensor4<T>& x, const Configuration& cfg, std::uint64_t& macs) const {
        check(cfg);
        Tape<T> tape(false);
        Ctx ctx{tape, false, NormMode::frozen, &macs, {}};
        bind(ctx, false);
        return tape.value(run(ctx, tape.leaf(x), cfg));
    }

    std::uint64_t instrumented_macs(const Tensor4<T>& x, const Configuration& cfg) const {
        std::uint64_t macs = 0;
        instrumented_logits(x, cfg, macs);
        return macs;
    }

    /// Forward + backward on one batch in training mode. Batch-norm running
    /// statistics are updated unless `norm` is frozen.
    TrainStep train_step(const Tensor4<T>& x, std::span<const int> labels, const Configuration& cfg,
                         NormMode norm = NormMode::batch_stats) {
        check(cfg);
        Tape<T> tape(true);
        Ctx ctx{tape, true, norm, nullptr, {}};
        bind(ctx, true);
        Var logits = run(ctx, tape.leaf(x), cfg);
        auto ce = softmax_cross_entropy(tape, logits, labels);
        tape.backward(ce.loss);
        TrainStep out;
        out.loss = tape.value(ce.loss)[0];
        const std::size_t k = ce.probs.cols();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const T* row = ce.probs.data() + i * k;
            if (static_cast<int>(std::max_element(row, row + k) - row) == labels[i]) ++out.correct;
        }
        for (std::size_t i = 0; i < params_.size(); ++i)
            out.grads.push_back(params_[i].trainable ? tape.grad(ctx.vars[i]) : Tensor4<T>());
        return out;
    }

    /// Builds `loss` on an external tape with every trainable parameter as a
    /// gradient-carrying leaf; used for whole-model gradient checks.
    Var record(Tape<T>& tape, Var x, const Configuration& cfg, std::vector<Var>& param_vars, bool training,
               std::span<const Var> overrides = {}) {
        Ctx ctx{tape, training, training ? NormMode::batch_stats : NormMode::frozen, nullptr, {}};
        if (overrides.empty()) {
            bind(ctx, true);
        } else {
            ctx.vars.assign(overrides.begin(), overrides.end());
        }
        param_vars = ctx.vars;
        return run(ctx, x, cfg);
    }

    /// Analytic per-sample shape and MAC walk.
    ShapeTrace trace(const Configuration& cfg, std::size_t h, std::size_t w) const { return trace_shapes(spec_, cfg, h, w); }

    static ShapeTrace trace_shapes(const ModelSpec& spec, const Configuration& cfg, std::size_t h, std::size_t w) {
        ShapeTrace tr;
        Shape4 x{1, static_cast<std::size_t>(spec.in_channels), h, w};
        tr.max_area = h * w;
        auto conv = [&](Shape4 in, std::size_t out, ConvConfig c) {
            tr.macs += count_macs(in, out, c);
            const Extent2 e = output_shape(in.h, in.w, c);
            tr.max_area = std::max(tr.max_area, e.h * e.w);
            return Shape4{1, out, e.h, e.w};
        };
        x = conv(x, spec.stem_width, ConvConfig{});
        for (std::size_t s = 0; s < kSlotCount; ++s) {
            const StageSpec& st = spec.stages[s];
            const auto width = static_cast<std::size_t>(st.width);
            for (int b = 0; b < st.blocks; ++b) {
                ConvConfig dyn{};
                if (b == 0) dyn = ConvConfig{cfg[s].stride, cfg[s].dilation, cfg[s].kernel_size, 1};
                const Shape4 in = x;
                switch (st.block) {
                    case BlockType::basic:
                        x = conv(x, width, dyn);
                        x = conv(x, width, ConvConfig{});
                        break;
                    case BlockType::bottleneck: {
                        const auto mid = static_cast<std::size_t>(spec.bottleneck_mid(st));
                        x = conv(x, mid, ConvConfig{.kernel_size = 1});
                        dyn.groups = st.groups;
                        x = conv(x, mid, dyn);
                        x = conv(x, width, ConvConfig{.kernel_size = 1});
                        break;
                    }
                    case BlockType::depthwise: {
                        const std::size_t hidden = in.c * static_cast<std::size_t>(spec.expansion);
                        x = conv(x, hidden, ConvConfig{.kernel_size = 1});
                        dyn.groups = static_cast<int>(hidden);
                        x = conv(x, hidden, dyn);
                        x = conv(x, width, ConvConfig{.kernel_size = 1});
                        break;
                    }
                }
                if (b == 0) {
                    // Projection skip: 1x1 at matching integer stride, or 1x1 after 2x upsample.
                    ConvConfig pc{.stride = dyn.stride.fractional() ? Stride(1) : dyn.stride, .kernel_size = 1};
                    Shape4 pin = in;
                    if (dyn.stride.fractional()) {
                        pin.h *= 2;
                        pin.w *= 2;
                    }
                    tr.macs += count_macs(pin, width, pc);
                }
            }
        }
        tr.pre_pool = x;
        tr.macs += x.c * static_cast<std::uint64_t>(spec.class_count);
        return tr;
    }

private:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}

    struct Ctx {
        Tape<T>& tape;
        bool training;
        NormMode norm;
        std::uint64_t* macs;
        std::vector<Var> vars;
        Shape4 pre_pool{};
    };

    std::size_t add_param(std::string name, Shape4 shape, std::vector<std::uint32_t> dims, bool trainable, T fill) {
        params_.push_back({std::move(name), Tensor4<T>(shape, fill), std::move(dims), trainable});
        return params_.size() - 1;
    }

    detail::ConvLayer add_conv(const std::string& name, std::size_t in, std::size_t out, int k, int groups,
                               std::mt19937_64* rng) {
        detail::ConvLayer c;
        c.groups = groups;
        c.size = k;
        c.out = out;
        const auto uk = static_cast<std::uint32_t>(k);
        const std::size_t in_g = in / static_cast<std::size_t>(groups);
        c.weight = add_param(name + ".weight", Shape4{out, in_g, uk, uk},
                             {static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in_g), uk, uk}, true, T(0));
        if (rng) {
            std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(in_g * k * k)));
            for (auto& v : params_[c.weight].value.values()) v = static_cast<T>(nd(*rng));
        }
        const Shape4 vec{out, 1, 1, 1};
        const std::vector<std::uint32_t> vd{static_cast<std::uint32_t>(out)};
        c.gamma = add_param(name + ".bn.gamma", vec, vd, true, T(1));
        c.beta = add_param(name + ".bn.beta", vec, vd, true, T(0));
        c.mean = add_param(name + ".bn.running_mean", vec, vd, false, T(0));
        c.var = add_param(name + ".bn.running_var", vec, vd, false, T(1));
        return c;
    }

    void layout(std::mt19937_64* rng) {
        params_.clear();
        blocks_.clear();
        const auto cin = static_cast<std::size_t>(spec_.in_channels);
        auto width = static_cast<std::size_t>(spec_.stem_width);
        stem_ = add_conv("stem.conv", cin, width, 3, 1, rng);
        for (std::size_t s = 0; s < kSlotCount; ++s) {
            const StageSpec& st = spec_.stages[s];
            const auto out = static_cast<std::size_t>(st.width);
            for (int b = 0; b < st.blocks; ++b) {
                const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
                detail::Block blk;
                blk.type = st.block;
                blk.slot = b == 0 ? static_cast<int>(s) : -1;
                switch (st.block) {
                    case BlockType::basic:
                        blk.convs.push_back(add_conv(prefix + ".conv1", width, out, 3, 1, rng));
                        blk.convs.push_back(add_conv(prefix + ".conv2", out, out, 3, 1, rng));
                        blk.dynamic_conv = 0;
                        break;
                    case BlockType::bottleneck: {
                        const auto mid = static_cast<std::size_t>(spec_.bottleneck_mid(st));
                        blk.convs.push_back(add_conv(prefix + ".conv1", width, mid, 1, 1, rng));
                        blk.convs.push_back(add_conv(prefix + ".conv2", mid, mid, 3, st.groups, rng));
                        blk.convs.push_back(add_conv(prefix + ".conv3", mid, out, 1, 1, rng));
                        blk.dynamic_conv = 1;
                        break;
                    }
                    case BlockType::depthwise: {
                        const std::size_t hidden = width * static_cast<std::size_t>(spec_.expansion);
                        blk.convs.push_back(add_conv(prefix + ".conv1", width, hidden, 1, 1, rng));
                        blk.convs.push_back(
                            add_conv(prefix + ".conv2", hidden, hidden, 3, static_cast<int>(hidden), rng));
                        blk.convs.push_back(add_conv(prefix + ".conv3", hidden, out, 1, 1, rng));
                        blk.dynamic_conv = 1;
                        break;
                    }
                }
                if (b == 0) blk.proj = add_conv(prefix + ".proj", width, out, 1, 1, rng);
                blocks_.push_back(std::move(blk));
                width = out;
            }
        }
        const auto classes = static_cast<std::size_t>(spec_.class_count);
        fc_weight_ = add_param("head.fc.weight", Shape4{classes, width, 1, 1},
                               {static_cast<std::uint32_t>(classes), static_cast<std::uint32_t>(width)}, true, T(0));
        if (rng) {
            std::normal_distribution<double> nd(0.0, std::sqrt(1.0 / static_cast<double>(width)));
            for (auto& v : params_[fc_weight_].value.values()) v = static_cast<T>(nd(*rng));
        }
        fc_bias_ = add_param("head.fc.bias", Shape4{classes, 1, 1, 1}, {static_cast<std::uint32_t>(classes)}, true, T(0));
    }

    void bind(Ctx& ctx, bool grads) const {
        ctx.vars.clear();
        for (const auto& p : params_) ctx.vars.push_back(ctx.tape.leaf(p.value, grads && p.trainable));
    }

    Tensor4<T>& buffer(std::size_t i) const { return const_cast<Tensor4<T>&>(params_[i].value); }

    Var conv_bn(Ctx& ctx, const detail::ConvLayer& c, Var x, ConvConfig cfg, bool relu_after,
                bool upsampling_allowed = true) const {
        cfg.groups = c.groups;
        Var y;
        if (ctx.macs) {
            ConvWeights<T> w{ctx.tape.value(ctx.vars[c.weight]), std::nullopt};
            y = ctx.tape.push(instrumented_conv(ctx.tape.value(x), w, cfg, *ctx.macs), {x}, {});
        } else {
            y = dynamic_conv(ctx.tape, x, ctx.vars[c.weight], Var{}, cfg, upsampling_allowed);
        }
        const bool batch = ctx.training && ctx.norm == NormMode::batch_stats;
        y = batch_norm(ctx.tape, y, ctx.vars[c.gamma], ctx.vars[c.beta], buffer(c.mean), buffer(c.var), batch);
        return relu_after ? relu(ctx.tape, y) : y;
    }

    Var run(Ctx& ctx, Var x, const Configuration& cfg) const {
        Var h = conv_bn(ctx, stem_, x, ConvConfig{}, true);
        for (const auto& blk : blocks_) {
            ConvConfig dyn{};
            bool up_ok = true;
            if (blk.slot >= 0) {
                const SlotSetting& s = cfg[static_cast<std::size_t>(blk.slot)];
                dyn = ConvConfig{s.stride, s.dilation, s.kernel_size, 1};
                up_ok = spec_.options[static_cast<std::size_t>(blk.slot)].allows_upsampling();
            }
            Var main = h;
            for (std::size_t i = 0; i < blk.convs.size(); ++i) {
                const bool last = i + 1 == blk.convs.size();
                const ConvConfig c = i == blk.dynamic_conv ? dyn : ConvConfig{.kernel_size = blk.convs[i].size};
                main = conv_bn(ctx, blk.convs[i], main, c, !last, up_ok);
            }
            Var skip = h;
            if (blk.proj) {
                Var src = h;
                ConvConfig pc{.stride = dyn.stride, .kernel_size = 1};
                if (dyn.stride.fractional()) {
                    src = upsample_nearest2x(ctx.tape, h);
                    pc.stride = 1;
                }
                skip = conv_bn(ctx, *blk.proj, src, pc, false);
            }
            h = add(ctx.tape, main, skip);
            if (blk.type != BlockType::depthwise) h = relu(ctx.tape, h);
        }
        ctx.pre_pool = ctx.tape.value(h).shape();
        const Var pooled = global_avg_pool(ctx.tape, h);
        if (ctx.macs) *ctx.macs += static_cast<std::uint64_t>(ctx.pre_pool.n) * ctx.pre_pool.c * spec_.class_count;
        return linear(ctx.tape, pooled, ctx.vars[fc_weight_], ctx.vars[fc_bias_]);
    }

    ModelSpec spec_;
    Normalization norm_;
    std::vector<Param> params_;
    detail::ConvLayer stem_;
    std::vector<detail::Block> blocks_;
    std::size_t fc_weight_ = 0, fc_bias_ = 0;
};

template <class T>
void save_weights(const Model<T>& model, const std::string& path) {
    save_weight_store(model.to_store(), path);
}

/// Loads a weight file and rebuilds the model for `spec`; the stored
/// architecture fingerprint must match.
template <class T = float>
Model<T> load_weights(const std::string& path, const ModelSpec& spec) {
    return Model<T>::from_store(spec, load_weight_store(path));
}

}  // namespace dynaconv
