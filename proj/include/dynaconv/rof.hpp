#pragma once

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dynaconv/data.hpp"
#include "dynaconv/model.hpp"
#include "dynaconv/oracle.hpp"
#include "dynaconv/parallel.hpp"

namespace dynaconv {

struct TrainConfig {
    enum class Sampling { fixed_default, uniform_random };

    int epochs = 15;
    std::size_t batch = 32;
    double lr = 0.01;
    double lr_decay = 0.1;  // multiplier applied at decay_epoch
    int decay_epoch = 10;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    Sampling sampling = Sampling::fixed_default;
    bool freeze_bn = false;
    int checkpoint_every = 0;  // epochs; 0 disables
    std::string checkpoint_dir;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be positive");
        if (batch < 1) throw ConfigError("train: batch must be positive");
        if (!(lr >= 0) || !(lr_decay > 0) || momentum < 0 || weight_decay < 0)
            throw ConfigError("train: rates must be non-negative and decay positive");
        if (decay_epoch < 0 || decay_epoch > epochs) throw ConfigError("train: decay epoch must lie within the run");
        if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be non-negative");
    }

    double lr_at(int epoch) const { return epoch >= decay_epoch ? lr * lr_decay : lr; }
};

/// Momentum SGD with L2 weight decay: v <- mu v + (g + wd w); w <- w - lr v.
template <class T>
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), wd_(weight_decay) {}

    void step(std::vector<typename Model<T>::Param>& params, const std::vector<Tensor4<T>>& grads, double lr) {
        if (velocity_.empty())
            for (const auto& p : params) velocity_.emplace_back(p.trainable ? Tensor4<T>(p.value.shape()) : Tensor4<T>());
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable) continue;
            auto& w = params[i].value;
            auto& v = velocity_[i];
            const auto& g = grads[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                v[k] = static_cast<T>(momentum_ * v[k] + (g[k] + wd_ * w[k]));
                w[k] = static_cast<T>(w[k] - lr * v[k]);
            }
        }
    }

private:
    double momentum_, wd_;
    std::vector<Tensor4<T>> velocity_;
};

struct TrainLogRow {
    int epoch = 0;
    std::size_t batch = 0;
    double loss = 0;
    double lr = 0;
    std::size_t perm = 0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    std::vector<double> epoch_loss;      // mean batch loss per epoch
    std::vector<double> epoch_accuracy;  // running training accuracy per epoch

    std::string csv() const {
        std::string s = "epoch,batch,loss,lr,permutation_index\n";
        char buf[128];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%d,%zu,%.6f,%.6g,%zu\n", r.epoch, r.batch, r.loss, r.lr, r.perm);
            s += buf;
        }
        return s;
    }
};

/// Seeds for the data-order and permutation-sampling streams.
inline std::mt19937_64 data_stream(std::uint64_t seed) {
    std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x0da7au};
    return std::mt19937_64(s);
}

inline std::mt19937_64 permutation_stream(std::uint64_t seed) {
    std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x9e3au};
    return std::mt19937_64(s);
}

/// Draws `count` permutation indices exactly as training does.
inline std::vector<std::size_t> sample_permutations(std::size_t m, std::size_t count, std::uint64_t seed) {
    auto rng = permutation_stream(seed);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::vector<std::size_t> out(count);
    for (auto& v : out) v = pick(rng);
    return out;
}

namespace detail {

inline TrainLog run_training(Model<float>& model, const Dataset& ds, const TrainConfig& cfg,
                             const std::vector<Configuration>& perms) {
    cfg.validate();
    ds.validate();
    if (perms.empty()) throw ConfigError("train: permutation set is empty");
    for (const auto& p : perms) model.check(p);
    if (ds.class_count > model.spec().class_count) throw ConfigError("train: dataset has more classes than the model");
    pin_blas_single_thread();

    auto data_rng = data_stream(cfg.seed);
    auto perm_rng = permutation_stream(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, perms.size() - 1);
    Sgd<float> opt(cfg.momentum, cfg.weight_decay);
    const auto norm = cfg.freeze_bn ? Model<float>::NormMode::frozen : Model<float>::NormMode::batch_stats;
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), data_rng);
        const double lr = cfg.lr_at(epoch);
        double loss_sum = 0;
        std::size_t correct = 0, batches = 0;
        for (std::size_t b0 = 0, bi = 0; b0 < order.size(); b0 += cfg.batch, ++bi) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
            const std::span<const std::size_t> idx(order.data() + b0, b1 - b0);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(ds.labels[i]);
            const std::size_t m = cfg.sampling == TrainConfig::Sampling::uniform_random ? pick(perm_rng) : 0;
            const auto step = model.train_step(gather_images(ds, idx), labels, perms[m], norm);
            if (!std::isfinite(step.loss))
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(bi) + " (non-finite loss)");
            opt.step(model.params(), step.grads, lr);
            log.rows.push_back({epoch, bi, static_cast<double>(step.loss), lr, m});
            loss_sum += step.loss;
            correct += step.correct;
            ++batches;
        }
        log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        log.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(ds.size()));
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            save_weights(model, (std::filesystem::path(cfg.checkpoint_dir) /
                                 ("checkpoint_epoch" + std::to_string(epoch + 1) + ".dynw"))
                                    .string());
        }
    }
    return log;
}

}  // namespace detail

/// Trains under the default configuration only.
inline TrainLog train_static(Model<float>& model, const Dataset& ds, TrainConfig cfg) {
    if (cfg.sampling != TrainConfig::Sampling::fixed_default)
        throw ConfigError("train_static requires the fixed-default sampling mode");
    return detail::run_training(model, ds, cfg, {model.spec().default_configuration()});
}

/// Random option fine-tuning: one permutation drawn uniformly per batch from a
/// stream independent of data shuffling.
inline TrainLog rof_finetune(Model<float>& model, const Dataset& ds, TrainConfig cfg,
                             const std::vector<Configuration>& perms) {
    if (cfg.sampling != TrainConfig::Sampling::uniform_random)
        throw ConfigError("rof_finetune requires the uniform-random sampling mode");
    return detail::run_training(model, ds, cfg, perms);
}

/// Inference accuracy of one configuration.
inline double evaluate_accuracy(const Model<float>& model, const Dataset& ds, const Configuration& c,
                                std::size_t batch = 64) {
    std::size_t hits = 0;
    const auto k = static_cast<std::size_t>(model.spec().class_count);
    for (std::size_t b0 = 0; b0 < ds.size(); b0 += batch) {
        const std::size_t b1 = std::min(ds.size(), b0 + batch);
        const auto logits = model.logits(batch_images(ds, b0, b1), c);
        for (std::size_t i = b0; i < b1; ++i)
            hits += prediction_of(logits.data() + (i - b0) * k, k, ds.labels[i]).first == ds.labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

struct VolatilityReport {
    Bounds pre, post;
    double pre_volatility() const { return pre.best - pre.worst; }
    double post_volatility() const { return post.best - post.worst; }

    nlohmann::json json() const {
        auto b = [](const Bounds& x) { return nlohmann::json{{"worst", x.worst}, {"median", x.median}, {"best", x.best}}; };
        return {{"pre", b(pre)},
                {"post", b(post)},
                {"pre_volatility", pre_volatility()},
                {"post_volatility", post_volatility()}};
    }
};

inline VolatilityReport volatility_report(const SweepResult& pre, const SweepResult& post) {
    return {bounds(pre), bounds(post)};
}

}  // namespace dynaconv
