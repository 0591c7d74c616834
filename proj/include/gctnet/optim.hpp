#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gctnet/errors.hpp"
#include "gctnet/layers.hpp"

namespace gctnet {

struct TrainConfig {
    double base_lr = 0.05;
    double warmup_lr = 0.005;
    int warmup_epochs = 1;
    std::vector<int> decay_epochs = {10, 15};
    double decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 20;
    int batch_size = 64;
    std::uint64_t seed = 1;
    // Whether the embedding scale and gate weight participate in weight
    // decay. The gate bias never does.
    bool decay_alpha_gamma = true;

    void validate() const {
        if (base_lr <= 0) throw ConfigError("base_lr must be > 0");
        if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
        if (warmup_epochs > 0 && warmup_lr <= 0) throw ConfigError("warmup_lr must be > 0");
        if (decay_factor <= 0) throw ConfigError("decay_factor must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end()))
            throw ConfigError("decay_epochs must be sorted ascending");
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"base_lr", c.base_lr},
                          {"warmup_lr", c.warmup_lr},
                          {"warmup_epochs", c.warmup_epochs},
                          {"decay_epochs", c.decay_epochs},
                          {"decay_factor", c.decay_factor},
                          {"momentum", c.momentum},
                          {"weight_decay", c.weight_decay},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"seed", c.seed},
                          {"decay_alpha_gamma", c.decay_alpha_gamma}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("base_lr")) c.base_lr = j.at("base_lr").get<double>();
    if (j.contains("warmup_lr")) c.warmup_lr = j.at("warmup_lr").get<double>();
    if (j.contains("warmup_epochs")) c.warmup_epochs = j.at("warmup_epochs").get<int>();
    if (j.contains("decay_epochs")) c.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
    if (j.contains("decay_factor")) c.decay_factor = j.at("decay_factor").get<double>();
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("decay_alpha_gamma"))
        c.decay_alpha_gamma = j.at("decay_alpha_gamma").get<bool>();
    c.validate();
    return c;
}

// Learning rate for a zero-based epoch index: warmup epochs run at
// warmup_lr, then base_lr cut by decay_factor at each decay epoch.
inline double lr_at(int epoch, const TrainConfig& c) {
    if (epoch < c.warmup_epochs) return c.warmup_lr;
    double lr = c.base_lr;
    for (int d : c.decay_epochs)
        if (epoch >= d) lr *= c.decay_factor;
    return lr;
}

// Weight-decay exemption policy: the gate bias is never decayed; the other
// transform parameters follow the config switch.
inline bool decay_exempt(ParamKind kind, const TrainConfig& c) {
    switch (kind) {
        case ParamKind::GctBeta: return true;
        case ParamKind::GctAlpha:
        case ParamKind::GctGamma: return !c.decay_alpha_gamma;
        default: return false;
    }
}

// SGD with momentum and decoupled-from-schedule L2 regularization folded
// into the gradient:
//   v <- momentum*v + g + wd*p;  p <- p - lr*v
template <typename T>
class SgdOptimizer {
  public:
    SgdOptimizer(std::vector<ParamSlot<T>> slots, TrainConfig cfg)
        : slots_(std::move(slots)), cfg_(std::move(cfg)) {
        cfg_.validate();
        velocity_.resize(slots_.size());
        for (std::size_t i = 0; i < slots_.size(); ++i)
            velocity_[i].assign(static_cast<std::size_t>(slots_[i].count), T(0));
    }

    void step(double lr) {
        const T m = static_cast<T>(cfg_.momentum);
        const T lrt = static_cast<T>(lr);
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            ParamSlot<T>& s = slots_[i];
            const T wd = decay_exempt(s.kind, cfg_) ? T(0) : static_cast<T>(cfg_.weight_decay);
            T* v = velocity_[i].data();
            for (std::int64_t k = 0; k < s.count; ++k) {
                v[k] = m * v[k] + s.grad[k] + wd * s.data[k];
                s.data[k] -= lrt * v[k];
            }
        }
    }

    const std::vector<ParamSlot<T>>& slots() const { return slots_; }
    std::vector<std::vector<T>>& velocity() { return velocity_; }

  private:
    std::vector<ParamSlot<T>> slots_;
    TrainConfig cfg_;
    std::vector<std::vector<T>> velocity_;
};

}  // namespace gctnet
