#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "astromae/layers.hpp"

namespace astromae {

// AdamW with decoupled weight decay: the decay step p -= lr*wd*p is applied
// independently of the bias-corrected adaptive update. The optimizer is
// handed trainable parameters only; frozen tensors never reach it.
template <typename T>
class AdamW {
public:
    struct Settings {
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T eps = T(1e-8);
        T weight_decay = T(0);
    };

    AdamW() = default;
    AdamW(std::vector<TensorPtr<T>> params, const Settings& settings)
        : params_(std::move(params)), settings_(settings) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m.assign(params_[i]->data.size(), T(0));
            slots_[i].v.assign(params_[i]->data.size(), T(0));
        }
    }

    void step(T lr) {
        ++t_;
        const T bc1 = T(1) - std::pow(settings_.beta1, T(t_));
        const T bc2 = T(1) - std::pow(settings_.beta2, T(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = *params_[pi];
            if (p.grad.size() != p.data.size()) {
                throw OptimStateError("adamw: parameter " + std::to_string(pi) +
                                      " has no populated gradient");
            }
            auto& slot = slots_[pi];
            const std::int64_t n = p.numel();
            T* w = p.data.data();
            const T* g = p.grad.data();
            T* m = slot.m.data();
            T* v = slot.v.data();
            const T b1 = settings_.beta1, b2 = settings_.beta2;
            const T wd = settings_.weight_decay, eps = settings_.eps;
#pragma omp parallel for schedule(static) if (n > 32768)
            for (std::int64_t i = 0; i < n; ++i) {
                w[i] -= lr * wd * w[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    std::size_t size() const { return params_.size(); }
    std::vector<T>& moment1(std::size_t i) { return slots_[i].m; }
    std::vector<T>& moment2(std::size_t i) { return slots_[i].v; }
    const std::vector<TensorPtr<T>>& params() const { return params_; }

private:
    struct Slot {
        std::vector<T> m, v;
    };
    std::vector<TensorPtr<T>> params_;
    std::vector<Slot> slots_;
    Settings settings_;
    std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// learning-rate schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { CosineWarmup, CyclicRestart };
enum class CyclicMode { Restart, Envelope };

struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::CosineWarmup;
    double lr_peak = 1.17e-3;
    double lr_initial = 1e-4;
    std::int64_t warmup_epochs = 196;
    std::int64_t total_epochs = 2000;
    std::int64_t cycle_length = 10;
    double decay_base = 0.995;
    CyclicMode cyclic_mode = CyclicMode::Restart;
};

// Linear ramp to lr_peak over the warmup epochs, then cosine decay to zero.
inline double cosine_warmup_lr(std::int64_t epoch, const ScheduleConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.total_epochs) {
        throw ConfigError("cosine_warmup_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(cfg.total_epochs) + ")");
    }
    if (cfg.warmup_epochs >= cfg.total_epochs) {
        throw ConfigError("cosine_warmup_lr: warmup must be shorter than the total epochs");
    }
    if (epoch < cfg.warmup_epochs) {
        return cfg.lr_peak * double(epoch + 1) / double(cfg.warmup_epochs);
    }
    const double progress = double(epoch - cfg.warmup_epochs) /
                            double(cfg.total_epochs - cfg.warmup_epochs);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Sawtooth: reset to lr_initial at each cycle start, exponential decay within
// the cycle. Envelope mode is the alternative reading where the rate follows
// the global decay_base^epoch curve (restarting onto the envelope is the
// envelope itself).
inline double cyclic_restart_lr(std::int64_t epoch, const ScheduleConfig& cfg) {
    if (epoch < 0) throw ConfigError("cyclic_restart_lr: negative epoch");
    if (cfg.cycle_length < 1) throw ConfigError("cyclic_restart_lr: cycle length must be >= 1");
    if (cfg.cyclic_mode == CyclicMode::Envelope) {
        return cfg.lr_initial * std::pow(cfg.decay_base, double(epoch));
    }
    return cfg.lr_initial * std::pow(cfg.decay_base, double(epoch % cfg.cycle_length));
}

inline double schedule_lr(std::int64_t epoch, const ScheduleConfig& cfg) {
    return cfg.kind == ScheduleKind::CosineWarmup ? cosine_warmup_lr(epoch, cfg)
                                                  : cyclic_restart_lr(epoch, cfg);
}

}  // namespace astromae
