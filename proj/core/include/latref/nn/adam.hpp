#pragma once

#include <cmath>

#include "latref/nn/layers.hpp"

namespace latref::nn {

/// Adam with bias correction. Slots are lazily matched to the parameter list
/// on first step; the list must not change afterwards.
class Adam {
public:
    explicit Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const ParamRefs& params);
    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }
    int64_t steps() const { return t_; }

private:
    struct Slot {
        Tensor m, v;
    };
    std::vector<Slot> slots_;
    float lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

/// Exponential moving average of parameter values; evaluation weights for
/// noisy objectives. snapshot() writes the averaged values back.
class EmaWeights {
public:
    explicit EmaWeights(float decay) : decay_(decay) {}

    void update(const ParamRefs& params) {
        if (shadow_.empty()) {
            for (Param* p : params) shadow_.push_back(p->value);
            return;
        }
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& s = shadow_[i];
            const Tensor& v = params[i]->value;
            for (int64_t j = 0; j < s.numel(); ++j)
                s[j] = decay_ * s[j] + (1.0f - decay_) * v[j];
        }
    }

    void copy_to(const ParamRefs& params) const {
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = shadow_[i];
    }

private:
    float decay_;
    std::vector<Tensor> shadow_;
};

/// Cosine decay from lr0 to lr0 * floor_frac across total steps.
inline float cosine_lr(float lr0, int step, int total, float floor_frac = 0.02f) {
    const double x = std::min(1.0, static_cast<double>(step) / std::max(1, total - 1));
    const double w = 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
    return static_cast<float>(lr0 * (floor_frac + (1.0 - floor_frac) * w));
}

}  // namespace latref::nn
