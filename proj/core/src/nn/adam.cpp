#include "latref/nn/adam.hpp"

#include <cmath>

namespace latref::nn {

void Adam::step(const ParamRefs& params) {
    if (slots_.empty()) {
        slots_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            slots_[i].m = Tensor(params[i]->value.shape());
            slots_[i].v = Tensor(params[i]->value.shape());
        }
    }
    if (slots_.size() != params.size()) throw Error("nn", "Adam parameter list changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        Slot& s = slots_[i];
        for (int64_t j = 0; j < p.value.numel(); ++j) {
            const float g = p.grad[j];
            s.m[j] = beta1_ * s.m[j] + (1.0f - beta1_) * g;
            s.v[j] = beta2_ * s.v[j] + (1.0f - beta2_) * g * g;
            const double mh = s.m[j] / bc1;
            const double vh = s.v[j] / bc2;
            p.value[j] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
        }
    }
}

}  // namespace latref::nn
