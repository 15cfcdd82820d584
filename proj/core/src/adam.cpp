#include "consense/adam.hpp"

#include <cmath>

#include "consense/fault.hpp"

namespace consense {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
    if (cfg_.lr <= 0.0f || cfg_.beta1 < 0.0f || cfg_.beta1 >= 1.0f || cfg_.beta2 < 0.0f ||
        cfg_.beta2 >= 1.0f || cfg_.eps <= 0.0f) {
        throw ConfigError("adam config out of range");
    }
}

void Adam::add_param(Tensor param, std::optional<GradMask> mask, float lr_scale) {
    if (!param.trainable()) throw UsageError("adam can only optimize trainable tensors");
    if (mask && mask->shape() != param.shape()) {
        throw DimensionError("mask shape " + shape_to_string(mask->shape()) +
                             " does not match parameter " + shape_to_string(param.shape()));
    }
    if (lr_scale <= 0.0f) throw ConfigError("lr_scale must be positive");
    Slot s;
    s.param = param;
    s.mask = std::move(mask);
    s.lr_scale = lr_scale;
    s.m.assign(param.size(), 0.0f);
    s.v.assign(param.size(), 0.0f);
    slots_.push_back(std::move(s));
}

void Adam::step() {
    const bool fault_moments = debug::fault_is("adam");
    for (Slot& s : slots_) {
        if (!s.param.has_grad()) continue;
        ++s.t;
        const float c1 = 1.0f / (1.0f - static_cast<float>(std::pow(static_cast<double>(cfg_.beta1), s.t)));
        const float c2 = 1.0f / (1.0f - static_cast<float>(std::pow(static_cast<double>(cfg_.beta2), s.t)));
        auto g = s.param.grad();
        auto p = s.param.mutable_data();
        const std::uint8_t* bits = s.mask ? s.mask->bits().data() : nullptr;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (bits != nullptr && bits[i] == 0) continue;
            const float gi = g[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * gi;
            float v_next = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * gi * gi;
            if (fault_moments) v_next = cfg_.beta2 * s.v[i];  // drops the squared-grad term
            s.v[i] = v_next;
            const float mhat = s.m[i] * c1;
            const float vhat = s.v[i] * c2;
            p[i] -= cfg_.lr * s.lr_scale * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

}  // namespace consense
