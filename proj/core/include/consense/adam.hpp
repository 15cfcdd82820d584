#pragma once

#include <optional>

#include "consense/tensor.hpp"

namespace consense {

struct AdamConfig {
    float lr = 0.001f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Adam with optional per-parameter freeze masks. Masked entries are skipped
/// entirely: no parameter update and no moment update, so unfreezing later
/// never applies stale momentum.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {});

    /// `lr_scale` multiplies the step size for this parameter only; shared
    /// modules can be updated more conservatively than per-task ones.
    void add_param(Tensor param, std::optional<GradMask> mask = std::nullopt, float lr_scale = 1.0f);

    /// One update from the parameters' current grads. Parameters without an
    /// allocated grad buffer are left alone.
    void step();

    void zero_grad();

    std::size_t param_count() const { return slots_.size(); }

  private:
    struct Slot {
        Tensor param;
        std::optional<GradMask> mask;
        float lr_scale = 1.0f;
        std::vector<float> m, v;
        long t = 0;
    };
    AdamConfig cfg_;
    std::vector<Slot> slots_;
};

}  // namespace consense
