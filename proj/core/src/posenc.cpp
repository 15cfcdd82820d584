#include "consense/posenc.hpp"

#include <cmath>

#include "consense/fault.hpp"

namespace consense {

Tensor gaussian_range_logits(const Tensor& mu, const Tensor& log_sigma, int n) {
    if (mu.rank() != 1 || log_sigma.rank() != 1 || mu.extent(0) != log_sigma.extent(0)) {
        throw DimensionError("gaussian_range_logits expects matching [G] vectors, got " +
                             shape_to_string(mu.shape()) + " and " + shape_to_string(log_sigma.shape()));
    }
    if (n < 1) throw DimensionError("gaussian_range_logits needs n >= 1, got " + std::to_string(n));

    const int g_count = mu.extent(0);
    Tensor out = Tensor::zeros({n, g_count});
    const float* mv = mu.data().data();
    const float* sv = log_sigma.data().data();
    float* ov = out.mutable_data().data();
    for (int p = 0; p < n; ++p) {
        for (int g = 0; g < g_count; ++g) {
            const float diff = static_cast<float>(p) - mv[g];
            const float inv_var = std::exp(-2.0f * sv[g]);
            ov[static_cast<std::size_t>(p) * g_count + g] = -0.5f * diff * diff * inv_var - sv[g];
        }
    }

    if (Tape* tape = Tape::active()) {
        tape->record(out, {mu, log_sigma}, [n, g_count](Tape::Node& nd) {
            const float* g = nd.out->grad.data();
            const float* mv2 = nd.parents[0]->values.data();
            const float* sv2 = nd.parents[1]->values.data();
            const bool want_mu = Tape::wants_grad(nd.parents[0]);
            const bool want_s = Tape::wants_grad(nd.parents[1]);
            if (!want_mu && !want_s) return;
            std::span<float> gmu, gs;
            if (want_mu) gmu = Tape::ensure_grad(nd.parents[0]);
            if (want_s) gs = Tape::ensure_grad(nd.parents[1]);
            const float mu_sign = debug::fault_is("gaussian-logits") ? -1.0f : 1.0f;
            for (int gi = 0; gi < g_count; ++gi) {
                const float inv_var = std::exp(-2.0f * sv2[gi]);
                float acc_mu = 0.0f, acc_s = 0.0f;
                for (int p = 0; p < n; ++p) {
                    const float up = g[static_cast<std::size_t>(p) * g_count + gi];
                    const float diff = static_cast<float>(p) - mv2[gi];
                    acc_mu += up * diff * inv_var;
                    acc_s += up * (diff * diff * inv_var - 1.0f);
                }
                if (want_mu) gmu[static_cast<std::size_t>(gi)] += mu_sign * acc_mu;
                if (want_s) gs[static_cast<std::size_t>(gi)] += acc_s;
            }
        });
    }
    return out;
}

GaussianRangeEncoding::GaussianRangeEncoding(int gaussians, int dim, float t_extent, float sigma_init,
                                             std::mt19937& rng)
    : g_(gaussians), d_(dim) {
    if (gaussians < 1 || dim < 1 || t_extent <= 0.0f || sigma_init <= 0.0f) {
        throw ConfigError("positional encoding needs gaussians >= 1, dim >= 1, positive extent and sigma");
    }
    std::vector<float> centers(static_cast<std::size_t>(gaussians));
    const float bin = t_extent / static_cast<float>(gaussians);
    for (int g = 0; g < gaussians; ++g) centers[static_cast<std::size_t>(g)] = (static_cast<float>(g) + 0.5f) * bin;
    mu_ = Tensor::from_data({gaussians}, std::move(centers), true);
    log_sigma_ = Tensor::full({gaussians}, std::log(sigma_init), true);
    range_ = Tensor::uniform({gaussians, dim}, -0.1f, 0.1f, rng, true);
}

Tensor GaussianRangeEncoding::position_weights(int n) const {
    return softmax(gaussian_range_logits(mu_, log_sigma_, n), 1);
}

Tensor GaussianRangeEncoding::encode(const Tensor& x) const {
    if (x.rank() != 2 || x.extent(1) != d_) {
        throw DimensionError("encode expects [n x " + std::to_string(d_) + "], got " +
                             shape_to_string(x.shape()));
    }
    return add(x, matmul(position_weights(x.extent(0)), range_));
}

std::vector<std::pair<std::string, Tensor>> GaussianRangeEncoding::named_parameters() const {
    return {{"posenc.mu", mu_}, {"posenc.log_sigma", log_sigma_}, {"posenc.range", range_}};
}

}  // namespace consense
