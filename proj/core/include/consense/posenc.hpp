#pragma once

#include <string>
#include <utility>

#include "consense/ops.hpp"

namespace consense {

/// Log-density of position p under Gaussian g, up to the shared 1/sqrt(2*pi)
/// constant: L[p,g] = -(p - mu[g])^2 * exp(-2*s[g]) / 2 - s[g], where
/// s = log_sigma. A row softmax of L over g therefore equals the
/// per-position normalized mixture weights. Differentiable in mu and s.
Tensor gaussian_range_logits(const Tensor& mu, const Tensor& log_sigma, int n);

/// Learnable positional encoding: each temporal position 0..n-1 receives
/// mixture weights over G Gaussian ranges (normalized per position), which
/// blend G range-embedding rows into a d-wide vector added to the input.
class GaussianRangeEncoding {
  public:
    /// mu starts at the centers of G equal bins of [0, t_extent); sigma
    /// starts at sigma_init and is stored as its log so positivity is
    /// structural; range embeddings start small uniform.
    GaussianRangeEncoding(int gaussians, int dim, float t_extent, float sigma_init, std::mt19937& rng);

    /// n x G matrix of per-position mixture weights; rows sum to 1.
    Tensor position_weights(int n) const;

    /// x + position_weights(n) * R for an n x d input.
    Tensor encode(const Tensor& x) const;

    int gaussians() const { return g_; }
    int dim() const { return d_; }
    Tensor mu() const { return mu_; }
    Tensor log_sigma() const { return log_sigma_; }
    Tensor range_embeddings() const { return range_; }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  private:
    int g_ = 0;
    int d_ = 0;
    Tensor mu_;         // [G]
    Tensor log_sigma_;  // [G]
    Tensor range_;      // [G x d]
};

}  // namespace consense
