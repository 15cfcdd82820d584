#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <consense/tensor.hpp>

namespace testutil {

inline double rel_err(double got, double want) {
    const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
    return std::abs(got - want) / denom;
}

// Gradient comparison: 1e-3 relative with an absolute floor so near-zero
// pairs don't blow the ratio up.
inline bool grad_close(double analytic, double reference) {
    if (std::abs(analytic - reference) < 1e-6) return true;
    return rel_err(analytic, reference) < 1e-3;
}

inline bool bits_equal(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
    }
    return true;
}

inline bool bits_equal(const consense::Tensor& a, const consense::Tensor& b) {
    return a.shape() == b.shape() && bits_equal(a.data(), b.data());
}

inline std::vector<float> snapshot(const consense::Tensor& t) {
    return {t.data().begin(), t.data().end()};
}

inline std::vector<double> to_double(std::span<const float> v) {
    return {v.begin(), v.end()};
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

// Central finite difference of a double-precision scalar function over one
// flattened parameter vector.
template <typename F>
std::vector<double> fd_gradient(const std::vector<double>& params, F&& loss, double h = 1e-3) {
    std::vector<double> g(params.size());
    std::vector<double> p = params;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double up = loss(p);
        p[i] = orig - h;
        const double down = loss(p);
        p[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace testutil
