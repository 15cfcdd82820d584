#pragma once

#include "consense/experiment.hpp"

namespace consense::verify {

/// Dense double-precision matrix used by the reference implementations.
struct DMat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

DMat from_tensor(const Tensor& t);

/// Straight-line double-precision multi-head attention with explicit prefix
/// pairs prepended per head to the keys/values; the oracle attend() is
/// compared against.
DMat ref_attention(const DMat& x, const DMat& wq, const DMat& wk, const DMat& wv, const DMat& wo,
                   int heads, const std::vector<std::pair<DMat, DMat>>& prefixes);

/// Double-precision replay of the model's eval-mode batch cross-entropy,
/// optionally with one parameter entry shifted by delta — the probe the
/// finite-difference gradient checks are built on. Requires dropout 0.
double reference_loss(const ConSenseModel& model, const std::vector<Tensor>& xs,
                      const std::vector<int>& labels, const Tensor* bumped = nullptr,
                      std::size_t index = 0, double delta = 0.0);

struct SuiteResult {
    std::string name;
    int cases = 0;
    int failures = 0;
    std::vector<std::string> messages;
};

/// grads, softmax, freeze, prefix, selective, metrics, data.
std::vector<std::string> suite_names();

SuiteResult run_suite(const std::string& name, unsigned seed = 1234);
std::vector<SuiteResult> run_all(unsigned seed = 1234);

}  // namespace consense::verify
