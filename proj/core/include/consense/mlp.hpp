#pragma once

#include <array>
#include <string>
#include <utility>

#include "consense/ops.hpp"

namespace consense {

/// Per-layer post-activation token matrices of one forward pass: post-ReLU
/// for the two hidden layers, the linear output for the last.
struct MlpActivations {
    Tensor l1, l2, l3;
};

/// Per-neuron mean activations of one session's training set, kept only for
/// the most recent session.
struct ActivationProfile {
    int session = 0;
    std::array<std::vector<float>, 3> mean;

    bool empty() const { return mean[0].empty() && mean[1].empty() && mean[2].empty(); }
};

/// Binary gradient masks for the three weight matrices and bias vectors;
/// row p of weight[l] and bias[l][p] are zeroed when neuron p is frozen.
struct FreezeMaskSet {
    std::array<GradMask, 3> weight;
    std::array<GradMask, 3> bias;
};

/// Three linear layers (in -> h1 -> h2 -> out) with ReLU after the first two.
/// Weights are stored neuron-major (out x in) so a neuron's incoming weights
/// form one row. Applied tokenwise to n x in inputs.
class Mlp {
  public:
    Mlp(int in_dim, int hidden1, int hidden2, int out_dim, std::mt19937& rng);

    /// Forward over an n x in matrix; optionally records per-layer
    /// activations and applies dropout after each hidden ReLU when training.
    Tensor forward(const Tensor& x, MlpActivations* collect = nullptr, float dropout_rate = 0.0f,
                   bool training = false, std::mt19937* rng = nullptr) const;

    std::array<int, 3> layer_widths() const;  // h1, h2, out
    int in_dim() const { return in_dim_; }

    Tensor weight(int layer) const;  // 0-based
    Tensor bias(int layer) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;

  private:
    int in_dim_ = 0;
    std::array<Tensor, 3> w_;  // [out x in]
    std::array<Tensor, 3> b_;  // [out]
};

/// Per-neuron mean activations: sums[l] accumulates the per-sample token
/// means of layer l (one width-l vector summed over the batch), which this
/// divides by the batch size.
ActivationProfile average_activations(int session, const std::array<std::vector<float>, 3>& sums,
                                      std::size_t batch, const std::array<int, 3>& widths);

/// Indices of neurons whose mean activation moved by at most epsilon between
/// the two profiles. Mismatched widths mean the architecture changed between
/// sessions — a protocol error.
std::array<std::vector<int>, 3> stable_set(const ActivationProfile& current,
                                           const ActivationProfile& previous, float epsilon);

/// All-ones masks except the incoming-weight rows and bias entries of stable
/// neurons, which are zeroed. Out-of-range indices are a protocol error.
FreezeMaskSet build_masks(const std::array<std::vector<int>, 3>& stable, const Mlp& mlp);

}  // namespace consense
