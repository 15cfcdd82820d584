#pragma once

#include "consense/attention.hpp"
#include "consense/mlp.hpp"
#include "consense/posenc.hpp"

namespace consense {

struct ModelConfig {
    int t_len = 64;
    int channels = 18;  // model width; inputs are t_len x channels
    int heads = 9;
    int gaussians = 10;
    float sigma_init = 8.0f;
    int mlp_hidden1 = 0;  // 0 = channels
    int mlp_hidden2 = 0;  // 0 = channels
    float dropout = 0.1f;
    int adapter_rank = 0;  // 0 = default_adapter_rank(channels, heads)
    std::string prefix_init = "adapter";
    unsigned seed = 1;

    int hidden1() const { return mlp_hidden1 > 0 ? mlp_hidden1 : channels; }
    int hidden2() const { return mlp_hidden2 > 0 ? mlp_hidden2 : channels; }
    int rank() const { return adapter_rank > 0 ? adapter_rank : default_adapter_rank(channels, heads); }
    void validate() const;
};

struct ParamCounts {
    std::size_t posenc = 0;
    std::size_t attention = 0;
    std::size_t adapters = 0;
    std::size_t mlp = 0;
    std::size_t classifier = 0;
    std::size_t total = 0;
    std::size_t trainable = 0;
};

/// Positional encoding, prefix-extended self-attention, selectively
/// retrainable MLP, temporal mean pooling, and a classifier that grows with
/// the classes seen so far.
class ConSenseModel {
  public:
    ConSenseModel(ModelConfig cfg, int initial_classes);

    /// t_len x channels input to a 1 x seen_classes logits row. In training
    /// mode dropout draws from the model rng; eval mode is deterministic.
    Tensor forward(const Tensor& x, MlpActivations* collect = nullptr);

    /// Stacks per-sample logits rows into batch x seen_classes.
    Tensor forward_batch(const std::vector<Tensor>& xs);

    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }

    int seen_classes() const { return cls_w_.extent(0); }

    /// Adds `added` >= 1 fresh classifier rows; existing rows are preserved
    /// bit-exact.
    void expand_classifier(int added);

    GaussianRangeEncoding& encoding() { return enc_; }
    const GaussianRangeEncoding& encoding() const { return enc_; }
    AttentionBase& attention() { return base_; }
    const AttentionBase& attention() const { return base_; }
    PrefixStack& prefix_stack() { return stack_; }
    const PrefixStack& prefix_stack() const { return stack_; }
    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }
    Tensor classifier_weight() const { return cls_w_; }
    Tensor classifier_bias() const { return cls_b_; }
    std::mt19937& rng() { return rng_; }
    const ModelConfig& config() const { return cfg_; }

    /// Every parameter tensor, frozen or not, under a stable name.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    ParamCounts count_parameters() const;

  private:
    ModelConfig cfg_;
    std::mt19937 rng_;  // initialization draws, then training-time dropout
    GaussianRangeEncoding enc_;
    AttentionBase base_;
    PrefixStack stack_;
    Mlp mlp_;
    Tensor cls_w_;  // seen_classes x channels
    Tensor cls_b_;  // seen_classes
    bool training_ = false;
};

}  // namespace consense
