#include "consense/model.hpp"

#include <cmath>

#include "consense/seeds.hpp"

namespace consense {

void ModelConfig::validate() const {
    if (t_len < 1) throw ConfigError("t_len must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (heads < 1 || channels % heads != 0) {
        throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                          std::to_string(heads) + ")");
    }
    if (gaussians < 1) throw ConfigError("gaussians must be >= 1");
    if (sigma_init <= 0.0f) throw ConfigError("sigma_init must be positive");
    if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("dropout must be in [0,1)");
    if (rank() < 1 || rank() >= channels) {
        throw ConfigError("adapter rank " + std::to_string(rank()) + " must be in (0, " +
                          std::to_string(channels) + ")");
    }
    prefix_kind_from_string(prefix_init);
}

ConSenseModel::ConSenseModel(ModelConfig cfg, int initial_classes)
    : cfg_((cfg.validate(), cfg)),
      rng_(cfg.seed),
      enc_(cfg.gaussians, cfg.channels, static_cast<float>(cfg.t_len), cfg.sigma_init, rng_),
      base_(cfg.channels, cfg.heads, rng_),
      mlp_(cfg.channels, cfg.hidden1(), cfg.hidden2(), cfg.channels, rng_) {
    if (initial_classes < 1) throw ConfigError("model needs at least one initial class");
    const float bound = 1.0f / std::sqrt(static_cast<float>(cfg_.channels));
    cls_w_ = Tensor::uniform({initial_classes, cfg_.channels}, -bound, bound, rng_, true);
    cls_b_ = Tensor::uniform({initial_classes}, -bound, bound, rng_, true);
}

Tensor ConSenseModel::forward(const Tensor& x, MlpActivations* collect) {
    if (x.rank() != 2 || x.extent(0) != cfg_.t_len || x.extent(1) != cfg_.channels) {
        throw DimensionError("model expects [" + std::to_string(cfg_.t_len) + " x " +
                             std::to_string(cfg_.channels) + "], got " + shape_to_string(x.shape()));
    }
    Tensor xe = enc_.encode(x);
    Tensor attended = attend(xe, base_, stack_);
    attended = dropout(attended, cfg_.dropout, training_, rng_);
    Tensor features = mlp_.forward(attended, collect, cfg_.dropout, training_, &rng_);
    Tensor pooled = mean_rows(features);
    return add_bias(matmul(pooled, transpose(cls_w_)), cls_b_);
}

Tensor ConSenseModel::forward_batch(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw UsageError("forward_batch over an empty batch");
    std::vector<Tensor> rows;
    rows.reserve(xs.size());
    for (const Tensor& x : xs) rows.push_back(forward(x));
    return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

void ConSenseModel::expand_classifier(int added) {
    if (added < 1) throw UsageError("classifier expansion must add at least one class");
    const int old_count = cls_w_.extent(0);
    const int new_count = old_count + added;
    const float bound = 1.0f / std::sqrt(static_cast<float>(cfg_.channels));
    std::mt19937 grow_rng(seed32(cfg_.seed, 0xC1A55u + static_cast<unsigned>(new_count)));
    Tensor w = Tensor::zeros({new_count, cfg_.channels}, true);
    Tensor b = Tensor::zeros({new_count}, true);
    std::copy_n(cls_w_.data().data(), cls_w_.size(), w.mutable_data().data());
    std::copy_n(cls_b_.data().data(), cls_b_.size(), b.mutable_data().data());
    std::uniform_real_distribution<float> u(-bound, bound);
    for (int r = old_count; r < new_count; ++r) {
        for (int c = 0; c < cfg_.channels; ++c) {
            w.mutable_data()[static_cast<std::size_t>(r) * cfg_.channels + c] = u(grow_rng);
        }
        b.mutable_data()[static_cast<std::size_t>(r)] = u(grow_rng);
    }
    cls_w_ = w;
    cls_b_ = b;
}

std::vector<std::pair<std::string, Tensor>> ConSenseModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out = enc_.named_parameters();
    for (auto& p : base_.named_parameters()) out.push_back(p);
    if (stack_.current) {
        for (auto& p : stack_.current->named_parameters()) out.push_back(p);
    }
    for (const PrefixAdapter& a : stack_.frozen) {
        for (auto& p : a.named_parameters()) out.push_back(p);
    }
    for (auto& p : mlp_.named_parameters()) out.push_back(p);
    out.emplace_back("classifier.w", cls_w_);
    out.emplace_back("classifier.b", cls_b_);
    return out;
}

ParamCounts ConSenseModel::count_parameters() const {
    ParamCounts counts;
    auto tally = [&counts](const Tensor& t, std::size_t& bucket) {
        bucket += t.size();
        counts.total += t.size();
        if (t.trainable()) counts.trainable += t.size();
    };
    for (auto& [name, t] : enc_.named_parameters()) tally(t, counts.posenc);
    for (auto& [name, t] : base_.named_parameters()) tally(t, counts.attention);
    if (stack_.current) {
        for (auto& [name, t] : stack_.current->named_parameters()) tally(t, counts.adapters);
    }
    for (const PrefixAdapter& a : stack_.frozen) {
        for (auto& [name, t] : a.named_parameters()) tally(t, counts.adapters);
    }
    for (auto& [name, t] : mlp_.named_parameters()) tally(t, counts.mlp);
    tally(cls_w_, counts.classifier);
    tally(cls_b_, counts.classifier);
    return counts;
}

}  // namespace consense
