#include "consense/mlp.hpp"

#include <cmath>

namespace consense {

Mlp::Mlp(int in_dim, int hidden1, int hidden2, int out_dim, std::mt19937& rng) : in_dim_(in_dim) {
    if (in_dim < 1 || hidden1 < 1 || hidden2 < 1 || out_dim < 1) {
        throw ConfigError("mlp widths must be positive");
    }
    const std::array<int, 3> ins{in_dim, hidden1, hidden2};
    const std::array<int, 3> outs{hidden1, hidden2, out_dim};
    for (int l = 0; l < 3; ++l) {
        const float bound = 1.0f / std::sqrt(static_cast<float>(ins[static_cast<std::size_t>(l)]));
        w_[static_cast<std::size_t>(l)] = Tensor::uniform(
            {outs[static_cast<std::size_t>(l)], ins[static_cast<std::size_t>(l)]}, -bound, bound, rng, true);
        b_[static_cast<std::size_t>(l)] =
            Tensor::uniform({outs[static_cast<std::size_t>(l)]}, -bound, bound, rng, true);
    }
}

Tensor Mlp::forward(const Tensor& x, MlpActivations* collect, float dropout_rate, bool training,
                    std::mt19937* rng) const {
    if (x.rank() != 2 || x.extent(1) != in_dim_) {
        throw DimensionError("mlp expects [n x " + std::to_string(in_dim_) + "], got " +
                             shape_to_string(x.shape()));
    }
    if (training && dropout_rate > 0.0f && rng == nullptr) {
        throw UsageError("mlp training forward with dropout needs an rng");
    }
    Tensor h1 = relu(add_bias(matmul(x, transpose(w_[0])), b_[0]));
    if (collect != nullptr) collect->l1 = h1;
    if (training && dropout_rate > 0.0f) h1 = dropout(h1, dropout_rate, true, *rng);

    Tensor h2 = relu(add_bias(matmul(h1, transpose(w_[1])), b_[1]));
    if (collect != nullptr) collect->l2 = h2;
    if (training && dropout_rate > 0.0f) h2 = dropout(h2, dropout_rate, true, *rng);

    Tensor out = add_bias(matmul(h2, transpose(w_[2])), b_[2]);
    if (collect != nullptr) collect->l3 = out;
    return out;
}

std::array<int, 3> Mlp::layer_widths() const {
    return {w_[0].extent(0), w_[1].extent(0), w_[2].extent(0)};
}

Tensor Mlp::weight(int layer) const { return w_.at(static_cast<std::size_t>(layer)); }
Tensor Mlp::bias(int layer) const { return b_.at(static_cast<std::size_t>(layer)); }

std::vector<std::pair<std::string, Tensor>> Mlp::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (int l = 0; l < 3; ++l) {
        const std::string n = std::to_string(l + 1);
        out.emplace_back("mlp.w" + n, w_[static_cast<std::size_t>(l)]);
        out.emplace_back("mlp.b" + n, b_[static_cast<std::size_t>(l)]);
    }
    return out;
}

std::vector<Tensor> Mlp::parameters() const {
    return {w_[0], b_[0], w_[1], b_[1], w_[2], b_[2]};
}

ActivationProfile average_activations(int session, const std::array<std::vector<float>, 3>& sums,
                                      std::size_t batch, const std::array<int, 3>& widths) {
    if (batch == 0) throw DataError("activation profile over an empty dataset");
    ActivationProfile profile;
    profile.session = session;
    for (int l = 0; l < 3; ++l) {
        const auto& s = sums[static_cast<std::size_t>(l)];
        if (s.size() != static_cast<std::size_t>(widths[static_cast<std::size_t>(l)])) {
            throw DimensionError("activation sums width " + std::to_string(s.size()) +
                                 " does not match layer width " +
                                 std::to_string(widths[static_cast<std::size_t>(l)]));
        }
        auto& m = profile.mean[static_cast<std::size_t>(l)];
        m.resize(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) m[i] = s[i] / static_cast<float>(batch);
    }
    return profile;
}

std::array<std::vector<int>, 3> stable_set(const ActivationProfile& current,
                                           const ActivationProfile& previous, float epsilon) {
    if (epsilon < 0.0f) throw ConfigError("stability threshold must be >= 0");
    std::array<std::vector<int>, 3> stable;
    for (int l = 0; l < 3; ++l) {
        const auto& cur = current.mean[static_cast<std::size_t>(l)];
        const auto& prev = previous.mean[static_cast<std::size_t>(l)];
        if (cur.size() != prev.size()) {
            throw ProtocolError("profile widths differ at layer " + std::to_string(l + 1) + ": " +
                                std::to_string(cur.size()) + " vs " + std::to_string(prev.size()));
        }
        for (std::size_t p = 0; p < cur.size(); ++p) {
            if (std::fabs(cur[p] - prev[p]) <= epsilon) {
                stable[static_cast<std::size_t>(l)].push_back(static_cast<int>(p));
            }
        }
    }
    return stable;
}

FreezeMaskSet build_masks(const std::array<std::vector<int>, 3>& stable, const Mlp& mlp) {
    FreezeMaskSet masks;
    for (int l = 0; l < 3; ++l) {
        const Tensor w = mlp.weight(l);
        const Tensor b = mlp.bias(l);
        masks.weight[static_cast<std::size_t>(l)] = GradMask::ones(w.shape());
        masks.bias[static_cast<std::size_t>(l)] = GradMask::ones(b.shape());
        const int rows = w.extent(0), cols = w.extent(1);
        auto wb = masks.weight[static_cast<std::size_t>(l)].mutable_bits();
        auto bb = masks.bias[static_cast<std::size_t>(l)].mutable_bits();
        for (int p : stable[static_cast<std::size_t>(l)]) {
            if (p < 0 || p >= rows) {
                throw ProtocolError("stable neuron " + std::to_string(p) + " out of range for layer " +
                                    std::to_string(l + 1) + " width " + std::to_string(rows));
            }
            for (int j = 0; j < cols; ++j) wb[static_cast<std::size_t>(p) * cols + j] = 0;
            bb[static_cast<std::size_t>(p)] = 0;
        }
    }
    return masks;
}

}  // namespace consense
