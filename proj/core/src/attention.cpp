#include "consense/attention.hpp"

#include <cmath>

namespace consense {

namespace {

void set_trainable_all(std::vector<Tensor> tensors, bool on) {
    for (Tensor& t : tensors) t.set_trainable(on);
}

}  // namespace

AttentionBase::AttentionBase(int dim_, int heads_, std::mt19937& rng) : dim(dim_), heads(heads_) {
    if (dim < 1 || heads < 1 || dim % heads != 0) {
        throw ConfigError("attention needs dim divisible by heads, got dim=" + std::to_string(dim) +
                          " heads=" + std::to_string(heads));
    }
    head_dim = dim / heads;
    const float bound = 1.0f / std::sqrt(static_cast<float>(dim));
    w_q = Tensor::uniform({dim, dim}, -bound, bound, rng, true);
    w_k = Tensor::uniform({dim, dim}, -bound, bound, rng, true);
    w_v = Tensor::uniform({dim, dim}, -bound, bound, rng, true);
    w_o = Tensor::uniform({dim, dim}, -bound, bound, rng, true);
}

std::vector<std::pair<std::string, Tensor>> AttentionBase::named_parameters() const {
    return {{"attn.w_q", w_q}, {"attn.w_k", w_k}, {"attn.w_v", w_v}, {"attn.w_o", w_o}};
}

void freeze_base(AttentionBase& base) {
    if (base.frozen) throw ProtocolError("attention base is already frozen");
    base.frozen = true;
    set_trainable_all({base.w_q, base.w_k, base.w_v, base.w_o}, false);
}

PrefixKind prefix_kind_from_string(const std::string& s) {
    if (s == "adapter") return PrefixKind::adapter;
    if (s == "zero") return PrefixKind::zero;
    if (s == "random") return PrefixKind::random;
    throw ConfigError("unknown prefix init '" + s + "' (expected adapter, zero or random)");
}

std::string to_string(PrefixKind kind) {
    switch (kind) {
        case PrefixKind::adapter: return "adapter";
        case PrefixKind::zero: return "zero";
        case PrefixKind::random: return "random";
    }
    return "adapter";
}

std::vector<std::pair<std::string, Tensor>> PrefixAdapter::named_parameters() const {
    const std::string p = "adapter" + std::to_string(task_id) + ".";
    if (kind == PrefixKind::adapter) {
        return {{p + "k_down", k_down}, {p + "k_up", k_up}, {p + "v_down", v_down}, {p + "v_up", v_up}};
    }
    return {{p + "p_k", p_k}, {p + "p_v", p_v}};
}

std::vector<Tensor> PrefixAdapter::parameters() const {
    if (kind == PrefixKind::adapter) return {k_down, k_up, v_down, v_up};
    return {p_k, p_v};
}

PrefixAdapter make_prefix_adapter(int task_id, int dim, int rank, PrefixKind kind, int seq_len,
                                  unsigned seed) {
    if (rank < 1 || rank >= dim) {
        throw ConfigError("adapter rank must satisfy 0 < rank < dim, got rank=" + std::to_string(rank) +
                          " dim=" + std::to_string(dim));
    }
    if (seq_len < 1) throw ConfigError("adapter seq_len must be >= 1");
    PrefixAdapter a;
    a.task_id = task_id;
    a.kind = kind;
    a.rank = rank;
    std::mt19937 rng(seed);
    if (kind == PrefixKind::adapter) {
        const float down_bound = 1.0f / std::sqrt(static_cast<float>(dim));
        // Deliberately small: a freshly added adapter should start close to
        // transparent, otherwise its prefixes siphon attention mass away from
        // the content tokens (and every frozen task's features shift) before
        // it has learned anything.
        const float up_bound = 0.1f / std::sqrt(static_cast<float>(rank));
        a.k_down = Tensor::uniform({dim, rank}, -down_bound, down_bound, rng, true);
        a.k_up = Tensor::uniform({rank, dim}, -up_bound, up_bound, rng, true);
        a.v_down = Tensor::uniform({dim, rank}, -down_bound, down_bound, rng, true);
        a.v_up = Tensor::uniform({rank, dim}, -up_bound, up_bound, rng, true);
    } else if (kind == PrefixKind::zero) {
        a.p_k = Tensor::zeros({seq_len, dim}, true);
        a.p_v = Tensor::zeros({seq_len, dim}, true);
    } else {
        a.p_k = Tensor::uniform({seq_len, dim}, -0.5f, 0.5f, rng, true);
        a.p_v = Tensor::uniform({seq_len, dim}, -0.5f, 0.5f, rng, true);
    }
    return a;
}

int default_adapter_rank(int dim, int heads) {
    const int rounded = static_cast<int>(std::lround(static_cast<double>(dim) / 6.0 / heads)) * heads;
    return std::max(heads, rounded);
}

std::pair<Tensor, Tensor> generate_prefixes(const Tensor& x, const PrefixAdapter& adapter) {
    if (adapter.kind != PrefixKind::adapter) return {adapter.p_k, adapter.p_v};
    if (x.rank() != 2 || x.extent(1) != adapter.k_down.extent(0)) {
        throw DimensionError("generate_prefixes expects [n x " +
                             std::to_string(adapter.k_down.extent(0)) + "], got " +
                             shape_to_string(x.shape()));
    }
    Tensor pk = matmul(tanh_op(matmul(x, adapter.k_down)), adapter.k_up);
    Tensor pv = matmul(tanh_op(matmul(x, adapter.v_down)), adapter.v_up);
    return {pk, pv};
}

PrefixAdapter& add_task_adapter(PrefixStack& stack, int task_id, int dim, int rank, PrefixKind kind,
                                int seq_len, unsigned seed) {
    if (stack.current) {
        throw ProtocolError("cannot add an adapter while task " + std::to_string(stack.current->task_id) +
                            "'s adapter is still trainable");
    }
    stack.current = make_prefix_adapter(task_id, dim, rank, kind, seq_len, seed);
    return *stack.current;
}

void freeze_current(PrefixStack& stack) {
    if (!stack.current) throw ProtocolError("no trainable adapter to freeze");
    PrefixAdapter a = std::move(*stack.current);
    stack.current.reset();
    a.frozen = true;
    for (Tensor t : a.parameters()) t.set_trainable(false);
    stack.frozen.insert(stack.frozen.begin(), std::move(a));
}

Tensor attend(const Tensor& x, const AttentionBase& base, const PrefixStack& stack,
              std::vector<Tensor>* attention_rows) {
    if (x.rank() != 2 || x.extent(1) != base.dim) {
        throw DimensionError("attend expects [n x " + std::to_string(base.dim) + "], got " +
                             shape_to_string(x.shape()));
    }
    const int dk = base.head_dim;
    Tensor q = matmul(x, base.w_q);
    Tensor k = matmul(x, base.w_k);
    Tensor v = matmul(x, base.w_v);

    // Prefix pairs in key order: current task, then frozen newest to oldest.
    std::vector<std::pair<Tensor, Tensor>> prefixes;
    if (stack.current) prefixes.push_back(generate_prefixes(x, *stack.current));
    for (const PrefixAdapter& a : stack.frozen) prefixes.push_back(generate_prefixes(x, a));

    const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(dk));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(base.heads));
    for (int h = 0; h < base.heads; ++h) {
        const int off = h * dk;
        Tensor qi = slice(q, 1, off, dk);
        std::vector<Tensor> keys, values;
        keys.reserve(prefixes.size() + 1);
        values.reserve(prefixes.size() + 1);
        for (const auto& [pk, pv] : prefixes) {
            keys.push_back(slice(pk, 1, off, dk));
            values.push_back(slice(pv, 1, off, dk));
        }
        keys.push_back(slice(k, 1, off, dk));
        values.push_back(slice(v, 1, off, dk));
        Tensor ki = keys.size() == 1 ? keys[0] : concat(keys, 0);
        Tensor vi = values.size() == 1 ? values[0] : concat(values, 0);
        Tensor weights = softmax(scale(matmul(qi, transpose(ki)), inv_sqrt_dk), 1);
        if (attention_rows != nullptr) attention_rows->push_back(weights);
        heads.push_back(matmul(weights, vi));
    }
    Tensor merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
    return matmul(merged, base.w_o);
}

}  // namespace consense
