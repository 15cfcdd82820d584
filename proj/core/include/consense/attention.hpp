#pragma once

#include <optional>
#include <string>
#include <utility>

#include "consense/ops.hpp"

namespace consense {

/// Shared projection weights of multi-head self-attention. After the initial
/// session the base is frozen and never changes again.
struct AttentionBase {
    AttentionBase(int dim, int heads, std::mt19937& rng);

    int dim = 0;
    int heads = 0;
    int head_dim = 0;
    Tensor w_q, w_k, w_v, w_o;  // each dim x dim
    bool frozen = false;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

/// Freezes the base projections for good; freezing twice is a protocol error.
void freeze_base(AttentionBase& base);

enum class PrefixKind { adapter, zero, random };

PrefixKind prefix_kind_from_string(const std::string& s);
std::string to_string(PrefixKind kind);

/// One task's source of key/value prefixes. The adapter kind generates
/// input-conditioned prefixes through a tanh bottleneck; the zero and random
/// kinds hold directly learnable seq_len x dim prefix matrices differing only
/// in their initialization.
struct PrefixAdapter {
    int task_id = 0;
    PrefixKind kind = PrefixKind::adapter;
    int rank = 0;
    bool frozen = false;
    Tensor k_down, k_up, v_down, v_up;  // adapter kind: down dim x rank, up rank x dim
    Tensor p_k, p_v;                    // direct kinds: seq_len x dim

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
};

/// rank must satisfy 0 < rank < dim (bottleneck); seq_len is used by the
/// direct kinds only. Equal seeds give bit-identical adapters.
PrefixAdapter make_prefix_adapter(int task_id, int dim, int rank, PrefixKind kind, int seq_len,
                                  unsigned seed);

/// Default bottleneck: dim/6 rounded to a multiple of the head count, at
/// least one head's width.
int default_adapter_rank(int dim, int heads);

/// (P_K, P_V), each seq_len x dim. Adapter kind: tanh(x * W_down) * W_up per
/// stream; direct kinds return the stored matrices.
std::pair<Tensor, Tensor> generate_prefixes(const Tensor& x, const PrefixAdapter& adapter);

/// Frozen adapters of past tasks (newest first, oldest last) plus at most one
/// trainable adapter for the task being learned.
struct PrefixStack {
    std::vector<PrefixAdapter> frozen;
    std::optional<PrefixAdapter> current;

    int adapter_count() const { return static_cast<int>(frozen.size()) + (current ? 1 : 0); }
};

/// Appends a freshly initialized trainable adapter; adding while another is
/// still trainable is a protocol error.
PrefixAdapter& add_task_adapter(PrefixStack& stack, int task_id, int dim, int rank, PrefixKind kind,
                                int seq_len, unsigned seed);

/// Moves the trainable adapter into the frozen list (newest first); a missing
/// trainable adapter is a protocol error.
void freeze_current(PrefixStack& stack);

/// Multi-head self-attention over x (n x dim) with per-head key/value
/// sequences extended by every adapter's prefixes — current task first, then
/// frozen tasks newest to oldest, then the input-derived keys/values. An
/// empty stack is plain MHSA. If attention_rows is given, each head's n x m
/// weight matrix is appended to it.
Tensor attend(const Tensor& x, const AttentionBase& base, const PrefixStack& stack,
              std::vector<Tensor>* attention_rows = nullptr);

}  // namespace consense
