#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "consense/tensor.hpp"

namespace consense {

// Differentiable primitives over rank-1/rank-2 float32 tensors. Each op
// records its gradient rule on the active tape (if any). Broadcasting is
// limited to add_bias (vector over rows).

/// Standard matrix product [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// 2-D transpose.
Tensor transpose(const Tensor& x);

/// Elementwise sum of two same-shape tensors.
Tensor add(const Tensor& a, const Tensor& b);

/// Elementwise product of two same-shape tensors.
Tensor mul(const Tensor& a, const Tensor& b);

/// Adds a length-d bias vector to every row of an [n x d] matrix.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Multiplication by a compile-time constant scalar.
Tensor scale(const Tensor& x, float factor);

/// Concatenates tensors of equal rank along `axis`; all other extents must
/// match. Backward routes gradient slices back to the sources.
Tensor concat(const std::vector<Tensor>& tensors, int axis);

/// Copies `len` extents starting at `start` along `axis`.
Tensor slice(const Tensor& x, int axis, int start, int len);

/// Max-subtraction-stabilized softmax along `axis` of a rank-2 tensor.
Tensor softmax(const Tensor& x, int axis);

Tensor tanh_op(const Tensor& x);
Tensor relu(const Tensor& x);

/// Inverted dropout: zeroes entries with probability `rate` and scales
/// survivors by 1/(1-rate). Identity (bit-exact) when `training` is false.
Tensor dropout(const Tensor& x, float rate, bool training, std::mt19937& rng);

/// Mean over rows: [n x d] -> [1 x d].
Tensor mean_rows(const Tensor& x);

/// Sum of all entries -> scalar [1].
Tensor sum(const Tensor& x);

/// Mean negative log-softmax of the true class over the batch. When
/// `class_mask` is given (1 = live class), masked classes get -inf logits
/// before the softmax; every label must name a live class.
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels,
                                 const std::vector<std::uint8_t>* class_mask = nullptr);

}  // namespace consense
