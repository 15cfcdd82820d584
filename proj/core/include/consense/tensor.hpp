#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "consense/errors.hpp"

namespace consense {

using Shape = std::vector<int>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;  // allocated iff trainable, or transiently during backward
    bool trainable = false;
    int tape_node = -1;  // index into the active tape, -1 when not recorded
};

}  // namespace detail

/// Dense row-major float32 tensor. Copying a Tensor copies the handle, not
/// the storage; ops never mutate their inputs. Trainable tensors own a grad
/// buffer of the same shape.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool trainable = false);
    static Tensor full(Shape shape, float value, bool trainable = false);
    static Tensor from_data(Shape shape, std::vector<float> values, bool trainable = false);
    /// Entries drawn iid from U(lo, hi).
    static Tensor uniform(Shape shape, float lo, float hi, std::mt19937& rng, bool trainable = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int extent(int axis) const { return d_->shape.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const { return d_->values.size(); }

    std::span<const float> data() const { return d_->values; }
    std::span<float> mutable_data() { return d_->values; }

    bool trainable() const { return d_->trainable; }
    void set_trainable(bool trainable);

    bool has_grad() const { return !d_->grad.empty(); }
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    /// Value of a rank-anything single-element tensor.
    float item() const;

    float at(int row, int col) const;

    /// Deep copy of values (and grad, if present) into fresh storage.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  private:
    friend class Tape;
    explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<detail::TensorData> d_;
};

/// Per-parameter binary freeze mask; 1 = update, 0 = frozen.
class GradMask {
  public:
    GradMask() = default;
    /// All-ones mask of the given shape.
    static GradMask ones(Shape shape);
    static GradMask zeros(Shape shape);
    /// Validates that every entry is exactly 0 or 1.
    static GradMask from_values(Shape shape, const std::vector<float>& values);

    const Shape& shape() const { return shape_; }
    std::span<const std::uint8_t> bits() const { return bits_; }
    std::span<std::uint8_t> mutable_bits() { return bits_; }
    std::size_t size() const { return bits_.size(); }
    bool empty() const { return bits_.empty(); }

  private:
    Shape shape_;
    std::vector<std::uint8_t> bits_;
};

/// Zeroes grad entries of `param` wherever `mask` is 0. Call between
/// backward() and the optimizer step.
void apply_mask_to_grad(Tensor& param, const GradMask& mask);

/// Ordered record of the primitive ops of one forward pass. Constructing a
/// Tape makes it the active tape for the current thread; ops executed while
/// a tape is active record themselves onto it. Single-owner: nesting tapes
/// on one thread is a usage error.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() noexcept;

    struct Node {
        std::shared_ptr<detail::TensorData> out;
        std::vector<std::shared_ptr<detail::TensorData>> parents;
        // Reads out->grad, accumulates into parents' grads.
        std::function<void(Node&)> backward;
    };

    /// Records `out = f(parents)` with its gradient rule. Ops call this; the
    /// hook is public so modules can define their own primitives.
    void record(const Tensor& out, const std::vector<Tensor>& parents, std::function<void(Node&)> backward);

    /// Reverse sweep from a scalar loss: accumulates grads into every
    /// trainable leaf reachable from it, then clears the tape.
    void backward(const Tensor& loss);

    void clear();
    std::size_t size() const { return nodes_.size(); }

    // Grad buffer management used by backward rules.
    static std::span<float> ensure_grad(const std::shared_ptr<detail::TensorData>& t);
    static bool wants_grad(const std::shared_ptr<detail::TensorData>& t);

  private:
    std::vector<Node> nodes_;
};

}  // namespace consense
