#include "consense/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace consense {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e < 0) throw DimensionError("negative extent in shape " + shape_to_string(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

Tensor Tensor::zeros(Shape shape, bool trainable) {
    auto d = std::make_shared<detail::TensorData>();
    d->values.assign(shape_numel(shape), 0.0f);
    d->shape = std::move(shape);
    d->trainable = trainable;
    if (trainable) d->grad.assign(d->values.size(), 0.0f);
    return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, float value, bool trainable) {
    Tensor t = zeros(std::move(shape), trainable);
    std::fill(t.d_->values.begin(), t.d_->values.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool trainable) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_to_string(shape));
    }
    auto d = std::make_shared<detail::TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->trainable = trainable;
    if (trainable) d->grad.assign(d->values.size(), 0.0f);
    return Tensor(std::move(d));
}

Tensor Tensor::uniform(Shape shape, float lo, float hi, std::mt19937& rng, bool trainable) {
    Tensor t = zeros(std::move(shape), trainable);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& v : t.d_->values) v = dist(rng);
    return t;
}

void Tensor::set_trainable(bool trainable) {
    d_->trainable = trainable;
    if (trainable) {
        if (d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), 0.0f);
    } else {
        d_->grad.clear();
        d_->grad.shrink_to_fit();
    }
}

std::span<const float> Tensor::grad() const {
    if (d_->grad.empty()) throw UsageError("tensor has no grad buffer");
    return d_->grad;
}

std::span<float> Tensor::mutable_grad() {
    if (d_->grad.empty()) throw UsageError("tensor has no grad buffer");
    return d_->grad;
}

void Tensor::zero_grad() {
    std::fill(d_->grad.begin(), d_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_to_string(shape()));
    return d_->values[0];
}

float Tensor::at(int row, int col) const {
    if (rank() != 2) throw UsageError("at(r,c) on tensor of rank " + std::to_string(rank()));
    return d_->values[static_cast<std::size_t>(row) * static_cast<std::size_t>(extent(1)) +
                      static_cast<std::size_t>(col)];
}

Tensor Tensor::clone() const {
    auto d = std::make_shared<detail::TensorData>();
    d->shape = d_->shape;
    d->values = d_->values;
    d->grad = d_->grad;
    d->trainable = d_->trainable;
    return Tensor(std::move(d));
}

GradMask GradMask::ones(Shape shape) {
    GradMask m;
    m.bits_.assign(shape_numel(shape), 1);
    m.shape_ = std::move(shape);
    return m;
}

GradMask GradMask::zeros(Shape shape) {
    GradMask m;
    m.bits_.assign(shape_numel(shape), 0);
    m.shape_ = std::move(shape);
    return m;
}

GradMask GradMask::from_values(Shape shape, const std::vector<float>& values) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("mask length " + std::to_string(values.size()) +
                             " does not match shape " + shape_to_string(shape));
    }
    GradMask m;
    m.shape_ = std::move(shape);
    m.bits_.reserve(values.size());
    for (float v : values) {
        if (v != 0.0f && v != 1.0f) {
            throw ConfigError("mask entries must be exactly 0 or 1, got " + std::to_string(v));
        }
        m.bits_.push_back(v == 1.0f ? 1 : 0);
    }
    return m;
}

void apply_mask_to_grad(Tensor& param, const GradMask& mask) {
    if (param.shape() != mask.shape()) {
        throw DimensionError("mask shape " + shape_to_string(mask.shape()) +
                             " does not match parameter shape " + shape_to_string(param.shape()));
    }
    if (!param.has_grad()) return;
    auto g = param.mutable_grad();
    auto bits = mask.bits();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (bits[i] == 0) g[i] = 0.0f;
    }
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    if (g_active_tape != nullptr) throw UsageError("a tape is already active on this thread");
    g_active_tape = this;
}

Tape::~Tape() {
    clear();
    if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() noexcept {
    return g_active_tape;
}

void Tape::record(const Tensor& out, const std::vector<Tensor>& parents, std::function<void(Node&)> backward) {
    Node node;
    node.out = out.d_;
    node.parents.reserve(parents.size());
    for (const Tensor& p : parents) node.parents.push_back(p.d_);
    node.backward = std::move(backward);
    node.out->tape_node = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
}

std::span<float> Tape::ensure_grad(const std::shared_ptr<detail::TensorData>& t) {
    if (t->grad.size() != t->values.size()) t->grad.assign(t->values.size(), 0.0f);
    return t->grad;
}

bool Tape::wants_grad(const std::shared_ptr<detail::TensorData>& t) {
    return t->trainable || t->tape_node >= 0;
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    if (loss.d_->tape_node < 0) throw UsageError("backward requires a loss recorded on this tape");

    ensure_grad(loss.d_)[0] = 1.0f;
    for (int i = loss.d_->tape_node; i >= 0; --i) {
        Node& node = nodes_[static_cast<std::size_t>(i)];
        // Nodes whose output never received a gradient are off the loss path.
        if (node.out->grad.empty()) continue;
        node.backward(node);
    }
    clear();
}

void Tape::clear() {
    for (Node& node : nodes_) {
        node.out->tape_node = -1;
        if (!node.out->trainable) {
            node.out->grad.clear();
            node.out->grad.shrink_to_fit();
        }
        for (auto& p : node.parents) {
            if (p->tape_node < 0 && !p->trainable) {
                p->grad.clear();
                p->grad.shrink_to_fit();
            }
        }
    }
    nodes_.clear();
}

}  // namespace consense
