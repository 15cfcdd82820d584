#include "consense/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "consense/fault.hpp"

namespace consense::debug {

namespace {
const char* g_injected_fault = nullptr;
}

void set_injected_fault(const char* op) { g_injected_fault = op; }
const char* injected_fault() { return g_injected_fault; }
bool fault_is(const char* op) {
    return g_injected_fault != nullptr && std::strcmp(g_injected_fault, op) == 0;
}

}  // namespace consense::debug

namespace consense {

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_to_string(t.shape()));
    }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<std::size_t>(j) * k;
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const float* arow = a + static_cast<std::size_t>(p) * m;
        const float* brow = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const float av = arow[i];
            if (av == 0.0f) continue;
            float* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct AxisView {
    std::size_t outer;
    std::size_t extent;
    std::size_t inner;
};

AxisView axis_view(const Shape& shape, int axis) {
    AxisView v{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
        v.inner *= static_cast<std::size_t>(shape[i]);
    }
    return v;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.extent(1) != b.extent(0)) {
        throw DimensionError("matmul inner extents differ: " + shape_to_string(a.shape()) + " * " +
                             shape_to_string(b.shape()));
    }
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor out = Tensor::zeros({m, n});
    gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);

    if (Tape* tape = Tape::active()) {
        tape->record(out, {a, b}, [m, k, n](Tape::Node& nd) {
            const float* g = nd.out->grad.data();
            if (Tape::wants_grad(nd.parents[0])) {
                auto ga = Tape::ensure_grad(nd.parents[0]);
                if (debug::fault_is("matmul")) {
                    std::vector<float> neg(nd.out->grad.size());
                    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -g[i];
                    gemm_nt(neg.data(), nd.parents[1]->values.data(), ga.data(), m, n, k);
                } else {
                    gemm_nt(g, nd.parents[1]->values.data(), ga.data(), m, n, k);
                }
            }
            if (Tape::wants_grad(nd.parents[1])) {
                auto gb = Tape::ensure_grad(nd.parents[1]);
                gemm_tn(nd.parents[0]->values.data(), g, gb.data(), k, m, n);
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& x) {
    require_rank2(x, "transpose");
    const int r = x.extent(0), c = x.extent(1);
    Tensor out = Tensor::zeros({c, r});
    const float* src = x.data().data();
    float* dst = out.mutable_data().data();
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            dst[static_cast<std::size_t>(j) * r + i] = src[static_cast<std::size_t>(i) * c + j];
        }
    }
    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [r, c](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const float* g = nd.out->grad.data();
            for (int j = 0; j < c; ++j) {
                for (int i = 0; i < r; ++i) {
                    gx[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add shapes differ: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.mutable_data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];

    if (Tape* tape = Tape::active()) {
        tape->record(out, {a, b}, [](Tape::Node& nd) {
            const auto& g = nd.out->grad;
            for (int p = 0; p < 2; ++p) {
                if (!Tape::wants_grad(nd.parents[static_cast<std::size_t>(p)])) continue;
                auto gp = Tape::ensure_grad(nd.parents[static_cast<std::size_t>(p)]);
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul shapes differ: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.mutable_data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];

    if (Tape* tape = Tape::active()) {
        tape->record(out, {a, b}, [](Tape::Node& nd) {
            const auto& g = nd.out->grad;
            const auto& av2 = nd.parents[0]->values;
            const auto& bv2 = nd.parents[1]->values;
            if (Tape::wants_grad(nd.parents[0])) {
                auto ga = Tape::ensure_grad(nd.parents[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (Tape::wants_grad(nd.parents[1])) {
                auto gb = Tape::ensure_grad(nd.parents[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank2(x, "add_bias");
    if (bias.rank() != 1 || bias.extent(0) != x.extent(1)) {
        throw DimensionError("add_bias expects bias [d] matching " + shape_to_string(x.shape()) +
                             ", got " + shape_to_string(bias.shape()));
    }
    const int n = x.extent(0), d = x.extent(1);
    Tensor out = Tensor::zeros(x.shape());
    const float* xv = x.data().data();
    const float* bv = bias.data().data();
    float* ov = out.mutable_data().data();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            ov[static_cast<std::size_t>(i) * d + j] = xv[static_cast<std::size_t>(i) * d + j] + bv[j];
        }
    }
    if (Tape* tape = Tape::active()) {
        tape->record(out, {x, bias}, [n, d](Tape::Node& nd) {
            const float* g = nd.out->grad.data();
            if (Tape::wants_grad(nd.parents[0])) {
                auto gx = Tape::ensure_grad(nd.parents[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
            }
            if (Tape::wants_grad(nd.parents[1])) {
                auto gb = Tape::ensure_grad(nd.parents[1]);
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < d; ++j) gb[j] += g[static_cast<std::size_t>(i) * d + j];
                }
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, float factor) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [factor](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const auto& g = nd.out->grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
    if (tensors.empty()) throw UsageError("concat of zero tensors");
    const Shape& first = tensors[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size())) {
        throw DimensionError("concat axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(first));
    }
    int total = 0;
    for (const Tensor& t : tensors) {
        if (t.rank() != static_cast<int>(first.size())) {
            throw DimensionError("concat rank mismatch: " + shape_to_string(first) + " vs " +
                                 shape_to_string(t.shape()));
        }
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (static_cast<int>(i) != axis && t.shape()[i] != first[i]) {
                throw DimensionError("concat extent mismatch off axis: " + shape_to_string(first) +
                                     " vs " + shape_to_string(t.shape()));
            }
        }
        total += t.extent(axis);
    }

    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = total;
    Tensor out = Tensor::zeros(out_shape);
    const AxisView ov = axis_view(out_shape, axis);
    float* dst = out.mutable_data().data();

    std::size_t offset = 0;  // running offset along the axis
    for (const Tensor& t : tensors) {
        const AxisView tv = axis_view(t.shape(), axis);
        const float* src = t.data().data();
        for (std::size_t o = 0; o < tv.outer; ++o) {
            std::copy_n(src + o * tv.extent * tv.inner, tv.extent * tv.inner,
                        dst + (o * ov.extent + offset) * ov.inner);
        }
        offset += tv.extent;
    }

    if (Tape* tape = Tape::active()) {
        tape->record(out, tensors, [axis, ov](Tape::Node& nd) {
            const float* g = nd.out->grad.data();
            std::size_t off = 0;
            for (auto& p : nd.parents) {
                const AxisView pv = axis_view(p->shape, axis);
                if (Tape::wants_grad(p)) {
                    auto gp = Tape::ensure_grad(p);
                    for (std::size_t o = 0; o < pv.outer; ++o) {
                        const float* gsrc = g + (o * ov.extent + off) * ov.inner;
                        float* gdst = gp.data() + o * pv.extent * pv.inner;
                        for (std::size_t i = 0; i < pv.extent * pv.inner; ++i) gdst[i] += gsrc[i];
                    }
                }
                off += pv.extent;
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x.rank()) {
        throw DimensionError("slice axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(x.shape()));
    }
    if (start < 0 || len <= 0 || start + len > x.extent(axis)) {
        throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") out of range for " + shape_to_string(x.shape()) + " axis " +
                             std::to_string(axis));
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor out = Tensor::zeros(out_shape);
    const AxisView xv = axis_view(x.shape(), axis);
    const AxisView ovw = axis_view(out_shape, axis);
    const float* src = x.data().data();
    float* dst = out.mutable_data().data();
    for (std::size_t o = 0; o < xv.outer; ++o) {
        std::copy_n(src + (o * xv.extent + static_cast<std::size_t>(start)) * xv.inner,
                    ovw.extent * ovw.inner, dst + o * ovw.extent * ovw.inner);
    }

    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [xv, ovw, start](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const float* g = nd.out->grad.data();
            for (std::size_t o = 0; o < xv.outer; ++o) {
                float* gdst = gx.data() + (o * xv.extent + static_cast<std::size_t>(start)) * xv.inner;
                const float* gsrc = g + o * ovw.extent * ovw.inner;
                for (std::size_t i = 0; i < ovw.extent * ovw.inner; ++i) gdst[i] += gsrc[i];
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    require_rank2(x, "softmax");
    if (axis != 0 && axis != 1) {
        throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(x.shape()));
    }
    const int rows = x.extent(0), cols = x.extent(1);
    const int lines = (axis == 1) ? rows : cols;
    const int line_len = (axis == 1) ? cols : rows;
    const std::size_t step = (axis == 1) ? 1 : static_cast<std::size_t>(cols);
    const std::size_t line_stride = (axis == 1) ? static_cast<std::size_t>(cols) : 1;

    Tensor out = Tensor::zeros(x.shape());
    const float* xv = x.data().data();
    float* ov = out.mutable_data().data();
    for (int l = 0; l < lines; ++l) {
        const float* in = xv + static_cast<std::size_t>(l) * line_stride;
        float* o = ov + static_cast<std::size_t>(l) * line_stride;
        float mx = -std::numeric_limits<float>::infinity();
        for (int i = 0; i < line_len; ++i) mx = std::max(mx, in[static_cast<std::size_t>(i) * step]);
        float denom = 0.0f;
        for (int i = 0; i < line_len; ++i) {
            const float e = std::exp(in[static_cast<std::size_t>(i) * step] - mx);
            o[static_cast<std::size_t>(i) * step] = e;
            denom += e;
        }
        for (int i = 0; i < line_len; ++i) o[static_cast<std::size_t>(i) * step] /= denom;
    }

    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [lines, line_len, step, line_stride](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const float* g = nd.out->grad.data();
            const float* y = nd.out->values.data();
            const bool drop_dot = debug::fault_is("softmax");
            for (int l = 0; l < lines; ++l) {
                const std::size_t base = static_cast<std::size_t>(l) * line_stride;
                float dot = 0.0f;
                for (int i = 0; i < line_len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * step;
                    dot += g[idx] * y[idx];
                }
                if (drop_dot) dot = 0.0f;
                for (int i = 0; i < line_len; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i) * step;
                    gx[idx] += y[idx] * (g[idx] - dot);
                }
            }
        });
    }
    return out;
}

Tensor tanh_op(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(xv[i]);
    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const auto& g = nd.out->grad;
            const auto& y = nd.out->values;
            if (debug::fault_is("tanh")) {
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0f - y[i]);
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0f - y[i] * y[i]);
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const auto& g = nd.out->grad;
            const auto& xv2 = nd.parents[0]->values;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv2[i] > 0.0f) gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, float rate, bool training, std::mt19937& rng) {
    if (rate < 0.0f || rate >= 1.0f) {
        throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0f) return x;

    const float keep_scale = 1.0f / (1.0f - rate);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> mask(x.size());
    for (float& m : mask) m = (u(rng) < rate) ? 0.0f : keep_scale;

    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];

    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [mask = std::move(mask)](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const auto& g = nd.out->grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& x) {
    require_rank2(x, "mean_rows");
    const int n = x.extent(0), d = x.extent(1);
    Tensor out = Tensor::zeros({1, d});
    const float* xv = x.data().data();
    float* ov = out.mutable_data().data();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) ov[j] += xv[static_cast<std::size_t>(i) * d + j];
    }
    const float inv = 1.0f / static_cast<float>(n);
    for (int j = 0; j < d; ++j) ov[j] *= inv;

    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [n, d, inv](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const float* g = nd.out->grad.data();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(i) * d + j] += g[j] * inv;
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    auto xv = x.data();
    float acc = 0.0f;
    for (float v : xv) acc += v;
    out.mutable_data()[0] = acc;
    if (Tape* tape = Tape::active()) {
        tape->record(out, {x}, [](Tape::Node& nd) {
            if (!Tape::wants_grad(nd.parents[0])) return;
            auto gx = Tape::ensure_grad(nd.parents[0]);
            const float g = nd.out->grad[0];
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels,
                                 const std::vector<std::uint8_t>* class_mask) {
    require_rank2(logits, "cross_entropy_with_logits");
    const int batch = logits.extent(0), classes = logits.extent(1);
    if (static_cast<int>(labels.size()) != batch) {
        throw DimensionError("cross_entropy got " + std::to_string(labels.size()) + " labels for batch " +
                             std::to_string(batch));
    }
    if (class_mask != nullptr && static_cast<int>(class_mask->size()) != classes) {
        throw DimensionError("class mask length " + std::to_string(class_mask->size()) +
                             " does not match " + std::to_string(classes) + " classes");
    }
    for (int i = 0; i < batch; ++i) {
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= classes) {
            throw DataError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                            " out of range for " + std::to_string(classes) + " classes");
        }
        if (class_mask != nullptr && (*class_mask)[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] == 0) {
            throw DataError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                            " names a masked class");
        }
    }

    // Masked classes get -inf logits, i.e. zero probability.
    std::vector<float> probs(static_cast<std::size_t>(batch) * static_cast<std::size_t>(classes), 0.0f);
    const float* lv = logits.data().data();
    float loss_acc = 0.0f;
    for (int i = 0; i < batch; ++i) {
        const float* row = lv + static_cast<std::size_t>(i) * classes;
        float* prow = probs.data() + static_cast<std::size_t>(i) * classes;
        float mx = -std::numeric_limits<float>::infinity();
        for (int c = 0; c < classes; ++c) {
            if (class_mask != nullptr && (*class_mask)[static_cast<std::size_t>(c)] == 0) continue;
            mx = std::max(mx, row[c]);
        }
        float denom = 0.0f;
        for (int c = 0; c < classes; ++c) {
            if (class_mask != nullptr && (*class_mask)[static_cast<std::size_t>(c)] == 0) continue;
            prow[c] = std::exp(row[c] - mx);
            denom += prow[c];
        }
        for (int c = 0; c < classes; ++c) prow[c] /= denom;
        const int y = labels[static_cast<std::size_t>(i)];
        loss_acc += std::log(denom) + mx - row[y];
    }

    Tensor out = Tensor::zeros({1});
    out.mutable_data()[0] = loss_acc / static_cast<float>(batch);

    if (Tape* tape = Tape::active()) {
        tape->record(out, {logits},
                     [batch, classes, labels, probs = std::move(probs)](Tape::Node& nd) {
                         if (!Tape::wants_grad(nd.parents[0])) return;
                         auto gx = Tape::ensure_grad(nd.parents[0]);
                         const float g = nd.out->grad[0] / static_cast<float>(batch);
                         const float onehot = debug::fault_is("cross-entropy") ? 0.0f : 1.0f;
                         for (int i = 0; i < batch; ++i) {
                             const float* prow = probs.data() + static_cast<std::size_t>(i) * classes;
                             float* grow = gx.data() + static_cast<std::size_t>(i) * classes;
                             const int y = labels[static_cast<std::size_t>(i)];
                             for (int c = 0; c < classes; ++c) {
                                 grow[c] += g * (prow[c] - (c == y ? onehot : 0.0f));
                             }
                         }
                     });
    }
    return out;
}

}  // namespace consense
