#include "consense/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "consense/seeds.hpp"

namespace consense::verify {

namespace {

DMat dzeros(int r, int c) { return DMat{r, c, std::vector<double>(static_cast<std::size_t>(r) * c, 0.0)}; }

DMat dmatmul(const DMat& a, const DMat& b) {
    DMat out = dzeros(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int p = 0; p < a.cols; ++p) {
            const double av = a.at(i, p);
            for (int j = 0; j < b.cols; ++j) out.at(i, j) += av * b.at(p, j);
        }
    }
    return out;
}

DMat dtranspose(const DMat& a) {
    DMat out = dzeros(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    }
    return out;
}

DMat dadd(const DMat& a, const DMat& b) {
    DMat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

DMat dadd_bias(const DMat& a, const std::vector<double>& bias) {
    DMat out = a;
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) out.at(i, j) += bias[static_cast<std::size_t>(j)];
    }
    return out;
}

DMat dscale(const DMat& a, double f) {
    DMat out = a;
    for (double& x : out.v) x *= f;
    return out;
}

DMat dsoftmax_rows(const DMat& a) {
    DMat out = a;
    for (int i = 0; i < a.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < a.cols; ++j) mx = std::max(mx, out.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < a.cols; ++j) {
            out.at(i, j) = std::exp(out.at(i, j) - mx);
            denom += out.at(i, j);
        }
        for (int j = 0; j < a.cols; ++j) out.at(i, j) /= denom;
    }
    return out;
}

DMat dtanh(const DMat& a) {
    DMat out = a;
    for (double& x : out.v) x = std::tanh(x);
    return out;
}

DMat drelu(const DMat& a) {
    DMat out = a;
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return out;
}

DMat dslice_cols(const DMat& a, int start, int len) {
    DMat out = dzeros(a.rows, len);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < len; ++j) out.at(i, j) = a.at(i, start + j);
    }
    return out;
}

DMat dconcat_rows(const std::vector<DMat>& parts) {
    int rows = 0;
    for (const DMat& p : parts) rows += p.rows;
    DMat out = dzeros(rows, parts[0].cols);
    int r = 0;
    for (const DMat& p : parts) {
        std::copy(p.v.begin(), p.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(r) * out.cols);
        r += p.rows;
    }
    return out;
}

DMat dconcat_cols(const std::vector<DMat>& parts) {
    int cols = 0;
    for (const DMat& p : parts) cols += p.cols;
    DMat out = dzeros(parts[0].rows, cols);
    int off = 0;
    for (const DMat& p : parts) {
        for (int i = 0; i < p.rows; ++i) {
            for (int j = 0; j < p.cols; ++j) out.at(i, off + j) = p.at(i, j);
        }
        off += p.cols;
    }
    return out;
}

DMat dmean_rows(const DMat& a) {
    DMat out = dzeros(1, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) out.at(0, j) += a.at(i, j);
    }
    for (double& x : out.v) x /= a.rows;
    return out;
}

double dcross_entropy(const DMat& logits, const std::vector<int>& labels,
                      const std::vector<std::uint8_t>* mask = nullptr) {
    double loss = 0.0;
    for (int i = 0; i < logits.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < logits.cols; ++c) {
            if (mask != nullptr && (*mask)[static_cast<std::size_t>(c)] == 0) continue;
            mx = std::max(mx, logits.at(i, c));
        }
        double denom = 0.0;
        for (int c = 0; c < logits.cols; ++c) {
            if (mask != nullptr && (*mask)[static_cast<std::size_t>(c)] == 0) continue;
            denom += std::exp(logits.at(i, c) - mx);
        }
        loss += std::log(denom) + mx - logits.at(i, labels[static_cast<std::size_t>(i)]);
    }
    return loss / logits.rows;
}

struct Check {
    SuiteResult* out;
    void operator()(bool ok, const std::string& msg) {
        ++out->cases;
        if (!ok) {
            ++out->failures;
            out->messages.push_back(msg);
        }
    }
};

std::string fmt(double x) {
    std::ostringstream ss;
    ss.precision(6);
    ss << x;
    return ss.str();
}

}  // namespace

DMat from_tensor(const Tensor& t) {
    DMat out;
    if (t.rank() == 2) {
        out.rows = t.extent(0);
        out.cols = t.extent(1);
    } else {
        out.rows = 1;
        out.cols = static_cast<int>(t.size());
    }
    out.v.assign(t.data().begin(), t.data().end());
    return out;
}

DMat ref_attention(const DMat& x, const DMat& wq, const DMat& wk, const DMat& wv, const DMat& wo,
                   int heads, const std::vector<std::pair<DMat, DMat>>& prefixes) {
    const int d = x.cols;
    const int dk = d / heads;
    const DMat q = dmatmul(x, wq);
    const DMat k = dmatmul(x, wk);
    const DMat v = dmatmul(x, wv);
    std::vector<DMat> head_outs;
    for (int h = 0; h < heads; ++h) {
        const int off = h * dk;
        std::vector<DMat> keys, vals;
        for (const auto& [pk, pv] : prefixes) {
            keys.push_back(dslice_cols(pk, off, dk));
            vals.push_back(dslice_cols(pv, off, dk));
        }
        keys.push_back(dslice_cols(k, off, dk));
        vals.push_back(dslice_cols(v, off, dk));
        const DMat ki = dconcat_rows(keys);
        const DMat vi = dconcat_rows(vals);
        const DMat logits = dscale(dmatmul(dslice_cols(q, off, dk), dtranspose(ki)), 1.0 / std::sqrt(dk));
        head_outs.push_back(dmatmul(dsoftmax_rows(logits), vi));
    }
    return dmatmul(dconcat_cols(head_outs), wo);
}

namespace {

/// Parameter fetch with an optional single-entry bump.
DMat fetch(const Tensor& t, const Tensor* bumped, std::size_t index, double delta) {
    DMat out = from_tensor(t);
    if (bumped != nullptr && t.same_storage(*bumped)) out.v[index] += delta;
    return out;
}

std::vector<double> fetch_vec(const Tensor& t, const Tensor* bumped, std::size_t index, double delta) {
    std::vector<double> out(t.data().begin(), t.data().end());
    if (bumped != nullptr && t.same_storage(*bumped)) out[index] += delta;
    return out;
}

}  // namespace

double reference_loss(const ConSenseModel& model, const std::vector<Tensor>& xs,
                      const std::vector<int>& labels, const Tensor* bumped, std::size_t index,
                      double delta) {
    const GaussianRangeEncoding& enc = model.encoding();
    const AttentionBase& base = model.attention();
    const PrefixStack& stack = model.prefix_stack();
    const Mlp& mlp = model.mlp();

    const std::vector<double> mu = fetch_vec(enc.mu(), bumped, index, delta);
    const std::vector<double> ls = fetch_vec(enc.log_sigma(), bumped, index, delta);
    const DMat range = fetch(enc.range_embeddings(), bumped, index, delta);
    const DMat wq = fetch(base.w_q, bumped, index, delta);
    const DMat wk = fetch(base.w_k, bumped, index, delta);
    const DMat wv = fetch(base.w_v, bumped, index, delta);
    const DMat wo = fetch(base.w_o, bumped, index, delta);
    const DMat w1 = fetch(mlp.weight(0), bumped, index, delta);
    const DMat w2 = fetch(mlp.weight(1), bumped, index, delta);
    const DMat w3 = fetch(mlp.weight(2), bumped, index, delta);
    const std::vector<double> b1 = fetch_vec(mlp.bias(0), bumped, index, delta);
    const std::vector<double> b2 = fetch_vec(mlp.bias(1), bumped, index, delta);
    const std::vector<double> b3 = fetch_vec(mlp.bias(2), bumped, index, delta);
    const DMat cw = fetch(model.classifier_weight(), bumped, index, delta);
    const std::vector<double> cb = fetch_vec(model.classifier_bias(), bumped, index, delta);

    struct RefAdapter {
        PrefixKind kind;
        DMat kd, ku, vd, vu, pk, pv;
    };
    std::vector<RefAdapter> adapters;
    auto load_adapter = [&](const PrefixAdapter& a) {
        RefAdapter ra;
        ra.kind = a.kind;
        if (a.kind == PrefixKind::adapter) {
            ra.kd = fetch(a.k_down, bumped, index, delta);
            ra.ku = fetch(a.k_up, bumped, index, delta);
            ra.vd = fetch(a.v_down, bumped, index, delta);
            ra.vu = fetch(a.v_up, bumped, index, delta);
        } else {
            ra.pk = fetch(a.p_k, bumped, index, delta);
            ra.pv = fetch(a.p_v, bumped, index, delta);
        }
        adapters.push_back(std::move(ra));
    };
    if (stack.current) load_adapter(*stack.current);
    for (const PrefixAdapter& a : stack.frozen) load_adapter(a);

    const int g_count = enc.gaussians();
    DMat logits_all = dzeros(static_cast<int>(xs.size()), cw.rows);
    for (std::size_t s = 0; s < xs.size(); ++s) {
        const DMat x = from_tensor(xs[s]);
        const int n = x.rows;

        DMat glog = dzeros(n, g_count);
        for (int p = 0; p < n; ++p) {
            for (int g = 0; g < g_count; ++g) {
                const double diff = p - mu[static_cast<std::size_t>(g)];
                const double inv_var = std::exp(-2.0 * ls[static_cast<std::size_t>(g)]);
                glog.at(p, g) = -0.5 * diff * diff * inv_var - ls[static_cast<std::size_t>(g)];
            }
        }
        const DMat xe = dadd(x, dmatmul(dsoftmax_rows(glog), range));

        std::vector<std::pair<DMat, DMat>> prefixes;
        for (const RefAdapter& ra : adapters) {
            if (ra.kind == PrefixKind::adapter) {
                prefixes.emplace_back(dmatmul(dtanh(dmatmul(xe, ra.kd)), ra.ku),
                                      dmatmul(dtanh(dmatmul(xe, ra.vd)), ra.vu));
            } else {
                prefixes.emplace_back(ra.pk, ra.pv);
            }
        }

        const DMat attended = ref_attention(xe, wq, wk, wv, wo, base.heads, prefixes);
        const DMat h1 = drelu(dadd_bias(dmatmul(attended, dtranspose(w1)), b1));
        const DMat h2 = drelu(dadd_bias(dmatmul(h1, dtranspose(w2)), b2));
        const DMat h3 = dadd_bias(dmatmul(h2, dtranspose(w3)), b3);
        const DMat pooled = dmean_rows(h3);
        const DMat row = dadd_bias(dmatmul(pooled, dtranspose(cw)), cb);
        for (int c = 0; c < row.cols; ++c) logits_all.at(static_cast<int>(s), c) = row.at(0, c);
    }
    return dcross_entropy(logits_all, labels);
}

// ---------------------------------------------------------------------------
// Gradient suite
// ---------------------------------------------------------------------------

namespace {

constexpr double kFdStep = 1e-3;
constexpr double kGradTol = 1e-3;

double rel_err(double analytic, double reference) {
    return std::fabs(analytic - reference) / std::max(1.0, std::fabs(reference));
}

Tensor random_tensor(Shape shape, std::mt19937& rng, float lo = -1.5f, float hi = 1.5f,
                     bool trainable = true) {
    return Tensor::uniform(std::move(shape), lo, hi, rng, trainable);
}

/// Keeps entries away from zero so ReLU finite differences stay one-sided.
void nudge_from_zero(Tensor t, float margin) {
    for (float& x : t.mutable_data()) {
        if (std::fabs(x) < margin) x = x < 0.0f ? x - margin : x + margin;
    }
}

/// loss = sum(op_output * proj), f32 forward+backward vs f64 finite
/// differences of the replicated op. One call = one case per input tensor.
void fd_check(Check& check, const std::string& op_name, const std::vector<Tensor>& inputs,
              const std::function<Tensor()>& forward_f32,
              const std::function<double(const std::vector<std::vector<double>>&)>& forward_f64) {
    {
        Tape tape;
        Tensor loss = sum(forward_f32());
        tape.backward(loss);
    }
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        const Tensor& t = inputs[ti];
        bool ok = true;
        std::string detail;
        std::vector<std::vector<double>> args;
        for (const Tensor& u : inputs) args.emplace_back(u.data().begin(), u.data().end());
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = args[ti][i];
            args[ti][i] = saved + kFdStep;
            const double lp = forward_f64(args);
            args[ti][i] = saved - kFdStep;
            const double lm = forward_f64(args);
            args[ti][i] = saved;
            const double fd = (lp - lm) / (2.0 * kFdStep);
            const double an = t.grad()[i];
            if (rel_err(an, fd) > kGradTol) {
                ok = false;
                detail = op_name + " grad mismatch at input " + std::to_string(ti) + " entry " +
                         std::to_string(i) + ": analytic " + fmt(an) + " vs fd " + fmt(fd);
                break;
            }
        }
        check(ok, detail);
    }
    for (const Tensor& t : inputs) {
        Tensor u = t;
        u.zero_grad();
    }
}

void grads_primitives(Check& check, std::mt19937& rng) {
    for (int rep = 0; rep < 6; ++rep) {
        // matmul
        {
            Tensor a = random_tensor({3, 4}, rng);
            Tensor b = random_tensor({4, 2}, rng);
            Tensor c = random_tensor({3, 2}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "matmul", {a, b}, [&] { return mul(matmul(a, b), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         DMat ad{3, 4, in[0]}, bd{4, 2, in[1]};
                         DMat y = dmatmul(ad, bd);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < y.v.size(); ++i) acc += y.v[i] * cd.v[i];
                         return acc;
                     });
        }
        // transpose + scale
        {
            Tensor a = random_tensor({2, 5}, rng);
            Tensor c = random_tensor({5, 2}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "transpose", {a}, [&] { return mul(scale(transpose(a), 1.3f), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         DMat ad{2, 5, in[0]};
                         DMat y = dscale(dtranspose(ad), 1.3);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < y.v.size(); ++i) acc += y.v[i] * cd.v[i];
                         return acc;
                     });
        }
        // add + mul
        {
            Tensor a = random_tensor({3, 3}, rng);
            Tensor b = random_tensor({3, 3}, rng);
            Tensor c = random_tensor({3, 3}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "add-mul", {a, b}, [&] { return mul(add(a, mul(a, b)), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < in[0].size(); ++i) {
                             acc += (in[0][i] + in[0][i] * in[1][i]) * cd.v[i];
                         }
                         return acc;
                     });
        }
        // add_bias
        {
            Tensor a = random_tensor({4, 3}, rng);
            Tensor b = random_tensor({3}, rng);
            Tensor c = random_tensor({4, 3}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "add_bias", {a, b}, [&] { return mul(add_bias(a, b), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         double acc = 0.0;
                         for (int i = 0; i < 4; ++i) {
                             for (int j = 0; j < 3; ++j) {
                                 acc += (in[0][static_cast<std::size_t>(i) * 3 + j] +
                                         in[1][static_cast<std::size_t>(j)]) *
                                        cd.at(i, j);
                             }
                         }
                         return acc;
                     });
        }
        // concat + slice
        {
            Tensor a = random_tensor({2, 3}, rng);
            Tensor b = random_tensor({2, 2}, rng);
            Tensor c = random_tensor({2, 4}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "concat-slice", {a, b},
                     [&] { return mul(slice(concat({a, b}, 1), 1, 1, 4), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         DMat ad{2, 3, in[0]}, bd{2, 2, in[1]};
                         DMat cat = dconcat_cols({ad, bd});
                         DMat y = dslice_cols(cat, 1, 4);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < y.v.size(); ++i) acc += y.v[i] * cd.v[i];
                         return acc;
                     });
        }
        // softmax (both axes via transpose in the reference)
        {
            Tensor a = random_tensor({3, 5}, rng, -2.0f, 2.0f);
            Tensor c = random_tensor({3, 5}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "softmax", {a}, [&] { return mul(softmax(a, 1), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         DMat ad{3, 5, in[0]};
                         DMat y = dsoftmax_rows(ad);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < y.v.size(); ++i) acc += y.v[i] * cd.v[i];
                         return acc;
                     });
        }
        // tanh
        {
            Tensor a = random_tensor({4, 4}, rng);
            Tensor c = random_tensor({4, 4}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "tanh", {a}, [&] { return mul(tanh_op(a), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < in[0].size(); ++i) {
                             acc += std::tanh(in[0][i]) * cd.v[i];
                         }
                         return acc;
                     });
        }
        // relu (inputs nudged away from the kink)
        {
            Tensor a = random_tensor({4, 4}, rng);
            nudge_from_zero(a, 0.05f);
            Tensor c = random_tensor({4, 4}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "relu", {a}, [&] { return mul(relu(a), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < in[0].size(); ++i) {
                             acc += (in[0][i] > 0.0 ? in[0][i] : 0.0) * cd.v[i];
                         }
                         return acc;
                     });
        }
        // dropout (same seeded mask in forward and reference)
        {
            Tensor a = random_tensor({3, 4}, rng);
            Tensor c = random_tensor({3, 4}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            const unsigned dseed = rng();
            const float rate = rep % 2 == 0 ? 0.25f : 0.5f;
            fd_check(check, "dropout", {a},
                     [&] {
                         std::mt19937 drng(dseed);
                         return mul(dropout(a, rate, true, drng), c);
                     },
                     [&](const std::vector<std::vector<double>>& in) {
                         std::mt19937 drng(dseed);
                         std::uniform_real_distribution<float> u(0.0f, 1.0f);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < in[0].size(); ++i) {
                             const bool keep = !(u(drng) < rate);
                             if (keep) acc += in[0][i] / (1.0 - rate) * cd.v[i];
                         }
                         return acc;
                     });
        }
        // mean_rows + sum
        {
            Tensor a = random_tensor({5, 3}, rng);
            Tensor c = random_tensor({1, 3}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "mean_rows", {a}, [&] { return mul(mean_rows(a), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         DMat ad{5, 3, in[0]};
                         DMat y = dmean_rows(ad);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < y.v.size(); ++i) acc += y.v[i] * cd.v[i];
                         return acc;
                     });
        }
        // cross-entropy, with and without a class mask
        {
            Tensor a = random_tensor({4, 5}, rng, -2.0f, 2.0f);
            std::vector<int> labels = {0, 2, 4, 1};
            const bool use_mask = rep % 2 == 1;
            std::vector<std::uint8_t> mask = {1, 1, 1, 0, 1};
            const std::vector<std::uint8_t>* mask_ptr = use_mask ? &mask : nullptr;
            if (use_mask) labels = {0, 2, 4, 4};
            fd_check(check, "cross-entropy", {a},
                     [&] { return cross_entropy_with_logits(a, labels, mask_ptr); },
                     [&](const std::vector<std::vector<double>>& in) {
                         DMat ad{4, 5, in[0]};
                         return dcross_entropy(ad, labels, mask_ptr);
                     });
        }
        // gaussian range logits
        {
            Tensor mu = random_tensor({4}, rng, 0.0f, 7.0f);
            Tensor ls = random_tensor({4}, rng, -0.5f, 1.5f);
            Tensor c = random_tensor({6, 4}, rng, -1.0f, 1.0f, false);
            const DMat cd = from_tensor(c);
            fd_check(check, "gaussian-logits", {mu, ls},
                     [&] { return mul(gaussian_range_logits(mu, ls, 6), c); },
                     [&](const std::vector<std::vector<double>>& in) {
                         double acc = 0.0;
                         for (int p = 0; p < 6; ++p) {
                             for (int g = 0; g < 4; ++g) {
                                 const double diff = p - in[0][static_cast<std::size_t>(g)];
                                 const double s = in[1][static_cast<std::size_t>(g)];
                                 acc += (-0.5 * diff * diff * std::exp(-2.0 * s) - s) * cd.at(p, g);
                             }
                         }
                         return acc;
                     });
        }
    }
}

void grads_adam(Check& check, std::mt19937& rng) {
    Tensor p = random_tensor({6}, rng);
    std::vector<double> ref(p.data().begin(), p.data().end());
    AdamConfig cfg;
    Adam opt(cfg);
    opt.add_param(p);
    double m[6] = {0}, v[6] = {0};
    bool ok = true;
    std::string detail;
    for (int t = 1; t <= 10 && ok; ++t) {
        std::vector<float> g(6);
        for (int i = 0; i < 6; ++i) {
            g[static_cast<std::size_t>(i)] =
                0.3f * p.data()[static_cast<std::size_t>(i)] + std::sin(static_cast<float>(t + i));
        }
        {
            Tape tape;
            Tensor gt = Tensor::from_data({6}, g);
            Tensor loss = sum(mul(p, gt));
            tape.backward(loss);
        }
        opt.step();
        opt.zero_grad();
        for (int i = 0; i < 6; ++i) {
            const double gd = 0.3 * ref[static_cast<std::size_t>(i)] +
                              static_cast<double>(std::sin(static_cast<float>(t + i)));
            m[i] = 0.9 * m[i] + 0.1 * gd;
            v[i] = 0.999 * v[i] + 0.001 * gd * gd;
            const double mhat = m[i] / (1.0 - std::pow(0.9, t));
            const double vhat = v[i] / (1.0 - std::pow(0.999, t));
            ref[static_cast<std::size_t>(i)] -= 0.001 * mhat / (std::sqrt(vhat) + 1e-8);
        }
    }
    for (int i = 0; i < 6; ++i) {
        if (rel_err(p.data()[static_cast<std::size_t>(i)], ref[static_cast<std::size_t>(i)]) > 1e-5) {
            ok = false;
            detail = "adam trajectory diverged at entry " + std::to_string(i) + ": " +
                     fmt(p.data()[static_cast<std::size_t>(i)]) + " vs " +
                     fmt(ref[static_cast<std::size_t>(i)]);
        }
    }
    check(ok, detail);
}

ConSenseModel tiny_model(unsigned seed, bool with_adapter) {
    ModelConfig mcfg;
    mcfg.t_len = 8;
    mcfg.channels = 9;
    mcfg.heads = 3;
    mcfg.gaussians = 4;
    mcfg.sigma_init = 2.0f;
    mcfg.dropout = 0.0f;
    mcfg.adapter_rank = 3;
    mcfg.seed = seed;
    ConSenseModel model(mcfg, 3);
    if (with_adapter) {
        model.expand_classifier(1);
        add_task_adapter(model.prefix_stack(), 2, mcfg.channels, mcfg.adapter_rank, PrefixKind::adapter,
                         mcfg.t_len, seed + 77);
    }
    return model;
}

void grads_end_to_end(Check& check, std::mt19937& rng) {
    ConSenseModel model = tiny_model(rng(), true);
    model.set_training(true);  // dropout is 0, so eval and training agree

    std::vector<Tensor> xs;
    for (int i = 0; i < 2; ++i) {
        Tensor x = random_tensor({8, 9}, rng, -1.0f, 1.0f, false);
        nudge_from_zero(x, 0.02f);
        xs.push_back(x);
    }
    const std::vector<int> labels = {0, 3};

    {
        Tape tape;
        Tensor loss = cross_entropy_with_logits(model.forward_batch(xs), labels);
        tape.backward(loss);
    }

    std::uniform_int_distribution<int> pick(0, 1 << 20);
    for (auto& [name, t] : model.named_parameters()) {
        bool ok = true;
        std::string detail;
        for (int probe = 0; probe < 3 && ok; ++probe) {
            const std::size_t i = static_cast<std::size_t>(pick(rng)) % t.size();
            const double lp = reference_loss(model, xs, labels, &t, i, kFdStep);
            const double lm = reference_loss(model, xs, labels, &t, i, -kFdStep);
            const double fd = (lp - lm) / (2.0 * kFdStep);
            const double an = t.has_grad() ? t.grad()[i] : 0.0;
            if (rel_err(an, fd) > kGradTol) {
                ok = false;
                detail = "end-to-end grad mismatch in " + name + " entry " + std::to_string(i) +
                         ": analytic " + fmt(an) + " vs fd " + fmt(fd);
            }
        }
        check(ok, detail);
    }
    model.set_training(false);
}

SuiteResult run_grads(unsigned seed) {
    SuiteResult result{"grads", 0, 0, {}};
    Check check{&result};
    std::mt19937 rng(seed);
    grads_primitives(check, rng);
    grads_adam(check, rng);
    grads_end_to_end(check, rng);
    return result;
}

// ---------------------------------------------------------------------------
// Softmax / attention-normalization suite
// ---------------------------------------------------------------------------

SuiteResult run_softmax(unsigned seed) {
    SuiteResult result{"softmax", 0, 0, {}};
    Check check{&result};
    std::mt19937 rng(seed);

    for (int rep = 0; rep < 20; ++rep) {
        Tensor a = Tensor::uniform({5, 7}, -4.0f, 4.0f, rng);
        for (int axis : {0, 1}) {
            Tensor s = softmax(a, axis);
            const int lines = axis == 1 ? 5 : 7;
            const int len = axis == 1 ? 7 : 5;
            bool ok = true;
            for (int l = 0; l < lines && ok; ++l) {
                float total = 0.0f;
                for (int i = 0; i < len; ++i) total += axis == 1 ? s.at(l, i) : s.at(i, l);
                if (std::fabs(total - 1.0f) > 1e-5f) ok = false;
            }
            check(ok, "softmax axis " + std::to_string(axis) + " line does not sum to 1");
        }
    }

    {
        Tensor big = Tensor::from_data({1, 3}, {10000.0f, 10001.0f, 9999.0f});
        Tensor s = softmax(big, 1);
        bool ok = true;
        float total = 0.0f;
        for (int i = 0; i < 3; ++i) {
            if (!std::isfinite(s.at(0, i))) ok = false;
            total += s.at(0, i);
        }
        check(ok && std::fabs(total - 1.0f) < 1e-5f, "softmax overflows on large logits");
    }

    {
        Tensor a = Tensor::uniform({4, 6}, -2.0f, 2.0f, rng);
        Tensor shifted = Tensor::zeros({4, 6});
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 6; ++j) {
                shifted.mutable_data()[static_cast<std::size_t>(i) * 6 + j] = a.at(i, j) + 37.5f;
            }
        }
        Tensor s1 = softmax(a, 1);
        Tensor s2 = softmax(shifted, 1);
        bool ok = true;
        for (std::size_t i = 0; i < s1.size(); ++i) {
            if (std::fabs(s1.data()[i] - s2.data()[i]) > 1e-6f) ok = false;
        }
        check(ok, "softmax is not shift invariant");
    }

    // Attention rows over extended key sets.
    {
        ConSenseModel model = tiny_model(seed, true);
        Tensor x = Tensor::uniform({8, 9}, -1.0f, 1.0f, rng);
        Tensor xe = model.encoding().encode(x);
        std::vector<Tensor> rows;
        attend(xe, model.attention(), model.prefix_stack(), &rows);
        bool ok = !rows.empty();
        const int expected_keys = 8 * (1 + model.prefix_stack().adapter_count());
        for (const Tensor& w : rows) {
            if (w.extent(1) != expected_keys) ok = false;
            for (int r = 0; r < w.extent(0); ++r) {
                float total = 0.0f;
                for (int c = 0; c < w.extent(1); ++c) total += w.at(r, c);
                if (std::fabs(total - 1.0f) > 1e-5f) ok = false;
            }
        }
        check(ok, "attention rows over extended keys do not normalize");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Prefix semantics suite
// ---------------------------------------------------------------------------

double max_abs_diff(const Tensor& t, const DMat& ref) {
    double worst = 0.0;
    for (int i = 0; i < ref.rows; ++i) {
        for (int j = 0; j < ref.cols; ++j) {
            worst = std::max(worst, std::fabs(static_cast<double>(t.at(i, j)) - ref.at(i, j)));
        }
    }
    return worst;
}

SuiteResult run_prefix(unsigned seed) {
    SuiteResult result{"prefix", 0, 0, {}};
    Check check{&result};
    std::mt19937 rng(seed);

    // Plain attention equals the brute-force oracle.
    for (int heads : {1, 2, 3}) {
        AttentionBase base(6, heads, rng);
        PrefixStack empty;
        Tensor x = Tensor::uniform({5, 6}, -1.0f, 1.0f, rng);
        Tensor out = attend(x, base, empty);
        const DMat ref = ref_attention(from_tensor(x), from_tensor(base.w_q), from_tensor(base.w_k),
                                       from_tensor(base.w_v), from_tensor(base.w_o), heads, {});
        const double diff = max_abs_diff(out, ref);
        check(diff < 1e-5, "plain attention differs from oracle by " + fmt(diff) + " (heads " +
                               std::to_string(heads) + ")");
    }

    // Adapter prefix generation equals the two-matmul oracle.
    {
        PrefixAdapter a = make_prefix_adapter(2, 6, 2, PrefixKind::adapter, 3, rng());
        Tensor x = Tensor::uniform({3, 6}, -1.0f, 1.0f, rng);
        auto [pk, pv] = generate_prefixes(x, a);
        const DMat kd = from_tensor(a.k_down), ku = from_tensor(a.k_up);
        const DMat ref = dmatmul(dtanh(dmatmul(from_tensor(x), kd)), ku);
        check(max_abs_diff(pk, ref) < 1e-6, "adapter K prefix differs from oracle");
        const DMat vd = from_tensor(a.v_down), vu = from_tensor(a.v_up);
        const DMat refv = dmatmul(dtanh(dmatmul(from_tensor(x), vd)), vu);
        check(max_abs_diff(pv, refv) < 1e-6, "adapter V prefix differs from oracle");
    }

    // Zero up-projection: prefixes vanish, and attend matches an oracle with
    // explicit zero key/value rows.
    {
        AttentionBase base(6, 2, rng);
        PrefixStack stack;
        PrefixAdapter& a = add_task_adapter(stack, 2, 6, 2, PrefixKind::adapter, 4, rng());
        std::fill(a.k_up.mutable_data().begin(), a.k_up.mutable_data().end(), 0.0f);
        std::fill(a.v_up.mutable_data().begin(), a.v_up.mutable_data().end(), 0.0f);
        Tensor x = Tensor::uniform({4, 6}, -1.0f, 1.0f, rng);
        auto [pk, pv] = generate_prefixes(x, a);
        bool zeros = true;
        for (float v : pk.data()) zeros = zeros && v == 0.0f;
        for (float v : pv.data()) zeros = zeros && v == 0.0f;
        check(zeros, "zero up-projection still produced nonzero prefixes");

        Tensor out = attend(x, base, stack);
        const DMat ref = ref_attention(from_tensor(x), from_tensor(base.w_q), from_tensor(base.w_k),
                                       from_tensor(base.w_v), from_tensor(base.w_o), 2,
                                       {{dzeros(4, 6), dzeros(4, 6)}});
        const double diff = max_abs_diff(out, ref);
        check(diff < 1e-5, "zero-prefix attention differs from zero-row oracle by " + fmt(diff));
    }

    // Zero input through an adapter yields zero prefixes (odd activation).
    {
        PrefixAdapter a = make_prefix_adapter(2, 6, 2, PrefixKind::adapter, 3, rng());
        Tensor x = Tensor::zeros({3, 6});
        auto [pk, pv] = generate_prefixes(x, a);
        bool zeros = true;
        for (float v : pk.data()) zeros = zeros && v == 0.0f;
        for (float v : pv.data()) zeros = zeros && v == 0.0f;
        check(zeros, "zero input produced nonzero prefixes");
    }

    // Permuting prefix blocks leaves the output unchanged.
    {
        AttentionBase base(6, 3, rng);
        const unsigned s1 = rng(), s2 = rng();
        PrefixStack ab, ba;
        for (PrefixStack* stack : {&ab, &ba}) {
            PrefixAdapter a2 = make_prefix_adapter(2, 6, 2, PrefixKind::adapter, 5, s1);
            PrefixAdapter a3 = make_prefix_adapter(3, 6, 2, PrefixKind::adapter, 5, s2);
            a2.frozen = a3.frozen = true;
            if (stack == &ab) {
                stack->frozen.push_back(std::move(a3));
                stack->frozen.push_back(std::move(a2));
            } else {
                stack->frozen.push_back(std::move(a2));
                stack->frozen.push_back(std::move(a3));
            }
        }
        Tensor x = Tensor::uniform({5, 6}, -1.0f, 1.0f, rng);
        Tensor out1 = attend(x, base, ab);
        Tensor out2 = attend(x, base, ba);
        double diff = 0.0;
        for (std::size_t i = 0; i < out1.size(); ++i) {
            diff = std::max(diff, std::fabs(static_cast<double>(out1.data()[i]) - out2.data()[i]));
        }
        check(diff < 1e-5, "prefix block permutation changed attention output by " + fmt(diff));
    }

    // Full prefix attention (mixed adapter kinds) equals the oracle.
    {
        AttentionBase base(6, 2, rng);
        PrefixStack stack;
        PrefixAdapter direct = make_prefix_adapter(2, 6, 2, PrefixKind::random, 4, rng());
        direct.frozen = true;
        stack.frozen.push_back(std::move(direct));
        add_task_adapter(stack, 3, 6, 2, PrefixKind::adapter, 4, rng());
        Tensor x = Tensor::uniform({4, 6}, -1.0f, 1.0f, rng);

        std::vector<std::pair<DMat, DMat>> prefixes;
        auto [cpk, cpv] = generate_prefixes(x, *stack.current);
        prefixes.emplace_back(from_tensor(cpk), from_tensor(cpv));
        prefixes.emplace_back(from_tensor(stack.frozen[0].p_k), from_tensor(stack.frozen[0].p_v));
        Tensor out = attend(x, base, stack);
        const DMat ref = ref_attention(from_tensor(x), from_tensor(base.w_q), from_tensor(base.w_k),
                                       from_tensor(base.w_v), from_tensor(base.w_o), 2, prefixes);
        const double diff = max_abs_diff(out, ref);
        check(diff < 1e-5, "stacked prefix attention differs from oracle by " + fmt(diff));
    }

    // Protocol rules.
    {
        PrefixStack stack;
        add_task_adapter(stack, 2, 6, 2, PrefixKind::adapter, 4, 1);
        bool threw = false;
        try {
            add_task_adapter(stack, 3, 6, 2, PrefixKind::adapter, 4, 2);
        } catch (const ProtocolError&) {
            threw = true;
        }
        check(threw, "second trainable adapter was allowed");
        freeze_current(stack);
        check(stack.frozen.size() == 1 && !stack.current, "freeze_current did not move the adapter");
        threw = false;
        try {
            freeze_current(stack);
        } catch (const ProtocolError&) {
            threw = true;
        }
        check(threw, "freeze_current without a trainable adapter was allowed");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Freeze suite
// ---------------------------------------------------------------------------

struct MiniBench {
    CsiDataset data;
    std::vector<TaskData> tasks;
};

MiniBench mini_benchmark(unsigned seed) {
    MiniBench mb;
    mb.data = generate_synthetic(6, 6, 16, 6, seed, 0.3f);
    TaskSplitSpec spec;
    spec.class_counts = {2, 2, 2};
    spec.seed = seed;
    mb.tasks = split_tasks(mb.data, spec);
    return mb;
}

ConSenseModel mini_model(unsigned seed, int initial_classes) {
    ModelConfig mcfg;
    mcfg.t_len = 16;
    mcfg.channels = 6;
    mcfg.heads = 3;
    mcfg.gaussians = 3;
    mcfg.sigma_init = 2.0f;
    mcfg.dropout = 0.1f;
    mcfg.adapter_rank = 2;
    mcfg.seed = seed;
    return ConSenseModel(mcfg, initial_classes);
}

SessionConfig mini_session(unsigned seed, float epsilon) {
    SessionConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 4;
    cfg.epsilon = epsilon;
    cfg.seed = seed;
    return cfg;
}

std::vector<float> snapshot(const Tensor& t) {
    return std::vector<float>(t.data().begin(), t.data().end());
}

bool bits_equal(const Tensor& t, const std::vector<float>& snap) {
    if (t.size() != snap.size()) return false;
    return std::equal(t.data().begin(), t.data().end(), snap.begin());
}

SuiteResult run_freeze(unsigned seed) {
    SuiteResult result{"freeze", 0, 0, {}};
    Check check{&result};

    MiniBench mb = mini_benchmark(seed);
    {
        ConSenseModel model = mini_model(seed + 1, 2);
        ClassMap classes;
        ActivationProfile prof = train_initial(model, mb.data, mb.tasks[0], mini_session(seed + 2, 0.05f),
                                               classes);

        const std::vector<std::vector<float>> base_snap = {
            snapshot(model.attention().w_q), snapshot(model.attention().w_k),
            snapshot(model.attention().w_v), snapshot(model.attention().w_o)};

        // Session 2.
        std::vector<std::vector<float>> mlp_snap;
        for (Tensor t : model.mlp().parameters()) mlp_snap.push_back(snapshot(t));
        FreezeMaskSet masks2;
        prof = train_incremental(model, mb.data, mb.tasks[1], mini_session(seed + 3, 0.05f), classes,
                                 prof, true, true, &masks2);

        bool base_ok = bits_equal(model.attention().w_q, base_snap[0]) &&
                       bits_equal(model.attention().w_k, base_snap[1]) &&
                       bits_equal(model.attention().w_v, base_snap[2]) &&
                       bits_equal(model.attention().w_o, base_snap[3]);
        check(base_ok, "attention base changed during session 2");

        // Masked rows must be bit-identical; order: w1,b1,w2,b2,w3,b3.
        bool masked_ok = true;
        for (int l = 0; l < 3; ++l) {
            const Tensor w = model.mlp().weight(l);
            const Tensor b = model.mlp().bias(l);
            const auto& w_pre = mlp_snap[static_cast<std::size_t>(2 * l)];
            const auto& b_pre = mlp_snap[static_cast<std::size_t>(2 * l + 1)];
            const auto wbits = masks2.weight[static_cast<std::size_t>(l)].bits();
            const auto bbits = masks2.bias[static_cast<std::size_t>(l)].bits();
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (wbits[i] == 0 && w.data()[i] != w_pre[i]) masked_ok = false;
            }
            for (std::size_t i = 0; i < b.size(); ++i) {
                if (bbits[i] == 0 && b.data()[i] != b_pre[i]) masked_ok = false;
            }
        }
        check(masked_ok, "masked rows moved during session 2");

        // Session 3: the session-2 adapter must stay frozen.
        std::vector<std::vector<float>> adapter_snap;
        for (Tensor t : model.prefix_stack().frozen[0].parameters()) adapter_snap.push_back(snapshot(t));
        prof = train_incremental(model, mb.data, mb.tasks[2], mini_session(seed + 4, 0.05f), classes,
                                 prof, true, true);

        base_ok = bits_equal(model.attention().w_q, base_snap[0]) &&
                  bits_equal(model.attention().w_o, base_snap[3]);
        check(base_ok, "attention base changed during session 3");

        // frozen[1] is the session-2 adapter after session 3 (newest first).
        const PrefixAdapter& old_adapter = model.prefix_stack().frozen[1];
        bool adapter_ok = old_adapter.task_id == 2;
        const auto old_params = old_adapter.parameters();
        for (std::size_t i = 0; i < old_params.size(); ++i) {
            if (!bits_equal(old_params[i], adapter_snap[i])) adapter_ok = false;
        }
        check(adapter_ok, "frozen session-2 adapter changed during session 3");
        check(model.prefix_stack().frozen.size() == 2 && !model.prefix_stack().current,
              "adapter count after session 3 is not 2");
    }

    // Epsilon = infinity freezes the whole MLP bit-exactly.
    {
        ConSenseModel model = mini_model(seed + 11, 2);
        ClassMap classes;
        ActivationProfile prof = train_initial(model, mb.data, mb.tasks[0], mini_session(seed + 12, 0.0f),
                                               classes);
        std::vector<std::vector<float>> mlp_snap;
        for (Tensor t : model.mlp().parameters()) mlp_snap.push_back(snapshot(t));
        const float inf = std::numeric_limits<float>::infinity();
        prof = train_incremental(model, mb.data, mb.tasks[1], mini_session(seed + 13, inf), classes,
                                 prof, true, true);
        bool ok = true;
        const auto params = model.mlp().parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!bits_equal(params[i], mlp_snap[i])) ok = false;
        }
        check(ok, "MLP moved despite an infinite stability threshold");
    }

    // 50 optimizer steps cannot move a frozen tensor.
    {
        std::mt19937 rng(seed);
        Tensor frozen_w = Tensor::uniform({4, 4}, -1.0f, 1.0f, rng, true);
        Tensor live_w = Tensor::uniform({4, 4}, -1.0f, 1.0f, rng, true);
        frozen_w.set_trainable(false);
        const std::vector<float> snap = snapshot(frozen_w);
        Adam opt{AdamConfig{}};
        opt.add_param(live_w);
        for (int step = 0; step < 50; ++step) {
            Tape tape;
            Tensor y = matmul(frozen_w, live_w);
            Tensor loss = sum(mul(y, y));
            tape.backward(loss);
            opt.step();
            opt.zero_grad();
        }
        check(bits_equal(frozen_w, snap), "non-trainable tensor moved under optimization");
        check(!bits_equal(live_w, snapshot(frozen_w)), "trainable tensor failed to move");
    }

    // Protocol rules around freezing.
    {
        std::mt19937 rng(seed);
        AttentionBase base(6, 2, rng);
        freeze_base(base);
        bool threw = false;
        try {
            freeze_base(base);
        } catch (const ProtocolError&) {
            threw = true;
        }
        check(threw, "double freeze_base was allowed");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Selective-retraining suite
// ---------------------------------------------------------------------------

SuiteResult run_selective(unsigned seed) {
    SuiteResult result{"selective", 0, 0, {}};
    Check check{&result};
    std::mt19937 rng(seed);

    // Monotonicity in epsilon over 1000 random profile pairs.
    {
        std::uniform_real_distribution<float> val(-2.0f, 2.0f);
        std::uniform_real_distribution<float> eps_dist(0.0f, 1.5f);
        int bad = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            ActivationProfile cur, prev;
            cur.session = 2;
            prev.session = 1;
            const std::array<int, 3> widths{5, 7, 3};
            for (int l = 0; l < 3; ++l) {
                for (int i = 0; i < widths[static_cast<std::size_t>(l)]; ++i) {
                    cur.mean[static_cast<std::size_t>(l)].push_back(val(rng));
                    prev.mean[static_cast<std::size_t>(l)].push_back(val(rng));
                }
            }
            float e1 = eps_dist(rng), e2 = eps_dist(rng);
            if (e1 > e2) std::swap(e1, e2);
            const auto s1 = stable_set(cur, prev, e1);
            const auto s2 = stable_set(cur, prev, e2);
            for (int l = 0; l < 3; ++l) {
                if (!std::includes(s2[static_cast<std::size_t>(l)].begin(),
                                   s2[static_cast<std::size_t>(l)].end(),
                                   s1[static_cast<std::size_t>(l)].begin(),
                                   s1[static_cast<std::size_t>(l)].end())) {
                    ++bad;
                }
            }
            ++result.cases;
        }
        if (bad > 0) {
            ++result.failures;
            result.messages.push_back("stable_set is not monotone in epsilon (" + std::to_string(bad) +
                                      " violations)");
        }
    }

    // Handmade stability examples.
    {
        ActivationProfile cur, prev;
        cur.session = 2;
        prev.session = 1;
        cur.mean = {{std::vector<float>{1.0f, 2.0f}, std::vector<float>{1.0f}, std::vector<float>{1.0f}}};
        prev.mean = {{std::vector<float>{1.0f, 2.5f}, std::vector<float>{1.0f}, std::vector<float>{1.0f}}};
        const auto s = stable_set(cur, prev, 0.3f);
        check(s[0] == std::vector<int>{0} && s[1] == std::vector<int>{0} && s[2] == std::vector<int>{0},
              "handmade stable set is wrong");
        const auto all = stable_set(cur, prev, std::numeric_limits<float>::infinity());
        check(all[0].size() == 2, "infinite threshold missed a neuron");
        const auto none_mismatch = stable_set(cur, cur, 0.0f);
        check(none_mismatch[0].size() == 2, "identical profiles not fully stable at epsilon 0");
    }

    // Mask construction examples.
    {
        std::mt19937 mrng(seed);
        Mlp mlp(3, 2, 2, 3, mrng);
        std::array<std::vector<int>, 3> none{};
        FreezeMaskSet m = build_masks(none, mlp);
        bool all_ones = true;
        for (int l = 0; l < 3; ++l) {
            for (auto b : m.weight[static_cast<std::size_t>(l)].bits()) all_ones = all_ones && b == 1;
            for (auto b : m.bias[static_cast<std::size_t>(l)].bits()) all_ones = all_ones && b == 1;
        }
        check(all_ones, "empty stable sets should give all-ones masks");

        std::array<std::vector<int>, 3> first{{std::vector<int>{0}, {}, {}}};
        m = build_masks(first, mlp);
        const auto bits = m.weight[0].bits();
        check(bits[0] == 0 && bits[1] == 0 && bits[2] == 0 && bits[3] == 1 && bits[4] == 1 &&
                  bits[5] == 1 && m.bias[0].bits()[0] == 0 && m.bias[0].bits()[1] == 1,
              "single stable neuron mask is wrong");

        bool threw = false;
        try {
            std::array<std::vector<int>, 3> bad{{std::vector<int>{5}, {}, {}}};
            build_masks(bad, mlp);
        } catch (const ProtocolError&) {
            threw = true;
        }
        check(threw, "out-of-range stable index was allowed");
    }

    // Epsilon 0 with strictly changed profiles trains exactly like a
    // mask-free run (same seeds everywhere). The precondition needs every
    // hidden neuron alive on both tasks' data (a dead neuron keeps an
    // exactly-zero mean), so both twins get their hidden biases shifted
    // positive before training; a seed search backs that up.
    {
        const auto wake_hidden = [](ConSenseModel& m) {
            for (int l = 0; l < 2; ++l) {
                for (float& b : m.mlp().bias(l).mutable_data()) b += 1.0f;
            }
        };
        bool found = false;
        for (unsigned cand = 0; cand < 8 && !found; ++cand) {
            const unsigned s = seed + 5 + 1009 * cand;
            MiniBench mb = mini_benchmark(s);
            ConSenseModel with_masks = mini_model(s + 1, 2);
            wake_hidden(with_masks);
            ClassMap c1;
            ActivationProfile p1 = train_initial(with_masks, mb.data, mb.tasks[0],
                                                 mini_session(s + 2, 0.0f), c1);
            FreezeMaskSet masks;
            train_incremental(with_masks, mb.data, mb.tasks[1], mini_session(s + 3, 0.0f), c1, p1,
                              true, true, &masks);
            bool all_ones = true;
            for (int l = 0; l < 3; ++l) {
                for (auto b : masks.weight[static_cast<std::size_t>(l)].bits()) all_ones = all_ones && b == 1;
                for (auto b : masks.bias[static_cast<std::size_t>(l)].bits()) all_ones = all_ones && b == 1;
            }
            if (!all_ones) continue;
            found = true;

            ConSenseModel without = mini_model(s + 1, 2);
            wake_hidden(without);
            ClassMap c2;
            ActivationProfile p2 = train_initial(without, mb.data, mb.tasks[0],
                                                 mini_session(s + 2, 0.0f), c2);
            train_incremental(without, mb.data, mb.tasks[1], mini_session(s + 3, 0.0f), c2, p2, true,
                              false);

            bool identical = true;
            const auto pa = with_masks.named_parameters();
            const auto pb = without.named_parameters();
            if (pa.size() != pb.size()) identical = false;
            for (std::size_t i = 0; identical && i < pa.size(); ++i) {
                identical = pa[i].first == pb[i].first &&
                            std::equal(pa[i].second.data().begin(), pa[i].second.data().end(),
                                       pb[i].second.data().begin());
            }
            check(identical, "epsilon-0 trajectory differs from the mask-free run");
        }
        check(found, "could not construct a run with strictly changed activation profiles");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Metrics suite
// ---------------------------------------------------------------------------

SuiteResult run_metrics(unsigned seed) {
    SuiteResult result{"metrics", 0, 0, {}};
    Check check{&result};
    std::mt19937 rng(seed);

    {
        MetricsRecord rec;
        const std::vector<double> at{100.0, 98.33, 91.67, 88.10, 80.21};
        for (std::size_t t = 0; t < at.size(); ++t) {
            std::vector<double> row(t + 1, 0.0);
            rec.add_session(std::move(row), at[t]);
        }
        const double avg = average_accuracy(rec);
        check(std::fabs(avg - 91.66) <= 0.01,
              "five-session average accuracy is " + fmt(avg) + ", expected 91.66 +- 0.01");
    }

    {
        MetricsRecord rec;
        rec.add_session({0.8}, 0.8);
        rec.add_session({0.8, 0.8}, 0.8);
        rec.add_session({0.8, 0.8, 0.8}, 0.8);
        rec.add_session({0.8, 0.8, 0.8, 0.8}, 0.8);
        check(std::fabs(average_accuracy(rec) - 0.8) < 1e-12, "constant record mean is off");
        check(std::fabs(average_forgetting(rec)) < 1e-12, "constant columns should have zero forgetting");
    }

    {
        MetricsRecord rec;
        rec.add_session({0.9}, 0.9);
        rec.add_session({0.6, 0.95}, 0.7);
        check(std::fabs(average_forgetting(rec) - 0.3) < 1e-12, "two-task forgetting should be 0.3");
    }

    // Random matrices against an independent exhaustive recomputation.
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 3 + static_cast<int>(rng() % 3);
        MetricsRecord rec;
        std::uniform_real_distribution<double> acc(0.0, 1.0);
        for (int m = 1; m <= n; ++m) {
            std::vector<double> row;
            for (int j = 0; j < m; ++j) row.push_back(acc(rng));
            rec.add_session(std::move(row), acc(rng));
        }
        double expected = 0.0;
        for (int j = 1; j <= n - 1; ++j) {
            double best = -1e9;
            for (int m = j; m <= n - 1; ++m) {
                best = std::max(best, rec.alpha[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j - 1)] -
                                          rec.alpha[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(j - 1)]);
            }
            expected += best;
        }
        expected /= n - 1;
        check(std::fabs(average_forgetting(rec) - expected) < 1e-12,
              "forgetting differs from the exhaustive oracle");
    }

    {
        MetricsRecord rec;
        rec.add_session({1.0}, 1.0);
        bool threw = false;
        try {
            average_forgetting(rec);
        } catch (const ProtocolError&) {
            threw = true;
        }
        check(threw, "single-session forgetting should be a protocol error");
        check(std::fabs(average_accuracy(rec) - 1.0) < 1e-12, "single-session average is its accuracy");

        MetricsRecord empty;
        threw = false;
        try {
            average_accuracy(empty);
        } catch (const ProtocolError&) {
            threw = true;
        }
        check(threw, "empty record average should be a protocol error");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Data suite
// ---------------------------------------------------------------------------

SuiteResult run_data(unsigned seed) {
    SuiteResult result{"data", 0, 0, {}};
    Check check{&result};
    namespace fs = std::filesystem;

    // Determinism and zero-noise degeneracy.
    {
        const CsiDataset a = generate_synthetic(4, 3, 12, 5, seed, 0.2f);
        const CsiDataset b = generate_synthetic(4, 3, 12, 5, seed, 0.2f);
        check(a.data == b.data && a.labels == b.labels, "generation is not seed-deterministic");

        const CsiDataset c = generate_synthetic(4, 3, 12, 5, seed, 0.0f);
        bool identical = true;
        const std::size_t n = c.sample_floats();
        for (int cls = 0; cls < 4; ++cls) {
            const float* first = c.data.data() + n * static_cast<std::size_t>(cls * 3);
            for (int s = 1; s < 3; ++s) {
                const float* other = c.data.data() + n * static_cast<std::size_t>(cls * 3 + s);
                if (!std::equal(first, first + n, other)) identical = false;
            }
        }
        check(identical, "zero-noise samples of one class differ");

        bool threw = false;
        try {
            generate_synthetic(1, 3, 12, 5, seed, 0.1f);
        } catch (const UsageError&) {
            threw = true;
        }
        check(threw, "single-class generation was allowed");
    }

    // Nearest-template classification is perfect at low noise.
    {
        const CsiDataset noisy = generate_synthetic(8, 4, 64, 16, seed + 1, 0.1f);
        const CsiDataset clean = generate_synthetic(8, 4, 64, 16, seed + 1, 0.0f);
        const std::size_t n = noisy.sample_floats();
        int correct = 0;
        for (int i = 0; i < noisy.count(); ++i) {
            const float* x = noisy.data.data() + n * static_cast<std::size_t>(i);
            int best = -1;
            double best_dist = 0.0;
            for (int cls = 0; cls < 8; ++cls) {
                const float* tmpl = clean.data.data() + n * static_cast<std::size_t>(cls * 4);
                double dist = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double diff = static_cast<double>(x[j]) - tmpl[j];
                    dist += diff * diff;
                }
                if (best < 0 || dist < best_dist) {
                    best = cls;
                    best_dist = dist;
                }
            }
            if (best == noisy.labels[static_cast<std::size_t>(i)]) ++correct;
        }
        check(correct == noisy.count(), "nearest-template classification is not perfect: " +
                                            std::to_string(correct) + "/" +
                                            std::to_string(noisy.count()));
    }

    // Round-trip and format validation.
    {
        const fs::path dir = fs::temp_directory_path() / ("consense-verify-" + std::to_string(seed));
        fs::create_directories(dir);
        const std::string base = (dir / "ds").string();
        const CsiDataset ds = generate_synthetic(3, 4, 8, 4, seed + 2, 0.1f);
        save_dataset(ds, base);
        const CsiDataset loaded = load_dataset(base);
        check(loaded.data == ds.data && loaded.labels == ds.labels && loaded.name == ds.name,
              "dataset round-trip changed content");

        // Re-save under the same basename (the manifest embeds it).
        fs::create_directories(dir / "again");
        const std::string base2 = (dir / "again" / "ds").string();
        save_dataset(loaded, base2);
        auto read_all = [](const std::string& p) {
            std::ifstream in(p, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        };
        check(read_all(base + ".json") == read_all(base2 + ".json") &&
                  read_all(base + ".f32") == read_all(base2 + ".f32"),
              "save-load-save is not byte-identical");

        // Truncated blob.
        {
            fs::copy_file(base + ".json", (dir / "trunc.json"), fs::copy_options::overwrite_existing);
            std::string blob = read_all(base + ".f32");
            std::ofstream out((dir / "trunc.f32"), std::ios::binary | std::ios::trunc);
            out.write(blob.data(), static_cast<std::streamsize>(blob.size() / 2));
            out.close();
            bool threw = false;
            try {
                load_dataset((dir / "trunc").string());
            } catch (const FormatError&) {
                threw = true;
            }
            check(threw, "truncated blob loaded without error");
        }
        // Corrupt manifest.
        {
            std::ofstream out((dir / "bad.json"), std::ios::trunc);
            out << "{ not json";
            out.close();
            fs::copy_file(base + ".f32", (dir / "bad.f32"), fs::copy_options::overwrite_existing);
            bool threw = false;
            try {
                load_dataset((dir / "bad").string());
            } catch (const FormatError&) {
                threw = true;
            }
            check(threw, "corrupt manifest loaded without error");
        }
        fs::remove_all(dir);
    }

    // Task splitting structure.
    {
        const CsiDataset ds = generate_synthetic(6, 5, 8, 4, seed + 3, 0.1f);
        TaskSplitSpec spec;
        spec.class_counts = {2, 2, 2};
        spec.seed = seed;
        for (bool shuffled : {false, true}) {
            spec.shuffle_classes = shuffled;
            const auto tasks = split_tasks(ds, spec);
            std::vector<int> seen_classes;
            bool ok = tasks.size() == 3;
            for (const TaskData& t : tasks) {
                for (int c : t.classes) seen_classes.push_back(c);
                std::vector<int> merged = t.train;
                merged.insert(merged.end(), t.test.begin(), t.test.end());
                std::sort(merged.begin(), merged.end());
                if (std::adjacent_find(merged.begin(), merged.end()) != merged.end()) ok = false;
                if (t.train.size() != 8 || t.test.size() != 2) ok = false;  // 5 per class -> 4:1
            }
            std::sort(seen_classes.begin(), seen_classes.end());
            for (int c = 0; c < 6; ++c) {
                if (seen_classes[static_cast<std::size_t>(c)] != c) ok = false;
            }
            check(ok, std::string("task split structure is wrong (shuffled=") +
                          (shuffled ? "true" : "false") + ")");
        }

        TaskSplitSpec bad;
        bad.class_counts = {2, 2};
        bool threw = false;
        try {
            split_tasks(ds, bad);
        } catch (const UsageError&) {
            threw = true;
        }
        check(threw, "mismatched split sum was allowed");
    }
    return result;
}

}  // namespace

std::vector<std::string> suite_names() {
    return {"grads", "softmax", "freeze", "prefix", "selective", "metrics", "data"};
}

SuiteResult run_suite(const std::string& name, unsigned seed) {
    if (name == "grads") return run_grads(seed);
    if (name == "softmax") return run_softmax(seed);
    if (name == "freeze") return run_freeze(seed);
    if (name == "prefix") return run_prefix(seed);
    if (name == "selective") return run_selective(seed);
    if (name == "metrics") return run_metrics(seed);
    if (name == "data") return run_data(seed);
    throw ConfigError("unknown verification suite '" + name + "'");
}

std::vector<SuiteResult> run_all(unsigned seed) {
    std::vector<SuiteResult> results;
    for (const std::string& name : suite_names()) results.push_back(run_suite(name, seed));
    return results;
}

}  // namespace consense::verify
