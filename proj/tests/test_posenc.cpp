#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <consense/ops.hpp>
#include <consense/posenc.hpp>

#include "helpers.hpp"

using namespace consense;
using namespace testutil;

namespace {

// Double-precision replay of the encoding: per-position softmax over
// -(p-mu)^2*e^{-2s}/2 - s, blended into the range embeddings, added to x.
struct Enc64 {
    int n, g, d;
    std::vector<double> mu, s, range, x;

    std::vector<double> weights() const {
        std::vector<double> w(static_cast<std::size_t>(n) * g);
        for (int p = 0; p < n; ++p) {
            std::vector<double> logit(static_cast<std::size_t>(g));
            double mx = -1e300;
            for (int k = 0; k < g; ++k) {
                const double diff = p - mu[static_cast<std::size_t>(k)];
                logit[static_cast<std::size_t>(k)] =
                    -diff * diff * std::exp(-2.0 * s[static_cast<std::size_t>(k)]) / 2.0 - s[static_cast<std::size_t>(k)];
                mx = std::max(mx, logit[static_cast<std::size_t>(k)]);
            }
            double z = 0.0;
            for (int k = 0; k < g; ++k) z += std::exp(logit[static_cast<std::size_t>(k)] - mx);
            for (int k = 0; k < g; ++k) {
                w[static_cast<std::size_t>(p * g + k)] = std::exp(logit[static_cast<std::size_t>(k)] - mx) / z;
            }
        }
        return w;
    }

    double loss(const std::vector<double>& coef) const {
        const auto w = weights();
        double total = 0.0;
        for (int p = 0; p < n; ++p) {
            for (int c = 0; c < d; ++c) {
                double v = x[static_cast<std::size_t>(p * d + c)];
                for (int k = 0; k < g; ++k) {
                    v += w[static_cast<std::size_t>(p * g + k)] * range[static_cast<std::size_t>(k * d + c)];
                }
                total += v * coef[static_cast<std::size_t>(p * d + c)];
            }
        }
        return total;
    }
};

}  // namespace

TEST_CASE("a single component receives all the positional weight") {
    std::mt19937 rng(1);
    GaussianRangeEncoding enc(1, 4, 32.0f, 8.0f, rng);
    Tensor w = enc.position_weights(10);
    REQUIRE(w.shape() == Shape{10, 1});
    for (int p = 0; p < 10; ++p) CHECK(w.at(p, 0) == 1.0f);
}

TEST_CASE("two components symmetric about a position share its weight equally") {
    std::mt19937 rng(2);
    GaussianRangeEncoding enc(2, 4, 16.0f, 2.0f, rng);
    auto mu = enc.mu().mutable_data();
    mu[0] = 5.0f;  // position 6 sits exactly between the two centers
    mu[1] = 7.0f;
    Tensor w = enc.position_weights(8);
    CHECK(w.at(6, 0) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(w.at(6, 1) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("initial centers sit mid-bin and sigma starts at its configured value") {
    std::mt19937 rng(3);
    GaussianRangeEncoding enc(10, 90, 270.0f, 8.0f, rng);
    Tensor mu = enc.mu();
    REQUIRE(mu.shape() == Shape{10});
    for (int k = 0; k < 10; ++k) {
        CHECK(mu.data()[static_cast<std::size_t>(k)] == doctest::Approx(13.5 + 27.0 * k).epsilon(1e-6));
    }
    for (float s : enc.log_sigma().data()) {
        CHECK(std::exp(s) == doctest::Approx(8.0).epsilon(1e-5));
    }
    CHECK(enc.position_weights(270).shape() == Shape{270, 10});
}

TEST_CASE("zero range embeddings make encoding a bit-exact identity") {
    std::mt19937 rng(4);
    GaussianRangeEncoding enc(3, 5, 12.0f, 4.0f, rng);
    auto r = enc.range_embeddings().mutable_data();
    std::fill(r.begin(), r.end(), 0.0f);
    Tensor x = Tensor::uniform({12, 5}, -2.0f, 2.0f, rng);
    CHECK(bits_equal(x, enc.encode(x)));
}

TEST_CASE("one position and one component add exactly the embedding row") {
    std::mt19937 rng(5);
    GaussianRangeEncoding enc(1, 6, 4.0f, 2.0f, rng);
    Tensor x = Tensor::uniform({1, 6}, -1.0f, 1.0f, rng);
    Tensor out = enc.encode(x);
    const auto r = enc.range_embeddings().data();
    for (int c = 0; c < 6; ++c) {
        CHECK(out.at(0, c) == doctest::Approx(x.at(0, c) + r[static_cast<std::size_t>(c)]).epsilon(1e-6));
    }
}

TEST_CASE("positional weight rows sum to one across sizes") {
    std::mt19937 rng(6);
    GaussianRangeEncoding enc(7, 3, 512.0f, 8.0f, rng);
    // Push the parameters off their symmetric defaults.
    auto mu = enc.mu().mutable_data();
    auto ls = enc.log_sigma().mutable_data();
    std::uniform_real_distribution<float> jitter(-20.0f, 20.0f);
    for (auto& m : mu) m += jitter(rng);
    for (auto& s : ls) s += jitter(rng) / 40.0f;
    for (int n : {1, 2, 64, 512}) {
        Tensor w = enc.position_weights(n);
        for (int p = 0; p < n; ++p) {
            double total = 0.0;
            for (int k = 0; k < 7; ++k) total += w.at(p, k);
            CHECK(std::abs(total - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("encoding gradients match finite differences on a 4x3 input") {
    std::mt19937 rng(7);
    GaussianRangeEncoding enc(2, 3, 4.0f, 1.5f, rng);
    Tensor x = Tensor::uniform({4, 3}, -1.0f, 1.0f, rng);
    Tensor coef = Tensor::uniform({4, 3}, -1.0f, 1.0f, rng);

    Tape tape;
    Tensor loss = sum(mul(enc.encode(x), coef));
    tape.backward(loss);

    Enc64 ref{4, 2, 3, to_double(enc.mu().data()), to_double(enc.log_sigma().data()),
              to_double(enc.range_embeddings().data()), to_double(x.data())};
    const auto c64 = to_double(coef.data());

    const auto gmu = fd_gradient(ref.mu, [&](const std::vector<double>& p) {
        Enc64 e = ref;
        e.mu = p;
        return e.loss(c64);
    });
    const auto gs = fd_gradient(ref.s, [&](const std::vector<double>& p) {
        Enc64 e = ref;
        e.s = p;
        return e.loss(c64);
    });
    const auto gr = fd_gradient(ref.range, [&](const std::vector<double>& p) {
        Enc64 e = ref;
        e.range = p;
        return e.loss(c64);
    });

    for (std::size_t i = 0; i < gmu.size(); ++i) CHECK(grad_close(enc.mu().grad()[i], gmu[i]));
    for (std::size_t i = 0; i < gs.size(); ++i) CHECK(grad_close(enc.log_sigma().grad()[i], gs[i]));
    for (std::size_t i = 0; i < gr.size(); ++i) CHECK(grad_close(enc.range_embeddings().grad()[i], gr[i]));
}

TEST_CASE("every encoding parameter receives gradient under a generic loss") {
    std::mt19937 rng(8);
    GaussianRangeEncoding enc(4, 5, 20.0f, 3.0f, rng);
    Tensor x = Tensor::uniform({9, 5}, -1.0f, 1.0f, rng);

    Tape tape;
    Tensor enc_out = enc.encode(x);
    tape.backward(sum(mul(enc_out, enc_out)));

    auto any_nonzero = [](std::span<const float> g) {
        for (float v : g) {
            if (v != 0.0f) return true;
        }
        return false;
    };
    CHECK(any_nonzero(enc.mu().grad()));
    CHECK(any_nonzero(enc.log_sigma().grad()));
    CHECK(any_nonzero(enc.range_embeddings().grad()));
}

TEST_CASE("encoding validates its configuration and input width") {
    std::mt19937 rng(9);
    CHECK_THROWS_AS(GaussianRangeEncoding(0, 4, 8.0f, 1.0f, rng), ConfigError);
    CHECK_THROWS_AS(GaussianRangeEncoding(2, 4, -1.0f, 1.0f, rng), ConfigError);
    CHECK_THROWS_AS(GaussianRangeEncoding(2, 4, 8.0f, 0.0f, rng), ConfigError);
    GaussianRangeEncoding enc(2, 4, 8.0f, 1.0f, rng);
    Tensor bad = Tensor::zeros({3, 5});
    CHECK_THROWS_AS(enc.encode(bad), DimensionError);
}
