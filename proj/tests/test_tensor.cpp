#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <consense/ops.hpp>
#include <consense/tensor.hpp>

#include "helpers.hpp"

using namespace consense;
using namespace testutil;

namespace {

Tensor rand2d(int r, int c, std::mt19937& rng, bool trainable = false) {
    return Tensor::uniform({r, c}, -1.0f, 1.0f, rng, trainable);
}

}  // namespace

TEST_CASE("matmul by identity returns the input values") {
    std::mt19937 rng(7);
    Tensor a = rand2d(4, 4, rng);
    std::vector<float> eye(16, 0.0f);
    for (int i = 0; i < 4; ++i) eye[static_cast<std::size_t>(i * 4 + i)] = 1.0f;
    Tensor out = matmul(a, Tensor::from_data({4, 4}, eye));
    CHECK(bits_equal(a, out));
}

TEST_CASE("matmul hand example [[1,2]]*[[3],[4]] = [[11]]") {
    Tensor a = Tensor::from_data({1, 2}, {1.0f, 2.0f});
    Tensor b = Tensor::from_data({2, 1}, {3.0f, 4.0f});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.item() == doctest::Approx(11.0).epsilon(1e-7));
}

TEST_CASE("matmul inner extent mismatch raises a dimension error") {
    std::mt19937 rng(1);
    CHECK_THROWS_AS(matmul(rand2d(2, 3, rng), rand2d(4, 2, rng)), DimensionError);
}

TEST_CASE("matmul gradients match finite differences through a nonlinearity") {
    std::mt19937 rng(11);
    Tensor a = rand2d(4, 5, rng, true);
    Tensor b = rand2d(5, 3, rng, true);

    Tape tape;
    Tensor loss = sum(tanh_op(matmul(a, b)));
    tape.backward(loss);

    const auto a64 = to_double(a.data());
    const auto b64 = to_double(b.data());
    auto loss64 = [&](const std::vector<double>& av, const std::vector<double>& bv) {
        double total = 0.0;
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 5; ++k) acc += av[static_cast<std::size_t>(i * 5 + k)] * bv[static_cast<std::size_t>(k * 3 + j)];
                total += std::tanh(acc);
            }
        }
        return total;
    };
    const auto ga = fd_gradient(a64, [&](const std::vector<double>& p) { return loss64(p, b64); });
    const auto gb = fd_gradient(b64, [&](const std::vector<double>& p) { return loss64(a64, p); });
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK(grad_close(a.grad()[i], ga[i]));
    for (std::size_t i = 0; i < gb.size(); ++i) CHECK(grad_close(b.grad()[i], gb[i]));
}

TEST_CASE("softmax of equal logits is uniform") {
    Tensor x = Tensor::from_data({1, 2}, {0.0f, 0.0f});
    Tensor s = softmax(x, 1);
    CHECK(s.at(0, 0) == doctest::Approx(0.5));
    CHECK(s.at(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("softmax survives huge logits without overflow") {
    Tensor x = Tensor::from_data({1, 2}, {1000.0f, 1000.0f});
    Tensor s = softmax(x, 1);
    CHECK(std::isfinite(s.at(0, 0)));
    CHECK(s.at(0, 0) == doctest::Approx(0.5));
    CHECK(s.at(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("softmax values match a double-precision reference") {
    Tensor x = Tensor::from_data({1, 3}, {1.0f, 2.0f, 3.0f});
    Tensor s = softmax(x, 1);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j) {
        CHECK(rel_err(s.at(0, j), std::exp(1.0 + j) / z) < 1e-6);
    }
}

TEST_CASE("softmax rows sum to one for random inputs on both axes") {
    std::mt19937 rng(23);
    Tensor x = Tensor::uniform({6, 9}, -5.0f, 5.0f, rng);
    Tensor rows = softmax(x, 1);
    for (int i = 0; i < 6; ++i) {
        double total = 0.0;
        for (int j = 0; j < 9; ++j) total += rows.at(i, j);
        CHECK(std::abs(total - 1.0) < 1e-5);
    }
    Tensor cols = softmax(x, 0);
    for (int j = 0; j < 9; ++j) {
        double total = 0.0;
        for (int i = 0; i < 6; ++i) total += cols.at(i, j);
        CHECK(std::abs(total - 1.0) < 1e-5);
    }
}

TEST_CASE("softmax gradients match finite differences") {
    std::mt19937 rng(29);
    Tensor x = rand2d(2, 4, rng, true);
    Tensor w = rand2d(2, 4, rng);  // fixed mixing weights make the loss generic

    Tape tape;
    Tensor loss = sum(mul(softmax(x, 1), w));
    tape.backward(loss);

    const auto w64 = to_double(w.data());
    const auto g = fd_gradient(to_double(x.data()), [&](const std::vector<double>& p) {
        double total = 0.0;
        for (int i = 0; i < 2; ++i) {
            double mx = p[static_cast<std::size_t>(i * 4)];
            for (int j = 1; j < 4; ++j) mx = std::max(mx, p[static_cast<std::size_t>(i * 4 + j)]);
            double z = 0.0;
            for (int j = 0; j < 4; ++j) z += std::exp(p[static_cast<std::size_t>(i * 4 + j)] - mx);
            for (int j = 0; j < 4; ++j) {
                total += std::exp(p[static_cast<std::size_t>(i * 4 + j)] - mx) / z *
                         w64[static_cast<std::size_t>(i * 4 + j)];
            }
        }
        return total;
    });
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(grad_close(x.grad()[i], g[i]));
}

TEST_CASE("concat of a single tensor copies it") {
    std::mt19937 rng(3);
    Tensor a = rand2d(3, 2, rng);
    Tensor out = concat({a}, 0);
    CHECK(bits_equal(a, out));
    CHECK_FALSE(out.same_storage(a));
}

TEST_CASE("concat stacks rows and splits gradient back per source") {
    Tensor a = Tensor::from_data({1, 3}, {1.0f, 2.0f, 3.0f}, true);
    Tensor b = Tensor::from_data({2, 3}, {4.0f, 5.0f, 6.0f, 7.0f, 8.0f, 9.0f}, true);

    Tape tape;
    Tensor out = concat({a, b}, 0);
    REQUIRE(out.shape() == Shape{3, 3});
    CHECK(out.at(0, 0) == 1.0f);
    CHECK(out.at(1, 0) == 4.0f);
    CHECK(out.at(2, 2) == 9.0f);

    tape.backward(sum(out));
    for (float g : a.grad()) CHECK(g == 1.0f);
    for (float g : b.grad()) CHECK(g == 1.0f);
}

TEST_CASE("concat along columns and its error cases") {
    std::mt19937 rng(5);
    Tensor a = rand2d(2, 2, rng);
    Tensor b = rand2d(2, 3, rng);
    Tensor out = concat({a, b}, 1);
    CHECK(out.shape() == Shape{2, 5});
    CHECK(out.at(0, 2) == b.at(0, 0));
    CHECK_THROWS_AS(concat({a, rand2d(3, 2, rng)}, 1), DimensionError);
    CHECK_THROWS_AS(concat(std::vector<Tensor>{}, 0), UsageError);
}

TEST_CASE("tanh and relu fixed points") {
    Tensor x = Tensor::from_data({1, 3}, {0.0f, -2.0f, 2.0f});
    Tensor t = tanh_op(x);
    Tensor r = relu(x);
    CHECK(t.at(0, 0) == 0.0f);
    CHECK(r.at(0, 0) == 0.0f);
    CHECK(r.at(0, 1) == 0.0f);
    CHECK(r.at(0, 2) == 2.0f);
}

TEST_CASE("tanh gradient at 0.5 matches the closed form") {
    Tensor x = Tensor::from_data({1, 1}, {0.5f}, true);
    Tape tape;
    tape.backward(sum(tanh_op(x)));
    const double want = 1.0 - std::tanh(0.5) * std::tanh(0.5);
    CHECK(grad_close(x.grad()[0], want));
}

TEST_CASE("relu gradient is zero on the negative side") {
    Tensor x = Tensor::from_data({1, 2}, {-1.5f, 2.5f}, true);
    Tape tape;
    tape.backward(sum(relu(x)));
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == 1.0f);
}

TEST_CASE("dropout outside training is a bit-exact identity") {
    std::mt19937 rng(17);
    Tensor x = rand2d(4, 4, rng);
    Tensor out = dropout(x, 0.5f, false, rng);
    CHECK(bits_equal(x, out));
}

TEST_CASE("dropout in training zeroes or rescales every entry") {
    std::mt19937 rng(19);
    Tensor x = Tensor::full({8, 8}, 1.0f);
    Tensor out = dropout(x, 0.5f, true, rng);
    int zeros = 0;
    for (float v : out.data()) {
        const bool dropped = v == 0.0f;
        const bool kept = std::abs(v - 2.0f) < 1e-6f;
        CHECK((dropped || kept));
        zeros += dropped ? 1 : 0;
    }
    CHECK(zeros > 8);
    CHECK(zeros < 56);
}

TEST_CASE("dropout rejects rates outside [0,1)") {
    std::mt19937 rng(1);
    Tensor x = Tensor::full({2, 2}, 1.0f);
    CHECK_THROWS_AS(dropout(x, 1.0f, true, rng), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1f, true, rng), ConfigError);
}

TEST_CASE("cross entropy of uniform logits is log of the class count") {
    Tensor logits = Tensor::zeros({1, 4});
    Tensor loss = cross_entropy_with_logits(logits, {2});
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-5));
}

TEST_CASE("cross entropy saturates to zero on a confident correct logit") {
    Tensor logits = Tensor::from_data({1, 3}, {1000.0f, 0.0f, 0.0f});
    Tensor loss = cross_entropy_with_logits(logits, {0});
    CHECK(std::isfinite(loss.item()));
    CHECK(loss.item() < 1e-6f);
}

TEST_CASE("cross entropy matches a double-precision log-sum-exp reference") {
    std::mt19937 rng(31);
    Tensor logits = Tensor::uniform({3, 5}, -2.0f, 2.0f, rng, true);
    const std::vector<int> labels{4, 0, 2};

    Tape tape;
    Tensor loss = cross_entropy_with_logits(logits, labels);
    tape.backward(loss);

    auto loss64 = [&](const std::vector<double>& p) {
        double total = 0.0;
        for (int i = 0; i < 3; ++i) {
            double mx = p[static_cast<std::size_t>(i * 5)];
            for (int j = 1; j < 5; ++j) mx = std::max(mx, p[static_cast<std::size_t>(i * 5 + j)]);
            double z = 0.0;
            for (int j = 0; j < 5; ++j) z += std::exp(p[static_cast<std::size_t>(i * 5 + j)] - mx);
            total += mx + std::log(z) - p[static_cast<std::size_t>(i * 5 + labels[static_cast<std::size_t>(i)])];
        }
        return total / 3.0;
    };
    const auto p64 = to_double(logits.data());
    CHECK(rel_err(loss.item(), loss64(p64)) < 1e-5);
    const auto g = fd_gradient(p64, loss64);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(grad_close(logits.grad()[i], g[i]));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    Tensor logits = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(cross_entropy_with_logits(logits, {0, 3}), DataError);
    CHECK_THROWS_AS(cross_entropy_with_logits(logits, {-1, 0}), DataError);
}

TEST_CASE("cross entropy with a class mask ignores masked logits") {
    // Class 2 carries a huge logit but is masked out, so the softmax runs
    // over classes {0,1} only: loss = log(1 + e^-1).
    Tensor logits = Tensor::from_data({1, 3}, {1.0f, 0.0f, 50.0f});
    const std::vector<std::uint8_t> mask{1, 1, 0};
    Tensor loss = cross_entropy_with_logits(logits, {0}, &mask);
    CHECK(loss.item() == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-5));
    CHECK_THROWS_AS(cross_entropy_with_logits(logits, {2}, &mask), DataError);
}

TEST_CASE("backward fills leaf gradients and respects trainability") {
    std::mt19937 rng(37);
    Tensor w = rand2d(2, 3, rng, true);
    Tensor frozen = rand2d(2, 3, rng, false);

    Tape tape;
    Tensor loss = sum(add(w, frozen));
    tape.backward(loss);
    for (float g : w.grad()) CHECK(g == 1.0f);
    CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("backward requires a scalar recorded on the active tape") {
    std::mt19937 rng(41);
    Tensor w = rand2d(2, 2, rng, true);
    Tape tape;
    Tensor out = add(w, w);
    CHECK_THROWS_AS(tape.backward(out), UsageError);
}

TEST_CASE("nesting tapes on one thread is rejected") {
    Tape outer;
    CHECK_THROWS_AS(Tape{}, UsageError);
}

TEST_CASE("composite chain gradients match finite differences") {
    std::mt19937 rng(43);
    Tensor x = rand2d(3, 4, rng, true);
    Tensor w = rand2d(4, 2, rng, true);
    Tensor b = Tensor::uniform({2}, -0.5f, 0.5f, rng, true);

    Tape tape;
    Tensor h = tanh_op(add_bias(matmul(x, w), b));
    Tensor loss = sum(mul(h, h));
    tape.backward(loss);

    const auto x64 = to_double(x.data());
    const auto w64 = to_double(w.data());
    const auto b64 = to_double(b.data());
    auto loss64 = [&](const std::vector<double>& xv, const std::vector<double>& wv,
                      const std::vector<double>& bv) {
        double total = 0.0;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 2; ++j) {
                double acc = bv[static_cast<std::size_t>(j)];
                for (int k = 0; k < 4; ++k) acc += xv[static_cast<std::size_t>(i * 4 + k)] * wv[static_cast<std::size_t>(k * 2 + j)];
                const double t = std::tanh(acc);
                total += t * t;
            }
        }
        return total;
    };
    const auto gx = fd_gradient(x64, [&](const std::vector<double>& p) { return loss64(p, w64, b64); });
    const auto gw = fd_gradient(w64, [&](const std::vector<double>& p) { return loss64(x64, p, b64); });
    const auto gb = fd_gradient(b64, [&](const std::vector<double>& p) { return loss64(x64, w64, p); });
    for (std::size_t i = 0; i < gx.size(); ++i) CHECK(grad_close(x.grad()[i], gx[i]));
    for (std::size_t i = 0; i < gw.size(); ++i) CHECK(grad_close(w.grad()[i], gw[i]));
    for (std::size_t i = 0; i < gb.size(); ++i) CHECK(grad_close(b.grad()[i], gb[i]));
}

TEST_CASE("slice, transpose, scale and mean_rows round-trip with gradients") {
    std::mt19937 rng(47);
    Tensor x = rand2d(4, 6, rng, true);

    Tensor sl = slice(x, 1, 2, 3);
    CHECK(sl.shape() == Shape{4, 3});
    CHECK(sl.at(1, 0) == x.at(1, 2));

    Tensor tr = transpose(x);
    CHECK(tr.shape() == Shape{6, 4});
    CHECK(tr.at(2, 3) == x.at(3, 2));

    Tensor mr = mean_rows(x);
    CHECK(mr.shape() == Shape{1, 6});
    double col0 = 0.0;
    for (int i = 0; i < 4; ++i) col0 += x.at(i, 0);
    CHECK(mr.at(0, 0) == doctest::Approx(col0 / 4.0).epsilon(1e-6));

    Tape tape;
    tape.backward(sum(scale(slice(x, 0, 1, 2), 3.0f)));
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; ++j) {
            const float want = (i == 1 || i == 2) ? 3.0f : 0.0f;
            CHECK(x.grad()[static_cast<std::size_t>(i * 6 + j)] == want);
        }
    }
}

TEST_CASE("gradient masking zeroes exactly the masked entries") {
    Tensor w = Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}, true);
    Tape tape;
    tape.backward(sum(mul(w, w)));  // grad = 2*w = [[2,4],[6,8]]

    SUBCASE("all-ones mask leaves gradients bit-exact") {
        const auto before = std::vector<float>(w.grad().begin(), w.grad().end());
        apply_mask_to_grad(w, GradMask::ones({2, 2}));
        CHECK(bits_equal(std::span<const float>(before), w.grad()));
    }
    SUBCASE("all-zeros mask clears every gradient") {
        apply_mask_to_grad(w, GradMask::zeros({2, 2}));
        for (float g : w.grad()) CHECK(g == 0.0f);
    }
    SUBCASE("column mask keeps first column only") {
        apply_mask_to_grad(w, GradMask::from_values({2, 2}, {1.0f, 0.0f, 1.0f, 0.0f}));
        CHECK(w.grad()[0] == 2.0f);
        CHECK(w.grad()[1] == 0.0f);
        CHECK(w.grad()[2] == 6.0f);
        CHECK(w.grad()[3] == 0.0f);
    }
}

TEST_CASE("gradient mask construction validates entries and shape") {
    CHECK_THROWS_AS(GradMask::from_values({2}, {1.0f, 0.5f}), ConfigError);
    CHECK_THROWS_AS(GradMask::from_values({2}, {1.0f}), DimensionError);
    Tensor w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    Tape tape;
    tape.backward(sum(w));
    CHECK_THROWS_AS(apply_mask_to_grad(w, GradMask::ones({3})), DimensionError);
}
