#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "cil/error.hpp"
#include "cil/gradcore.hpp"
#include "cil/random.hpp"

using namespace cil;

TEST_CASE("matrix shape and row access") {
    Matrix m(2, 3, 1.5);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    m(1, 2) = 4.0;
    CHECK(m.row(1)[2] == 4.0);
    CHECK(m.flat()[5] == 4.0);
    CHECK_THROWS_AS(require_same_size(2, 3, "test"), ConfigError);
    CHECK_THROWS_AS(dot(Vector{1, 2}, Vector{1}), ConfigError);
}

TEST_CASE("grad_check on a quadratic") {
    DifferentiableFn fn{
        [](std::span<const double> w) { return dot(w, w); },
        [](std::span<const double> w) { return Vector{2 * w[0], 2 * w[1]}; },
    };
    const Vector w = {1.0, 2.0};
    CHECK(fn.gradient(w) == Vector{2.0, 4.0});
    const auto res = grad_check(fn, w, 1e-5);
    CHECK(res.max_relative_error < 1e-6);
    CHECK(res.passed(1e-4));
}

TEST_CASE("grad_check on a constant function reports zero error") {
    DifferentiableFn fn{
        [](std::span<const double>) { return 3.0; },
        [](std::span<const double> w) { return Vector(w.size(), 0.0); },
    };
    CHECK(grad_check(fn, Vector{0.3, -2.0, 5.0}).max_relative_error == 0.0);
}

TEST_CASE("grad_check flags a wrong gradient and non-finite values") {
    DifferentiableFn wrong{
        [](std::span<const double> w) { return w[0] * w[0]; },
        [](std::span<const double> w) { return Vector{w[0]}; },
    };
    const auto res = grad_check(wrong, Vector{1.0});
    CHECK_FALSE(res.passed(1e-4));
    CHECK(res.worst_coordinate == 0);

    DifferentiableFn blowup{
        [](std::span<const double> w) { return std::log(w[0]); },
        [](std::span<const double> w) { return Vector{1.0 / w[0]}; },
    };
    const auto nf = grad_check(blowup, Vector{1e-7}, 1e-5);
    REQUIRE(nf.nonfinite_coordinate.has_value());
    CHECK(*nf.nonfinite_coordinate == 0);
    CHECK_FALSE(nf.passed(1e-4));
}

TEST_CASE("primitive gradients agree with finite differences") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Vector x(6);
        for (double& v : x) v = rng.normal();
        Vector r(6);
        for (double& v : r) v = rng.normal();

        DifferentiableFn sig{
            [&](std::span<const double> p) { return dot(r, sigmoid(p)); },
            [&](std::span<const double> p) { return sigmoid_backward(sigmoid(p), r); },
        };
        CHECK(grad_check(sig, x).passed(1e-4));

        DifferentiableFn norm{
            [&](std::span<const double> p) { return dot(r, l2_normalize(p)); },
            [&](std::span<const double> p) { return l2_normalize_backward(p, r); },
        };
        CHECK(grad_check(norm, x).passed(1e-4));
    }
}

TEST_CASE("affine, relu and log values") {
    Matrix w(2, 2);
    w(0, 0) = 1;
    w(0, 1) = 2;
    w(1, 0) = -1;
    w(1, 1) = 0.5;
    const Vector y = affine_forward(w, Vector{0.5, -1}, Vector{1, 2});
    CHECK(y == Vector{5.5, -1.0});
    CHECK(relu(Vector{1, -2, 0}) == Vector{1, 0, 0});
    CHECK(relu_backward(Vector{1, -2}, Vector{3, 3}) == Vector{3, 0});
    CHECK(log_eps(Vector{1.0}, 0.0)[0] == 0.0);
    CHECK_THROWS_AS(l2_normalize(Vector{0.0, 0.0}), DegenerateInputError);
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("sgd momentum step by hand") {
    Vector p = {1.0}, g = {2.0}, v = {0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.9);
    CHECK(v[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("sgd with zero gradient and velocity leaves params unchanged") {
    Vector p = {1.5, -2.0}, g = {0.0, 0.0}, v = {0.0, 0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.9);
    CHECK(p == Vector{1.5, -2.0});
}

TEST_CASE("two momentum steps with constant gradient") {
    Vector p = {0.0}, g = {1.0}, v = {0.0};
    sgd_momentum_step(p, g, v, 1.0, 0.5);
    CHECK(p[0] == -1.0);
    sgd_momentum_step(p, g, v, 1.0, 0.5);
    CHECK(v[0] == 1.5);
    CHECK(p[0] == -2.5);
}

TEST_CASE("momentum zero is plain gradient descent, exactly") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        Vector p(n), g(n), v(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.normal();
            g[i] = rng.normal();
            v[i] = rng.normal();
        }
        const double lr = rng.uniform(1e-4, 1.0);
        Vector want(n);
        for (std::size_t i = 0; i < n; ++i) want[i] = p[i] - lr * g[i];
        sgd_momentum_step(p, g, v, lr, 0.0);
        CHECK(p == want);
    }
}

TEST_CASE("sgd argument validation") {
    Vector p = {1.0}, g = {1.0}, v = {0.0}, short_v;
    CHECK_THROWS_AS(sgd_momentum_step(p, g, short_v, 0.1, 0.9), ConfigError);
    CHECK_THROWS_AS(sgd_momentum_step(p, g, v, 0.0, 0.9), ConfigError);
    CHECK_THROWS_AS(sgd_momentum_step(p, g, v, 0.1, 1.0), ConfigError);
    Vector huge = {std::numeric_limits<double>::max()};
    Vector hg = {-std::numeric_limits<double>::max()};
    Vector hv = {0.0};
    CHECK_THROWS_AS(sgd_momentum_step(huge, hg, hv, 10.0, 0.0), NumericError);
}

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 120, 0.01) == 0.01);
    CHECK(cosine_lr(60, 120, 0.01) == doctest::Approx(0.005).epsilon(1e-12));
    const double want = 0.01 * (1.0 + std::cos(0.75 * std::numbers::pi)) / 2.0;
    CHECK(cosine_lr(90, 120, 0.01) == doctest::Approx(want).epsilon(1e-15));
    CHECK(cosine_lr(90, 120, 0.01) == doctest::Approx(0.0014645).epsilon(1e-4));
    CHECK_THROWS_AS(cosine_lr(120, 120, 0.01), ConfigError);
    CHECK_THROWS_AS(cosine_lr(-1, 120, 0.01), ConfigError);
}

TEST_CASE("cosine schedule is non-increasing") {
    for (int total : {1, 2, 7, 30, 120}) {
        double prev = cosine_lr(0, total, 0.05);
        for (int e = 1; e < total; ++e) {
            const double lr = cosine_lr(e, total, 0.05);
            CHECK(lr <= prev);
            CHECK(lr >= 0.0);
            prev = lr;
        }
    }
}

TEST_CASE("rng streams are reproducible and below is in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
    Rng c(3);
    for (int i = 0; i < 1000; ++i) {
        CHECK(c.below(7) < 7);
        const double u = c.uniform();
        CHECK((u >= 0.0 && u < 1.0));
    }
}
