#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cil/error.hpp"
#include "cil/losses.hpp"
#include "cil/random.hpp"

using namespace cil;

namespace {

Vector random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    Vector v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("bce on a zero logit is ln 2") {
    for (std::size_t old : {0u, 1u, 3u}) {
        Vector o(old + 1, 7.0), y(old + 1, 0.0);
        o.back() = 0.0;
        y.back() = 1.0;
        CHECK(bce_indl(o, y, old).value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
}

TEST_CASE("bce saturates towards zero") {
    CHECK(bce_indl(Vector{40.0}, Vector{1.0}, 0).value < 1e-15);
    CHECK(bce_indl(Vector{-40.0}, Vector{0.0}, 0).value < 1e-15);
    CHECK(std::isfinite(bce_indl(Vector{-800.0}, Vector{1.0}, 0).value));
}

TEST_CASE("bce masks old classes") {
    const LossGrad l = bce_indl(Vector{5.0, 0.0}, Vector{1.0, 1.0}, 1);
    CHECK(l.value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(l.grad[0] == 0.0);
    CHECK(l.grad[1] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK_THROWS_AS(bce_indl(Vector{1.0}, Vector{1.0}, 1), ConfigError);
    CHECK_THROWS_AS(bce_indl(Vector{1.0, 2.0}, Vector{1.0}, 0), ConfigError);
}

TEST_CASE("bce ignores any change to old logits") {
    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(8);
        const std::size_t old = rng.below(n);
        Vector o = random_vec(rng, n, 3.0), y(n);
        for (double& v : y) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        const LossGrad a = bce_indl(o, y, old);
        for (std::size_t k = 0; k < old; ++k) o[k] = 1e3 * rng.normal();
        const LossGrad b = bce_indl(o, y, old);
        CHECK(a.value == b.value);
        CHECK(a.grad == b.grad);
    }
}

TEST_CASE("rescale examples") {
    const Vector even = rescale_pi(Vector{1.0, 1.0}, 3.0);
    CHECK(even[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(even[1] == doctest::Approx(0.5).epsilon(1e-15));

    const Vector p = rescale_pi(Vector{4.0, 1.0}, 2.0);
    CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-8));
    CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-8));

    const Vector plain = rescale_pi(Vector{0.2, 0.3, 0.5}, 1.0);
    CHECK(plain[0] == doctest::Approx(0.2).epsilon(1e-7));
    CHECK(plain[2] == doctest::Approx(0.5).epsilon(1e-7));

    CHECK_THROWS_AS(rescale_pi(Vector{0.0, 0.0}, 2.0), DegenerateInputError);
    CHECK_THROWS_AS(rescale_pi(Vector{-0.1, 1.0}, 2.0), ConfigError);
    CHECK_THROWS_AS(rescale_pi(Vector{0.5, 1.0}, 0.5), ConfigError);
}

TEST_CASE("rescale sums to one, keeps order and flattens the distribution") {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(8);
        Vector u(n);
        for (double& v : u) v = rng.uniform(0.001, 1.0);
        const double delta = 1.0 + rng.uniform(0.0, 4.0);
        const Vector p = rescale_pi(u, delta);
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (u[i] > u[j]) CHECK(p[i] > p[j]);
            }
        }
        const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
        if (*lo == *hi || delta == 1.0) continue;
        const Vector q = rescale_pi(u, 1.0);
        const double spread_q = *std::max_element(q.begin(), q.end()) / *std::min_element(q.begin(), q.end());
        const double spread_p = *std::max_element(p.begin(), p.end()) / *std::min_element(p.begin(), p.end());
        CHECK(spread_p < spread_q);
    }
}

TEST_CASE("od loss examples") {
    const DistillConfig cfg;
    CHECK(od_loss(Vector{1.0, -2.0, 0.3}, Vector{1.0, -2.0, 0.3}, cfg).value == 0.0);

    DistillConfig plain;
    plain.delta = 1.0;
    const Vector t = {logit(0.9), logit(0.1)};
    const Vector s = {logit(0.1), logit(0.9)};
    const double want = 0.8 * std::log(9.0);
    CHECK(od_loss(t, s, plain).value == doctest::Approx(want).epsilon(1e-7));
    CHECK(want == doctest::Approx(1.7578).epsilon(1e-4));

    const LossGrad none = od_loss(Vector{}, Vector{}, cfg);
    CHECK(none.value == 0.0);
    CHECK(none.grad.empty());
    CHECK_THROWS_AS(od_loss(Vector{1.0}, Vector{1.0, 2.0}, cfg), ConfigError);
}

TEST_CASE("od loss is non-negative and zero only for equal distributions") {
    Rng rng(3);
    const DistillConfig cfg;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const Vector t = random_vec(rng, n, 3.0), s = random_vec(rng, n, 3.0);
        const double v = od_loss(t, s, cfg).value;
        CHECK(v >= 0.0);
        if (n >= 2) CHECK(v > 0.0);
    }
}

TEST_CASE("fd loss examples") {
    CHECK(fd_loss(Vector{1.0, 2.0}, Vector{1.0, 2.0}).value == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(fd_loss(Vector{1.0, 0.0}, Vector{0.0, 3.0}).value == 1.0);
    CHECK(fd_loss(Vector{1.0, 0.0}, Vector{1.0, 1.0}).value ==
          doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(fd_loss(Vector{1.0, 0.0}, Vector{-1.0, 0.0}).value == 2.0);
    CHECK_THROWS_AS(fd_loss(Vector{0.0, 0.0}, Vector{1.0, 1.0}), DegenerateInputError);
}

TEST_CASE("fd loss is scale invariant") {
    Rng rng(4);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(6);
        const Vector a = random_vec(rng, n), b = random_vec(rng, n);
        const double sa = rng.uniform(0.01, 100.0), sb = rng.uniform(0.01, 100.0);
        Vector a2 = a, b2 = b;
        for (double& v : a2) v *= sa;
        for (double& v : b2) v *= sb;
        CHECK(fd_loss(a2, b2).value == doctest::Approx(fd_loss(a, b).value).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("per-example loss gradients pass the checker") {
    Rng rng(5);
    const DistillConfig cfg;
    for (int trial = 0; trial < 10; ++trial) {
        const Vector t = random_vec(rng, 4, 2.0), v = random_vec(rng, 4);
        DifferentiableFn od{[&](std::span<const double> s) { return od_loss(t, s, cfg).value; },
                            [&](std::span<const double> s) { return od_loss(t, s, cfg).grad; }};
        CHECK(grad_check(od, random_vec(rng, 4, 2.0)).passed(1e-4));
        DifferentiableFn fd{[&](std::span<const double> s) { return fd_loss(v, s).value; },
                            [&](std::span<const double> s) { return fd_loss(v, s).grad; }};
        CHECK(grad_check(fd, random_vec(rng, 4)).passed(1e-4));
    }
}

TEST_CASE("adaptive lambda") {
    CHECK(adaptive_lambda(35, 5, 2.0) == doctest::Approx(2.0 * std::sqrt(7.0)).epsilon(1e-15));
    CHECK(adaptive_lambda(50, 5, 2.0) == doctest::Approx(2.0 * std::sqrt(10.0)).epsilon(1e-15));
    CHECK(adaptive_lambda(35, 5, 2.0) == doctest::Approx(5.2915).epsilon(1e-4));
    CHECK(adaptive_lambda(7, 7, 1.5) == 1.5);
    CHECK_THROWS_AS(adaptive_lambda(5, 0, 2.0), ConfigError);
    CHECK_THROWS_AS(adaptive_lambda(4, 5, 2.0), ConfigError);
    CHECK_THROWS_AS(adaptive_lambda(5, 5, 0.0), ConfigError);
}

TEST_CASE("batch means") {
    Matrix o(2, 1), y(2, 1);
    o(0, 0) = 0.0;
    y(0, 0) = 1.0;
    o(1, 0) = 0.0;
    CHECK(bce_indl(o, y, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    Matrix a(2, 2), b(2, 2);
    a(0, 0) = 1;
    b(0, 1) = 1;  // orthogonal row: 1
    a(1, 0) = 2;
    b(1, 0) = 5;  // aligned row: 0
    CHECK(fd_loss(a, b) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(od_loss(a, a, DistillConfig{}) == 0.0);
}

TEST_CASE("distill config validation") {
    DistillConfig c;
    CHECK_NOTHROW(c.validate());
    c.delta = 0.9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.omega = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.eps = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

namespace {

struct Toy {
    LearnerState student;
    FrozenTeacher teacher;
    Matrix x, y;
};

Toy toy(std::uint64_t seed) {
    Rng rng(seed);
    LearnerState prev = init_learner({3, {16}, 4}, 2, 0.5, rng.next_u64());
    const FrozenTeacher teacher = freeze(prev);
    LearnerState s = prev;
    begin_phase(s, 1, 0.5, rng.next_u64());
    Vector p = flatten(s);
    for (double& v : p) v += 0.1 * rng.normal();
    assign_flat(s, p);
    Matrix x(5, 3), y(5, 3);
    for (double& v : x.flat()) v = rng.normal();
    for (std::size_t r = 0; r < 5; ++r) y(r, 2) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    return {s, teacher, x, y};
}

}  // namespace

TEST_CASE("phase zero loss is bce only") {
    const LearnerState s = init_learner({3, {5}, 4}, 3, 0.5, 1);
    Matrix x(2, 3, 0.5), y(2, 3, 1.0);
    for (LossTerms terms : {LossTerms{true, true, true}, LossTerms{false, false, false}}) {
        const TotalLoss l = total_loss(s, nullptr, x, y, {}, terms);
        CHECK(l.breakdown.od == 0.0);
        CHECK(l.breakdown.fd == 0.0);
        CHECK(l.breakdown.lambda == 0.0);
        CHECK(l.breakdown.total == l.breakdown.bce);
    }
}

TEST_CASE("copy of the teacher with zero new logits costs ln 2") {
    LearnerState prev = init_learner({3, {5}, 4}, 2, 0.5, 3);
    const FrozenTeacher teacher = freeze(prev);
    LearnerState s = prev;
    begin_phase(s, 1, 0.0, 7);  // new entry all zeros: logit 0
    Matrix x(4, 3), y(4, 3);
    Rng rng(8);
    for (double& v : x.flat()) v = rng.normal();
    for (std::size_t r = 0; r < 4; ++r) y(r, 2) = 1.0;
    const TotalLoss l = total_loss(s, &teacher, x, y, {}, {true, true, true});
    CHECK(l.breakdown.od == 0.0);
    CHECK(l.breakdown.fd == doctest::Approx(0.0).epsilon(1e-15).scale(1.0));
    CHECK(l.breakdown.bce == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(l.breakdown.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("combined loss components, identity and gradient") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Toy t = toy(seed);
        const DistillConfig cfg;
        const TotalLoss l = total_loss(t.student, &t.teacher, t.x, t.y, cfg, {true, true, true});
        const auto& b = l.breakdown;
        CHECK(b.bce > 0.0);
        CHECK(b.od > 0.0);
        CHECK(b.fd > 0.0);
        CHECK(b.lambda == adaptive_lambda(3, 1, cfg.omega));
        CHECK(std::abs(b.total - (b.bce + b.fd + b.lambda * b.od)) <= 1e-12);

        DifferentiableFn fn{
            [&](std::span<const double> p) {
                LearnerState s = t.student;
                assign_flat(s, p);
                return total_loss(s, &t.teacher, t.x, t.y, cfg, {true, true, true}).breakdown.total;
            },
            [&](std::span<const double> p) {
                LearnerState s = t.student;
                assign_flat(s, p);
                return total_loss(s, &t.teacher, t.x, t.y, cfg, {true, true, true}).grads;
            },
        };
        CHECK(grad_check(fn, flatten(t.student)).passed(1e-4));
    }
}

TEST_CASE("disabled terms contribute nothing") {
    const Toy t = toy(11);
    const TotalLoss ifd = total_loss(t.student, &t.teacher, t.x, t.y, {}, {true, false, true});
    CHECK(ifd.breakdown.od == 0.0);
    CHECK(ifd.breakdown.lambda == 0.0);
    const TotalLoss iod = total_loss(t.student, &t.teacher, t.x, t.y, {}, {true, true, false});
    CHECK(iod.breakdown.fd == 0.0);
    CHECK(iod.breakdown.bce == ifd.breakdown.bce);

    // Without IndL the old logits enter the BCE against zero targets.
    const TotalLoss full = total_loss(t.student, &t.teacher, t.x, t.y, {}, {false, false, false});
    CHECK(full.breakdown.bce > ifd.breakdown.bce);
}

TEST_CASE("distillation needs a teacher with the old class count") {
    const Toy t = toy(12);
    CHECK_THROWS_AS(total_loss(t.student, nullptr, t.x, t.y, {}, {true, true, false}), ConfigError);
    CHECK_NOTHROW(total_loss(t.student, nullptr, t.x, t.y, {}, {true, false, false}));
    const FrozenTeacher wrong = freeze(t.student);
    CHECK_THROWS_AS(total_loss(t.student, &wrong, t.x, t.y, {}, {true, true, false}), ConfigError);
}
