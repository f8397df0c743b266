#include "cil/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <span>
#include <utility>

#include "cil/error.hpp"
#include "cil/gradcore.hpp"
#include "cil/losses.hpp"
#include "cil/model.hpp"
#include "cil/random.hpp"

namespace cil {

namespace {

using Case = std::pair<DifferentiableFn, Vector>;
using CaseFactory = std::function<Case(Rng&)>;

Vector normal_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    Vector v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

Vector uniform_vec(Rng& rng, std::size_t n, double lo, double hi) {
    Vector v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Vector-valued op f scalarized as r . f(p), gradient via its backward rule.
Case projected(Vector point, std::size_t out_dim, Rng& rng,
               std::function<Vector(std::span<const double>)> f,
               std::function<Vector(std::span<const double>, std::span<const double>)> vjp) {
    Vector r = normal_vec(rng, out_dim);
    DifferentiableFn fn{
        [f, r](std::span<const double> p) { return dot(r, f(p)); },
        [vjp, r](std::span<const double> p) { return vjp(p, r); },
    };
    return {std::move(fn), std::move(point)};
}

Case affine_case(Rng& rng) {
    const std::size_t in = 4, out = 3;
    // point = [W (out x in) | b | x]
    Vector point = normal_vec(rng, out * in + out + in);
    auto unpack = [=](std::span<const double> p) {
        Matrix w(out, in);
        std::copy_n(p.begin(), out * in, w.flat().begin());
        return std::tuple{w, Vector(p.begin() + out * in, p.begin() + out * in + out),
                          Vector(p.begin() + out * in + out, p.end())};
    };
    return projected(
        std::move(point), out, rng,
        [=](std::span<const double> p) {
            auto [w, b, x] = unpack(p);
            return affine_forward(w, b, x);
        },
        [=](std::span<const double> p, std::span<const double> r) {
            auto [w, b, x] = unpack(p);
            Vector g(p.size(), 0.0);
            std::span<double> gs(g);
            affine_backward(w, x, r, gs.first(out * in), gs.subspan(out * in, out),
                            gs.subspan(out * in + out));
            return g;
        });
}

Case relu_case(Rng& rng) {
    return projected(normal_vec(rng, 6), 6, rng,
                     [](std::span<const double> p) { return relu(p); },
                     [](std::span<const double> p, std::span<const double> r) {
                         return relu_backward(p, r);
                     });
}

Case sigmoid_case(Rng& rng) {
    return projected(normal_vec(rng, 6, 2.0), 6, rng,
                     [](std::span<const double> p) { return sigmoid(p); },
                     [](std::span<const double> p, std::span<const double> r) {
                         return sigmoid_backward(sigmoid(p), r);
                     });
}

Case log_case(Rng& rng) {
    return projected(uniform_vec(rng, 6, 0.2, 3.0), 6, rng,
                     [](std::span<const double> p) { return log_eps(p, 1e-8); },
                     [](std::span<const double> p, std::span<const double> r) {
                         return log_eps_backward(p, 1e-8, r);
                     });
}

Case l2_normalize_case(Rng& rng) {
    return projected(normal_vec(rng, 5), 5, rng,
                     [](std::span<const double> p) { return l2_normalize(p); },
                     [](std::span<const double> p, std::span<const double> r) {
                         return l2_normalize_backward(p, r);
                     });
}

Case dot_case(Rng& rng) {
    const std::size_t n = 5;
    DifferentiableFn fn{
        [=](std::span<const double> p) { return dot(p.first(n), p.subspan(n)); },
        [=](std::span<const double> p) {
            Vector g(2 * n);
            for (std::size_t i = 0; i < n; ++i) {
                g[i] = p[n + i];
                g[n + i] = p[i];
            }
            return g;
        },
    };
    return {std::move(fn), normal_vec(rng, 2 * n)};
}

LearnerState toy_learner(Rng& rng, std::size_t n_classes) {
    const ExtractorConfig arch{4, {6}, 5};
    LearnerState s;
    if (n_classes == 0) {
        s.extractor = init_extractor(arch, rng.next_u64());
        s.classifier.embedding_dim = arch.embedding_dim;
    } else {
        s = init_learner(arch, n_classes, 0.5, rng.next_u64());
    }
    // Non-zero biases so every coordinate is exercised.
    Vector p = flatten(s);
    for (double& v : p) v += 0.1 * rng.normal();
    assign_flat(s, p);
    return s;
}

Case extractor_case(Rng& rng) {
    const LearnerState base = toy_learner(rng, 0);
    const Vector x = normal_vec(rng, 4);
    const Vector r = normal_vec(rng, base.extractor.embedding_dim());
    DifferentiableFn fn{
        [=](std::span<const double> p) {
            LearnerState s = base;
            assign_flat(s, p);
            return dot(r, extract(s.extractor, x));
        },
        [=](std::span<const double> p) {
            LearnerState s = base;
            assign_flat(s, p);
            Vector g(p.size(), 0.0);
            backward(s, forward(s, x), Vector{}, r, g);
            return g;
        },
    };
    return {std::move(fn), flatten(base)};
}

Case learner_case(Rng& rng) {
    const LearnerState base = toy_learner(rng, 3);
    const Vector x = normal_vec(rng, 4);
    const Vector r = normal_vec(rng, 3);
    DifferentiableFn fn{
        [=](std::span<const double> p) {
            LearnerState s = base;
            assign_flat(s, p);
            return dot(r, logits(s, x));
        },
        [=](std::span<const double> p) {
            LearnerState s = base;
            assign_flat(s, p);
            Vector g(p.size(), 0.0);
            backward(s, forward(s, x), r, {}, g);
            return g;
        },
    };
    return {std::move(fn), flatten(base)};
}

Case bce_case(Rng& rng) {
    const std::size_t n = 5, old = 2;
    Vector y(n);
    for (double& v : y) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    DifferentiableFn fn{
        [=](std::span<const double> o) { return bce_indl(o, y, old).value; },
        [=](std::span<const double> o) { return bce_indl(o, y, old).grad; },
    };
    return {std::move(fn), normal_vec(rng, n, 2.0)};
}

Case od_case(Rng& rng) {
    const DistillConfig cfg;
    const Vector teacher = normal_vec(rng, 4, 2.0);
    DifferentiableFn fn{
        [=](std::span<const double> s) { return od_loss(teacher, s, cfg).value; },
        [=](std::span<const double> s) { return od_loss(teacher, s, cfg).grad; },
    };
    return {std::move(fn), normal_vec(rng, 4, 2.0)};
}

Case fd_case(Rng& rng) {
    const Vector teacher = normal_vec(rng, 5);
    DifferentiableFn fn{
        [=](std::span<const double> v) { return fd_loss(teacher, v).value; },
        [=](std::span<const double> v) { return fd_loss(teacher, v).grad; },
    };
    return {std::move(fn), normal_vec(rng, 5)};
}

// Learner with 2 old classes and 1 new class, teacher = perturbed snapshot.
CaseFactory total_case(LossTerms terms) {
    return [terms](Rng& rng) -> Case {
        LearnerState prev = toy_learner(rng, 2);
        const FrozenTeacher teacher = freeze(prev);
        LearnerState student = prev;
        begin_phase(student, 1, 0.5, rng.next_u64());
        Vector p = flatten(student);
        for (double& v : p) v += 0.2 * rng.normal();
        assign_flat(student, p);

        const std::size_t m = 4;
        Matrix x(m, 4), y(m, 3);
        for (double& v : x.flat()) v = rng.normal();
        for (std::size_t r = 0; r < m; ++r) y(r, 2) = rng.uniform() < 0.5 ? 1.0 : 0.0;

        const DistillConfig cfg;
        DifferentiableFn fn{
            [=](std::span<const double> q) {
                LearnerState s = student;
                assign_flat(s, q);
                return total_loss(s, &teacher, x, y, cfg, terms).breakdown.total;
            },
            [=](std::span<const double> q) {
                LearnerState s = student;
                assign_flat(s, q);
                return total_loss(s, &teacher, x, y, cfg, terms).grads;
            },
        };
        return {std::move(fn), std::move(p)};
    };
}

const std::vector<std::pair<std::string, CaseFactory>>& registry() {
    static const std::vector<std::pair<std::string, CaseFactory>> items = {
        {"affine", affine_case},
        {"relu", relu_case},
        {"sigmoid", sigmoid_case},
        {"log", log_case},
        {"l2_normalize", l2_normalize_case},
        {"dot", dot_case},
        {"extractor", extractor_case},
        {"learner_logits", learner_case},
        {"bce_indl", bce_case},
        {"od_loss", od_case},
        {"fd_loss", fd_case},
        {"total_loss[FT]", total_case({false, false, false})},
        {"total_loss[OD_ONLY]", total_case({false, true, false})},
        {"total_loss[IFD]", total_case({true, false, true})},
        {"total_loss[IODFD]", total_case({true, true, true})},
    };
    return items;
}

}  // namespace

std::vector<std::string> gradcheck_item_names() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

std::vector<GradCheckItem> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
    if (options.points < 1) throw ConfigError("gradcheck: points must be >= 1");
    if (!options.corrupt_item.empty()) {
        const auto names = gradcheck_item_names();
        if (std::find(names.begin(), names.end(), options.corrupt_item) == names.end()) {
            throw ConfigError("gradcheck: unknown item '" + options.corrupt_item + "'");
        }
    }
    std::vector<GradCheckItem> out;
    std::uint64_t tag = 0;
    for (const auto& [name, factory] : registry()) {
        GradCheckItem item{name, 0.0, true, false};
        Rng rng(Rng::derive(options.seed, ++tag));
        for (int k = 0; k < options.points; ++k) {
            auto [fn, point] = factory(rng);
            if (name == options.corrupt_item) {
                fn.gradient = [g = fn.gradient](std::span<const double> p) {
                    Vector v = g(p);
                    for (double& x : v) x = 1.01 * x + 1e-3;
                    return v;
                };
            }
            const GradCheckResult res = grad_check(fn, point, options.epsilon);
            if (res.nonfinite_coordinate) item.finite = false;
            item.worst_relative_error = std::max(item.worst_relative_error, res.max_relative_error);
        }
        item.passed = item.finite && item.worst_relative_error < options.tolerance;
        out.push_back(std::move(item));
    }
    return out;
}

}  // namespace cil
