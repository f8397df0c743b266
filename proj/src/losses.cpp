#include "cil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cil/error.hpp"

namespace cil {

void DistillConfig::validate() const {
    if (!(delta >= 1.0)) throw ConfigError("DistillConfig: delta must be >= 1");
    if (!(omega > 0.0)) throw ConfigError("DistillConfig: omega must be > 0");
    if (!(eps > 0.0)) throw ConfigError("DistillConfig: eps must be > 0");
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// Log of the rescaled distribution: (1/delta) log(u_i + eps) - log sum_j (u_j + eps)^(1/delta).
Vector log_rescaled(std::span<const double> u, double delta, double eps) {
    Vector la(u.size());
    double mx = -INFINITY;
    for (std::size_t i = 0; i < u.size(); ++i) {
        la[i] = std::log(u[i] + eps) / delta;
        mx = std::max(mx, la[i]);
    }
    double sum = 0.0;
    for (double v : la) sum += std::exp(v - mx);
    const double log_norm = mx + std::log(sum);
    for (double& v : la) v -= log_norm;
    return la;
}

}  // namespace

LossGrad bce_indl(std::span<const double> logits, std::span<const double> targets,
                  std::size_t old_count) {
    require_same_size(logits.size(), targets.size(), "bce_indl");
    if (old_count >= logits.size()) {
        throw ConfigError("bce_indl: old_count " + std::to_string(old_count) +
                          " leaves no current-phase classes");
    }
    LossGrad out{0.0, Vector(logits.size(), 0.0)};
    for (std::size_t k = old_count; k < logits.size(); ++k) {
        const double o = logits[k];
        const double y = targets[k];
        // -[y log s(o) + (1 - y) log(1 - s(o))] = softplus(o) - y o
        out.value += softplus(o) - y * o;
        out.grad[k] = sigmoid(o) - y;
    }
    return out;
}

Vector rescale_pi(std::span<const double> u, double delta, double eps) {
    if (!(delta >= 1.0)) throw ConfigError("rescale_pi: delta must be >= 1");
    if (u.empty()) throw DegenerateInputError("rescale_pi: empty input");
    bool any = false;
    for (double v : u) {
        if (v < 0.0) throw ConfigError("rescale_pi: negative entry");
        any = any || v > eps;
    }
    if (!any) throw DegenerateInputError("rescale_pi: all entries are (near) zero");
    Vector p = log_rescaled(u, delta, eps);
    for (double& v : p) v = std::exp(v);
    return p;
}

LossGrad od_loss(std::span<const double> teacher_old, std::span<const double> student_old,
                 const DistillConfig& cfg) {
    require_same_size(teacher_old.size(), student_old.size(), "od_loss");
    const std::size_t n = student_old.size();
    LossGrad out{0.0, Vector(n, 0.0)};
    if (n == 0) return out;

    const Vector st = sigmoid(teacher_old);
    const Vector ss = sigmoid(student_old);
    const Vector log_p = log_rescaled(st, cfg.delta, cfg.eps);
    const Vector log_q = log_rescaled(ss, cfg.delta, cfg.eps);

    double kl = 0.0;
    double sum_p = 0.0;
    Vector p(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(log_p[i]);
        sum_p += p[i];
        kl += p[i] * (log_p[i] - log_q[i]);
    }
    out.value = std::max(kl, 0.0);

    // d KL / d log a_k = sum_p * q_k - p_k, with log a_k = log(s_k + eps) / delta.
    for (std::size_t k = 0; k < n; ++k) {
        const double q = std::exp(log_q[k]);
        const double dlog_a = sum_p * q - p[k];
        out.grad[k] = dlog_a * ss[k] * (1.0 - ss[k]) / ((ss[k] + cfg.eps) * cfg.delta);
    }
    return out;
}

LossGrad fd_loss(std::span<const double> v_teacher, std::span<const double> v_student,
                 double eps) {
    require_same_size(v_teacher.size(), v_student.size(), "fd_loss");
    const double nt = l2_norm(v_teacher);
    const double ns = l2_norm(v_student);
    if (!(nt > eps) || !(ns > eps)) throw DegenerateInputError("fd_loss: zero-norm feature vector");
    const double c = dot(v_teacher, v_student) / (nt * ns);
    LossGrad out{std::clamp(1.0 - c, 0.0, 2.0), Vector(v_student.size())};
    // d(1 - cos)/dv = -(t / (|t||v|) - cos * v / |v|^2)
    for (std::size_t i = 0; i < v_student.size(); ++i) {
        out.grad[i] = -(v_teacher[i] / (nt * ns) - c * v_student[i] / (ns * ns));
    }
    return out;
}

namespace {

template <typename Fn>
double batch_mean(const Matrix& a, const Matrix& b, const char* what, Fn&& per_example) {
    require_same_size(a.rows(), b.rows(), what);
    if (a.rows() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += per_example(a.row(r), b.row(r));
    return s / static_cast<double>(a.rows());
}

}  // namespace

double bce_indl(const Matrix& logits, const Matrix& targets, std::size_t old_count) {
    return batch_mean(logits, targets, "bce_indl batch", [&](auto o, auto y) {
        return bce_indl(o, y, old_count).value;
    });
}

double od_loss(const Matrix& teacher_old, const Matrix& student_old, const DistillConfig& cfg) {
    return batch_mean(teacher_old, student_old, "od_loss batch", [&](auto t, auto s) {
        return od_loss(t, s, cfg).value;
    });
}

double fd_loss(const Matrix& v_teacher, const Matrix& v_student, double eps) {
    return batch_mean(v_teacher, v_student, "fd_loss batch", [&](auto t, auto s) {
        return fd_loss(t, s, eps).value;
    });
}

double adaptive_lambda(std::size_t total_classes, std::size_t new_classes, double omega) {
    if (new_classes == 0) throw ConfigError("adaptive_lambda: new_classes must be >= 1");
    if (total_classes < new_classes) {
        throw ConfigError("adaptive_lambda: total_classes must be >= new_classes");
    }
    if (!(omega > 0.0)) throw ConfigError("adaptive_lambda: omega must be positive");
    return omega * std::sqrt(static_cast<double>(total_classes) / static_cast<double>(new_classes));
}

TotalLoss total_loss(const LearnerState& learner, const FrozenTeacher* teacher,
                     const Matrix& inputs, const Matrix& targets, const DistillConfig& cfg,
                     const LossTerms& terms) {
    cfg.validate();
    const std::size_t n_classes = learner.classifier.class_count();
    const std::size_t n_old = learner.old_class_count;
    require_same_size(inputs.rows(), targets.rows(), "total_loss batch");
    require_same_size(targets.cols(), n_classes, "total_loss targets");
    if (inputs.rows() == 0) throw ConfigError("total_loss: empty batch");

    const bool od_on = terms.use_od && n_old > 0;
    const bool fd_on = terms.use_fd && n_old > 0;
    if ((od_on || fd_on) && teacher == nullptr) {
        throw ConfigError("total_loss: distillation enabled without a teacher");
    }
    if (teacher != nullptr && (od_on || fd_on)) {
        require_same_size(teacher->state().classifier.class_count(), n_old,
                          "total_loss teacher classes");
    }

    TotalLoss out;
    out.grads.assign(parameter_count(learner), 0.0);
    auto& b = out.breakdown;
    b.lambda = od_on ? adaptive_lambda(n_classes, learner.new_class_count, cfg.omega) : 0.0;

    const std::size_t bce_from = terms.indl_mask ? n_old : 0;
    const double inv_m = 1.0 / static_cast<double>(inputs.rows());
    Vector d_emb;
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        const auto x = inputs.row(r);
        const ForwardTrace tr = forward(learner, x);

        LossGrad bce = bce_indl(tr.logits, targets.row(r), bce_from);
        b.bce += bce.value;
        Vector d_logits = std::move(bce.grad);

        if (od_on) {
            const Vector t_old = teacher->logits(x);
            const LossGrad od =
                od_loss(t_old, std::span<const double>(tr.logits).first(n_old), cfg);
            b.od += od.value;
            for (std::size_t k = 0; k < n_old; ++k) d_logits[k] += b.lambda * od.grad[k];
        }
        d_emb.clear();
        if (fd_on) {
            const LossGrad fd = fd_loss(teacher->features(x), tr.embedding, cfg.eps);
            b.fd += fd.value;
            d_emb = fd.grad;
            for (double& g : d_emb) g *= inv_m;
        }
        for (double& g : d_logits) g *= inv_m;
        backward(learner, tr, d_logits, d_emb, out.grads);
    }
    b.bce *= inv_m;
    b.od *= inv_m;
    b.fd *= inv_m;
    b.total = b.bce + b.fd + b.lambda * b.od;
    return out;
}

}  // namespace cil
