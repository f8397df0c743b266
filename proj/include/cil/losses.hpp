#pragma once

// ---------------------------------------------------------------------------
// Training losses for the incremental learner.
//
//   bce_indl   binary cross-entropy over the logits of the current-phase
//              classes only; old-class logits are left to distillation.
//   od_loss    KL(pi(sigmoid(teacher_old)) || pi(sigmoid(student_old))) where
//              pi(u)_i = (u_i + eps)^(1/delta) / sum_j (u_j + eps)^(1/delta).
//   fd_loss    1 - cosine(teacher embedding, student embedding).
//   total      bce + fd + lambda * od,  lambda = omega * sqrt(|C| / |C_new|).
//
// Every batch quantity is the mean of the per-example values. Teacher inputs
// are constants: no gradient is produced for them.
// ---------------------------------------------------------------------------

#include <cstddef>
#include <span>

#include "cil/gradcore.hpp"
#include "cil/model.hpp"

namespace cil {

struct DistillConfig {
    double delta = 2.0;  // rescale exponent denominator, >= 1
    double omega = 2.0;  // lambda multiplier, > 0
    double eps = 1e-8;   // floor inside logs and the rescale base

    void validate() const;
};

struct LossBreakdown {
    double bce = 0.0;
    double od = 0.0;
    double fd = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

// Value of a per-example loss and its gradient w.r.t. the student input.
struct LossGrad {
    double value = 0.0;
    Vector grad;
};

// --- per-example ------------------------------------------------------------

LossGrad bce_indl(std::span<const double> logits, std::span<const double> targets,
                  std::size_t old_count);

// Throws DegenerateInputError when no u_j exceeds eps, ConfigError for
// negative entries or delta < 1.
Vector rescale_pi(std::span<const double> u, double delta, double eps = 1e-8);

// Returns 0 with an empty gradient when there are no old classes.
LossGrad od_loss(std::span<const double> teacher_old, std::span<const double> student_old,
                 const DistillConfig& cfg);

// Throws DegenerateInputError when either vector has norm <= eps.
LossGrad fd_loss(std::span<const double> v_teacher, std::span<const double> v_student,
                 double eps = 1e-8);

// --- batch means (rows are examples) ----------------------------------------

double bce_indl(const Matrix& logits, const Matrix& targets, std::size_t old_count);
double od_loss(const Matrix& teacher_old, const Matrix& student_old, const DistillConfig& cfg);
double fd_loss(const Matrix& v_teacher, const Matrix& v_student, double eps = 1e-8);

double adaptive_lambda(std::size_t total_classes, std::size_t new_classes, double omega);

// Which terms of the combined loss are active.
struct LossTerms {
    bool indl_mask = true;  // false: BCE over every logit
    bool use_od = false;
    bool use_fd = false;
};

struct TotalLoss {
    LossBreakdown breakdown;
    Vector grads;  // flat layout of `model.hpp`, mean over the batch
};

// Combined loss over a batch. `targets` has one column per learner class.
// Distillation terms are only engaged when the learner has old classes; a
// teacher is then required for them.
TotalLoss total_loss(const LearnerState& learner, const FrozenTeacher* teacher,
                     const Matrix& inputs, const Matrix& targets, const DistillConfig& cfg,
                     const LossTerms& terms);

}  // namespace cil
