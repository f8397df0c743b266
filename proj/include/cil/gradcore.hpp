#pragma once

// ---------------------------------------------------------------------------
// Numeric carriers, differentiable primitives with hand-derived backward
// rules, a central-difference gradient checker, and the optimizer pieces
// (SGD with momentum, cosine-annealed learning rate).
//
// Backward rules are vector-Jacobian products: given dL/d(output) they
// return (or accumulate) dL/d(input) and dL/d(parameters).
// ---------------------------------------------------------------------------

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cil {

using Vector = std::vector<double>;

// Dense row-major matrix. Shape is fixed at construction.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Throws ConfigError when the two extents differ; `what` names the operation.
void require_same_size(std::size_t a, std::size_t b, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

// --- differentiable primitives --------------------------------------------

// y = W x + b, W is (out x in).
Vector affine_forward(const Matrix& weight, std::span<const double> bias,
                      std::span<const double> x);
// Accumulates into d_weight (row-major, out x in) and d_bias; overwrites dx
// unless it is empty.
void affine_backward(const Matrix& weight, std::span<const double> x,
                     std::span<const double> dy, std::span<double> d_weight,
                     std::span<double> d_bias, std::span<double> dx);

Vector relu(std::span<const double> x);
Vector relu_backward(std::span<const double> x, std::span<const double> dy);

double sigmoid(double z);
Vector sigmoid(std::span<const double> z);
// dy * s * (1 - s), given s = sigmoid(z).
Vector sigmoid_backward(std::span<const double> s, std::span<const double> dy);

// log(x + eps), elementwise; requires x + eps > 0.
Vector log_eps(std::span<const double> x, double eps);
Vector log_eps_backward(std::span<const double> x, double eps, std::span<const double> dy);

// x / ||x||; throws DegenerateInputError for a zero vector.
Vector l2_normalize(std::span<const double> x);
Vector l2_normalize_backward(std::span<const double> x, std::span<const double> dy);

// --- gradient checking ----------------------------------------------------

struct DifferentiableFn {
    std::function<double(std::span<const double>)> value;
    std::function<Vector(std::span<const double>)> gradient;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_coordinate = 0;
    // Set when f(p +- eps e_i) or the analytic gradient was non-finite.
    std::optional<std::size_t> nonfinite_coordinate;

    bool passed(double tolerance) const {
        return !nonfinite_coordinate && max_relative_error < tolerance;
    }
};

// Max over coordinates of |analytic - central| / max(1e-8, |analytic| + |central|),
// with central = (f(p + eps e_i) - f(p - eps e_i)) / (2 eps).
GradCheckResult grad_check(const DifferentiableFn& fn, std::span<const double> point,
                           double epsilon = 1e-5);

// --- optimization ---------------------------------------------------------

// velocity <- momentum * velocity + grads;  params <- params - lr * velocity.
// Throws ConfigError on shape/argument errors and NumericError when an
// updated parameter is non-finite.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double lr, double momentum);

// lr0 * (1 + cos(pi * epoch / total_epochs)) / 2, minimum LR 0.
double cosine_lr(int epoch, int total_epochs, double lr0);

}  // namespace cil
