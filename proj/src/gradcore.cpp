#include "cil/gradcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cil/error.hpp"

namespace cil {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ConfigError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                          " vs " + std::to_string(b) + ")");
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Vector affine_forward(const Matrix& weight, std::span<const double> bias,
                      std::span<const double> x) {
    require_same_size(weight.cols(), x.size(), "affine_forward input");
    require_same_size(weight.rows(), bias.size(), "affine_forward bias");
    Vector y(weight.rows());
    for (std::size_t r = 0; r < weight.rows(); ++r) {
        const auto w = weight.row(r);
        double s = bias[r];
        for (std::size_t c = 0; c < x.size(); ++c) s += w[c] * x[c];
        y[r] = s;
    }
    return y;
}

void affine_backward(const Matrix& weight, std::span<const double> x,
                     std::span<const double> dy, std::span<double> d_weight,
                     std::span<double> d_bias, std::span<double> dx) {
    require_same_size(weight.cols(), x.size(), "affine_backward input");
    require_same_size(weight.rows(), dy.size(), "affine_backward output");
    require_same_size(d_weight.size(), weight.size(), "affine_backward d_weight");
    require_same_size(d_bias.size(), dy.size(), "affine_backward d_bias");
    for (std::size_t r = 0; r < weight.rows(); ++r) {
        const double g = dy[r];
        d_bias[r] += g;
        if (g == 0.0) continue;
        double* dw = d_weight.data() + r * x.size();
        for (std::size_t c = 0; c < x.size(); ++c) dw[c] += g * x[c];
    }
    if (dx.empty()) return;
    require_same_size(dx.size(), x.size(), "affine_backward dx");
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t r = 0; r < weight.rows(); ++r) {
        const double g = dy[r];
        if (g == 0.0) continue;
        const auto w = weight.row(r);
        for (std::size_t c = 0; c < dx.size(); ++c) dx[c] += g * w[c];
    }
}

Vector relu(std::span<const double> x) {
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Vector relu_backward(std::span<const double> x, std::span<const double> dy) {
    require_same_size(x.size(), dy.size(), "relu_backward");
    Vector dx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    return dx;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Vector sigmoid(std::span<const double> z) {
    Vector s(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) s[i] = sigmoid(z[i]);
    return s;
}

Vector sigmoid_backward(std::span<const double> s, std::span<const double> dy) {
    require_same_size(s.size(), dy.size(), "sigmoid_backward");
    Vector dz(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) dz[i] = dy[i] * s[i] * (1.0 - s[i]);
    return dz;
}

Vector log_eps(std::span<const double> x, double eps) {
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] + eps > 0.0)) throw DegenerateInputError("log_eps: argument not positive");
        y[i] = std::log(x[i] + eps);
    }
    return y;
}

Vector log_eps_backward(std::span<const double> x, double eps, std::span<const double> dy) {
    require_same_size(x.size(), dy.size(), "log_eps_backward");
    Vector dx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] / (x[i] + eps);
    return dx;
}

Vector l2_normalize(std::span<const double> x) {
    const double n = l2_norm(x);
    if (n == 0.0) throw DegenerateInputError("l2_normalize: zero-norm vector");
    Vector y(x.begin(), x.end());
    for (double& v : y) v /= n;
    return y;
}

Vector l2_normalize_backward(std::span<const double> x, std::span<const double> dy) {
    require_same_size(x.size(), dy.size(), "l2_normalize_backward");
    const double n = l2_norm(x);
    if (n == 0.0) throw DegenerateInputError("l2_normalize_backward: zero-norm vector");
    // d(x/|x|) = (I - u u^T) / |x|
    double proj = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) proj += dy[i] * x[i] / n;
    Vector dx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = (dy[i] - proj * x[i] / n) / n;
    return dx;
}

GradCheckResult grad_check(const DifferentiableFn& fn, std::span<const double> point,
                           double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("grad_check: epsilon must be positive");
    GradCheckResult result;
    const Vector analytic = fn.gradient(point);
    require_same_size(analytic.size(), point.size(), "grad_check gradient");

    Vector probe(point.begin(), point.end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + epsilon;
        const double up = fn.value(probe);
        probe[i] = saved - epsilon;
        const double down = fn.value(probe);
        probe[i] = saved;

        if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i])) {
            result.nonfinite_coordinate = i;
            return result;
        }
        const double central = (up - down) / (2.0 * epsilon);
        const double err = std::abs(analytic[i] - central) /
                           std::max(1e-8, std::abs(analytic[i]) + std::abs(central));
        if (err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst_coordinate = i;
        }
    }
    return result;
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double lr, double momentum) {
    require_same_size(params.size(), grads.size(), "sgd_momentum_step grads");
    require_same_size(params.size(), velocity.size(), "sgd_momentum_step velocity");
    if (!(lr > 0.0)) throw ConfigError("sgd_momentum_step: lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("sgd_momentum_step: momentum must lie in [0, 1)");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
        if (!std::isfinite(params[i])) {
            throw NumericError("sgd_momentum_step: non-finite parameter at index " +
                               std::to_string(i));
        }
    }
}

double cosine_lr(int epoch, int total_epochs, double lr0) {
    if (epoch < 0 || epoch >= total_epochs) {
        throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + ")");
    }
    if (!(lr0 > 0.0)) throw ConfigError("cosine_lr: lr0 must be positive");
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return lr0 * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

}  // namespace cil
