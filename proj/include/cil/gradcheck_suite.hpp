#pragma once

// Finite-difference verification of every differentiable primitive, the
// learner forward pass and each loss, at seeded random points.

#include <cstdint>
#include <string>
#include <vector>

namespace cil {

struct GradCheckItem {
    std::string name;
    double worst_relative_error = 0.0;
    bool finite = true;
    bool passed = false;
};

struct GradCheckSuiteOptions {
    std::uint64_t seed = 1234;
    int points = 10;
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    // Test hook: the analytic gradient of this item is deliberately skewed.
    std::string corrupt_item;
};

std::vector<GradCheckItem> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

std::vector<std::string> gradcheck_item_names();

}  // namespace cil
