#pragma once

#include <functional>
#include <span>
#include <vector>

namespace cfpp::detail {

/// Returns the objective value and writes its gradient into the second argument. Non-finite
/// values mark infeasible points and make the line search back off.
using Objective = std::function<double(std::span<const double>, std::span<double>)>;

struct OptimizeResult {
    std::vector<double> x;
    double value{0.0};
    int iterations{0};
    bool converged{false};
};

/// Quasi-Newton (BFGS, inverse-Hessian form) ascent with Armijo backtracking.
[[nodiscard]] OptimizeResult maximize_bfgs(const Objective& objective, std::vector<double> x0,
                                           int max_iterations, double gradient_tolerance);

}  // namespace cfpp::detail
