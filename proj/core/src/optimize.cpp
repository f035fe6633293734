#include "optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cfpp::detail {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double max_abs(std::span<const double> a) {
    double m = 0.0;
    for (double v : a) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

}  // namespace

OptimizeResult maximize_bfgs(const Objective& objective, std::vector<double> x0,
                             int max_iterations, double gradient_tolerance) {
    const std::size_t n = x0.size();
    std::vector<double> x = std::move(x0);
    std::vector<double> grad(n);
    // Work with the negated objective so the textbook minimization form applies.
    double value = -objective(x, grad);
    for (double& g : grad) {
        g = -g;
    }
    if (!std::isfinite(value)) {
        return {x, -value, 0, false};
    }

    std::vector<double> inv_hessian(n * n, 0.0);
    bool hessian_is_identity = true;
    auto reset_hessian = [&] {
        hessian_is_identity = true;
        std::fill(inv_hessian.begin(), inv_hessian.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            inv_hessian[i * n + i] = 1.0;
        }
    };
    reset_hessian();

    std::vector<double> direction(n), x_new(n), grad_new(n), s(n), y(n), hy(n);
    int iter = 0;
    bool converged = false;
    bool first_step = true;
    for (; iter < max_iterations; ++iter) {
        if (max_abs(grad) <= gradient_tolerance * (1.0 + std::abs(value))) {
            converged = true;
            break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                d -= inv_hessian[i * n + j] * grad[j];
            }
            direction[i] = d;
        }
        double slope = dot(grad, direction);
        if (!(slope < 0.0)) {
            reset_hessian();
            for (std::size_t i = 0; i < n; ++i) {
                direction[i] = -grad[i];
            }
            slope = dot(grad, direction);
        }

        double step = first_step ? std::min(1.0, 1.0 / std::max(1e-12, max_abs(grad))) : 1.0;
        first_step = false;
        double value_new = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < n; ++i) {
                x_new[i] = x[i] + step * direction[i];
            }
            value_new = -objective(x_new, grad_new);
            if (std::isfinite(value_new) && value_new <= value + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No descent along a quasi-Newton direction: retry once from steepest descent.
            if (!hessian_is_identity) {
                reset_hessian();
                first_step = true;
                continue;
            }
            converged = true;
            break;
        }
        for (double& g : grad_new) {
            g = -g;
        }
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - x[i];
            y[i] = grad_new[i] - grad[i];
        }
        const double sy = dot(s, y);
        if (sy > 1e-14) {
            const double rho = 1.0 / sy;
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += inv_hessian[i * n + j] * y[j];
                }
                hy[i] = acc;
            }
            const double yhy = dot(y, hy);
            hessian_is_identity = false;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    inv_hessian[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) +
                                              (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        const double improvement = value - value_new;
        x.swap(x_new);
        grad.swap(grad_new);
        value = value_new;
        if (improvement >= 0.0 && improvement <= 1e-14 * (1.0 + std::abs(value)) &&
            max_abs(s) <= 1e-12 * (1.0 + max_abs(x))) {
            converged = true;
            ++iter;
            break;
        }
    }
    return {x, -value, iter, converged};
}

}  // namespace cfpp::detail
