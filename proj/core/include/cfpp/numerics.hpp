#pragma once

#include <cmath>

namespace cfpp {

/// expm1(x) / x, continuous at 0.
[[nodiscard]] inline double expm1_ratio(double x) {
    if (std::abs(x) < 1e-5) {
        return 1.0 + x * (0.5 + x / 6.0);
    }
    return std::expm1(x) / x;
}

/// Integral of u * exp(x u) over u in [0, 1], continuous at 0.
[[nodiscard]] inline double exp_first_moment_ratio(double x) {
    if (std::abs(x) < 0.5) {
        // sum_k x^k / (k! (k + 2))
        double term = 1.0;
        double sum = 0.5;
        for (int k = 1; k < 30; ++k) {
            term *= x / k;
            sum += term / (k + 2);
        }
        return sum;
    }
    return (std::exp(x) * (x - 1.0) + 1.0) / (x * x);
}

/// Integral of exp(a + w s) over s in [0, len].
[[nodiscard]] inline double exp_linear_integral(double a, double w, double len) {
    return std::exp(a) * len * expm1_ratio(w * len);
}

/// Integral of s * exp(a + w s) over s in [0, len].
[[nodiscard]] inline double exp_linear_moment(double a, double w, double len) {
    return std::exp(a) * len * len * exp_first_moment_ratio(w * len);
}

[[nodiscard]] inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

[[nodiscard]] inline double softplus(double x) {
    return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace cfpp
