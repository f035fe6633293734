#pragma once

#include "cfpp/intensity_model.hpp"
#include "cfpp/neural.hpp"
#include "cfpp/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

namespace cfpp {

struct Prediction {
    double t_hat{0.0};
    int m_hat{0};
    std::vector<double> mark_scores;
    /// Probability that no next event occurs before t_max (nonzero only for improper densities).
    double deficit_mass{0.0};
    /// Truncation point actually used, as an absolute time.
    double t_max{0.0};
    std::vector<double> sample_times;
    /// Monte Carlo standard error of t_hat (0 in grid mode).
    double std_error{0.0};
};

/// Deterministic quadrature on [t_n, t_n + span] with `sections` cells (Simpson).
struct GridQuadrature {
    int sections{10000};
    /// Window length after t_n; when absent, 20 / (rate just after t_n).
    std::optional<double> span;
    /// The window doubles until S(t_max) is within this of its limit.
    double tail_tolerance{1e-4};
    int max_doublings{30};
};

/// Mean of thinning draws truncated at the same t_max the grid mode would use.
struct McQuadrature {
    int samples{1000};
    std::uint64_t seed{0};
    GridQuadrature window{};
};

using Quadrature = std::variant<GridQuadrature, McQuadrature>;

class QuadratureBudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// f(t, m | h): the model's conditional density of the next event.
[[nodiscard]] double predictive_density(const neural::NeuralModel& model, double t, int mark,
                                        double t_n, std::span<const double> h);

/// Expected next time (conditional on an event before t_max) and the argmax mark.
[[nodiscard]] Prediction predict_next(const neural::NeuralModel& model, std::span<const double> h,
                                      double t_n, const Quadrature& quadrature = GridQuadrature{});

/// One draw of the next event by thinning; nullopt if none occurs before `limit`.
[[nodiscard]] std::optional<Event> sample_next(const neural::NeuralModel& model,
                                               std::span<const double> h, double t_n, Rng& rng,
                                               double limit);

/// Expected next time after the given history for any intensity model, by the same grid
/// rule as predict_next.
[[nodiscard]] double expected_next_time(const IntensityModel& model, std::span<const Event> history,
                                        const GridQuadrature& quadrature = {});

}  // namespace cfpp
