#pragma once

#include "cfpp/event.hpp"

#include <limits>
#include <span>

namespace cfpp {

/// Common surface of every temporal intensity: classical generators and baselines, the
/// neural models (through an adapter), and the ground-truth models held by the harness.
///
/// `history` always holds the events strictly before the evaluation time. Rates are totals
/// over the mark space.
class IntensityModel {
public:
    virtual ~IntensityModel() = default;

    [[nodiscard]] virtual double intensity(double t, std::span<const Event> history) const = 0;

    /// Integral of the rate over [t0, t1) assuming no event inside the interval.
    [[nodiscard]] virtual double compensator(double t0, double t1,
                                             std::span<const Event> history) const = 0;

    /// A value >= intensity(s) for every s in [t0, t1) with no new events.
    [[nodiscard]] virtual double upper_bound(double t0, double t1,
                                             std::span<const Event> history) const = 0;

    /// Longest window starting at t over which upper_bound stays useful for thinning.
    [[nodiscard]] virtual double bound_window(double /*t*/, std::span<const Event> /*history*/) const {
        return std::numeric_limits<double>::infinity();
    }

    /// Temporal log-likelihood of a sequence on [0, horizon). Marks are ignored unless a
    /// derived model overrides this.
    [[nodiscard]] virtual double log_likelihood(const EventSequence& seq) const;
};

}  // namespace cfpp
