#pragma once

#include "cfpp/event.hpp"
#include "cfpp/intensity_model.hpp"
#include "cfpp/rng.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cfpp {

// ---------------------------------------------------------------------------
// Parameters and closed-form intensities
// ---------------------------------------------------------------------------

/// lambda(t) = mu + sum_{t_i < t} alpha * exp(-beta (t - t_i))
struct ExpHawkesParams {
    double mu{0.1};
    double alpha{0.5};
    double beta{1.0};

    [[nodiscard]] double branching_ratio() const { return alpha / beta; }
    [[nodiscard]] bool stationary() const { return branching_ratio() < 1.0; }
    void validate() const;
};

/// lambda(t) = exp(mu * t - alpha * N(t-))
struct SelfCorrectingParams {
    double mu{1.0};
    double alpha{1.0};

    void validate() const;
};

struct PoissonParams {
    double rate{1.0};

    void validate() const;
};

[[nodiscard]] double exp_hawkes_intensity(double t, std::span<const double> history,
                                          const ExpHawkesParams& p);

/// Integral of the Hawkes rate over [t0, t1); history times must be <= t0.
[[nodiscard]] double exp_hawkes_compensator(double t0, double t1, std::span<const double> history,
                                            const ExpHawkesParams& p);

[[nodiscard]] double self_correcting_intensity(double t, std::size_t event_count_before_t,
                                               const SelfCorrectingParams& p);

[[nodiscard]] double self_correcting_compensator(double t0, double t1, std::size_t event_count,
                                                 const SelfCorrectingParams& p);

// ---------------------------------------------------------------------------
// IntensityModel realizations
// ---------------------------------------------------------------------------

class PoissonModel final : public IntensityModel {
public:
    explicit PoissonModel(PoissonParams p);

    double intensity(double t, std::span<const Event> history) const override;
    double compensator(double t0, double t1, std::span<const Event> history) const override;
    double upper_bound(double t0, double t1, std::span<const Event> history) const override;
    double log_likelihood(const EventSequence& seq) const override;

    [[nodiscard]] const PoissonParams& params() const { return p_; }

private:
    PoissonParams p_;
};

class ExpHawkesModel final : public IntensityModel {
public:
    explicit ExpHawkesModel(ExpHawkesParams p);

    double intensity(double t, std::span<const Event> history) const override;
    double compensator(double t0, double t1, std::span<const Event> history) const override;
    /// The rate only decays between events, so its value at t0 (counting events at t0) bounds
    /// the whole interval.
    double upper_bound(double t0, double t1, std::span<const Event> history) const override;
    double log_likelihood(const EventSequence& seq) const override;

    [[nodiscard]] const ExpHawkesParams& params() const { return p_; }

private:
    ExpHawkesParams p_;
};

class SelfCorrectingModel final : public IntensityModel {
public:
    explicit SelfCorrectingModel(SelfCorrectingParams p);

    double intensity(double t, std::span<const Event> history) const override;
    double compensator(double t0, double t1, std::span<const Event> history) const override;
    /// Monotone between events: the larger endpoint value.
    double upper_bound(double t0, double t1, std::span<const Event> history) const override;
    double bound_window(double t, std::span<const Event> history) const override;
    double log_likelihood(const EventSequence& seq) const override;

    [[nodiscard]] const SelfCorrectingParams& params() const { return p_; }

private:
    SelfCorrectingParams p_;
};

// ---------------------------------------------------------------------------
// Marks
// ---------------------------------------------------------------------------

/// One time piece of a mark distribution; applies to t_low <= t <= t_high.
struct MarkPiece {
    double t_low{0.0};
    double t_high{0.0};
    std::vector<double> probabilities;
};

/// Piecewise-in-time categorical distribution f(m | t). Pieces are closed intervals matched in
/// order, so a boundary time belongs to the earlier piece.
class MarkPmf {
public:
    explicit MarkPmf(std::vector<MarkPiece> pieces);

    /// Same row for every time in [0, horizon].
    [[nodiscard]] static MarkPmf constant(std::vector<double> probabilities, double horizon);

    /// Three marks on [0, 100]: (0.2, 0.8, 0) up to t = 40, (0.2, 0, 0.8) up to t = 80, and
    /// mark 0 with certainty afterwards.
    [[nodiscard]] static MarkPmf time_phased_three_marks(double horizon = kDefaultHorizon);

    [[nodiscard]] const std::vector<double>& row_at(double t) const;
    [[nodiscard]] int mark_count() const { return mark_count_; }
    [[nodiscard]] const std::vector<MarkPiece>& pieces() const { return pieces_; }

private:
    std::vector<MarkPiece> pieces_;
    int mark_count_{0};
};

[[nodiscard]] int sample_mark(double t, const MarkPmf& pmf, Rng& rng);

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

class ExplosionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ThinningOptions {
    std::size_t max_events{10000};
};

/// Ogata thinning on [0, horizon). Marks come from `mark_pmf` when given, otherwise 0.
[[nodiscard]] EventSequence thinning_simulate(const IntensityModel& model, double horizon,
                                              const MarkPmf* mark_pmf, Rng& rng,
                                              const ThinningOptions& options = {});

/// Sequence i uses stream_rng(master_seed, first_stream + i); ids are "<prefix><i>".
[[nodiscard]] std::vector<EventSequence> simulate_sequences(
    const IntensityModel& model, std::size_t count, double horizon, const MarkPmf* mark_pmf,
    std::uint64_t master_seed, std::uint64_t first_stream, const std::string& id_prefix,
    int threads = 1, const ThinningOptions& options = {});

// ---------------------------------------------------------------------------
// Maximum likelihood
// ---------------------------------------------------------------------------

enum class ModelFamily { poisson, exp_hawkes, self_correcting };

[[nodiscard]] std::string to_string(ModelFamily f);
[[nodiscard]] ModelFamily parse_model_family(const std::string& s);

using ClassicalParams = std::variant<PoissonParams, ExpHawkesParams, SelfCorrectingParams>;

[[nodiscard]] std::shared_ptr<const IntensityModel> make_model(const ClassicalParams& params);

struct MleOptions {
    int restarts{8};
    int max_iterations{400};
    double gradient_tolerance{1e-8};
    std::uint64_t seed{0};
};

struct MleResult {
    ClassicalParams params;
    double log_likelihood{0.0};
    /// Objective value at each start, in the order the starts were tried.
    std::vector<double> start_log_likelihoods;
    int iterations{0};
};

class NonFiniteLikelihood : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Maximizes the summed log-likelihood over all sequences (marks ignored). Parameters that must
/// be positive are optimized on the log scale.
[[nodiscard]] MleResult classical_mle(const Dataset& data, ModelFamily family,
                                      const MleOptions& options = {});

/// Summed log-likelihood and its gradient in the optimizer's coordinates, exposed for tests.
/// Coordinates: exp_hawkes (log mu, log alpha, log beta); self_correcting (mu, log alpha);
/// poisson (log rate).
[[nodiscard]] double classical_objective(const Dataset& data, ModelFamily family,
                                         std::span<const double> x, std::span<double> grad);

// ---------------------------------------------------------------------------
// Goodness of fit
// ---------------------------------------------------------------------------

/// Compensator increments between consecutive events (first measured from 0), keeping the
/// gaps that start before `starts_before`. Under the generating model these are i.i.d. Exp(1).
/// Gaps cut off at a fixed window end are not: the censored last gap biases the rest short.
/// Simulate past the window and pass its end here instead.
[[nodiscard]] std::vector<double> rescaled_interarrivals(
    const IntensityModel& model, const EventSequence& seq,
    double starts_before = std::numeric_limits<double>::infinity());

struct KsResult {
    double statistic{0.0};
    double p_value{1.0};
    std::size_t n{0};
};

/// One-sample Kolmogorov-Smirnov test against Exp(1) (asymptotic p-value).
[[nodiscard]] KsResult ks_test_unit_exponential(std::vector<double> samples);

}  // namespace cfpp
