#pragma once

#include "cfpp/classical.hpp"
#include "cfpp/event.hpp"
#include "cfpp/inference.hpp"
#include "cfpp/iptw.hpp"
#include "cfpp/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cfpp {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

enum class Scale { desk, full };

struct GeneratorConfig {
    enum class Kind { exp_hawkes, neural_decay_cell };
    Kind kind{Kind::exp_hawkes};
    ExpHawkesParams hawkes{};
    /// When set, beta is drawn uniformly from [first, second] for every sequence.
    std::optional<std::pair<double, double>> beta_range;
    /// Decay-cell generator: embedding size, parameter seed, initial rate and weight scale.
    int neural_q{2};
    std::uint64_t neural_seed{20240501};
    double neural_base_rate{0.3};
    double neural_scale{1.0};
};

enum class Method { c_rmtpp, rmtpp, r_rmtpp, c_nh, nh, r_nh, exp_hawkes, self_correcting };

[[nodiscard]] std::string to_string(Method m);
/// Accepts the method names plus the aliases counterfactual, unweighted and random-category.
[[nodiscard]] Method parse_method(const std::string& s);
[[nodiscard]] std::vector<Method> parse_methods(const std::string& comma_list);
[[nodiscard]] bool is_classical(Method m);

struct ExperimentSpec {
    std::string id{"custom"};
    std::vector<GeneratorConfig> generators;
    std::vector<int> train_counts;
    std::vector<int> test_counts;
    double horizon{kDefaultHorizon};
    /// Attach marks from the three-mark time-phased pmf.
    bool marked{false};
    int q{1};
    std::vector<Method> methods;
    std::vector<std::uint64_t> seeds{1};
    /// Shared training settings; the refresh period and bins apply to the counterfactual methods.
    TrainConfig train{};
    /// Grid sections used for the decay-cell decoder's likelihood.
    int nh_sections{100};
    /// Points on [0, T) for the intensity error.
    int mae_grid{100};
    /// Grid cells for next-time prediction.
    int prediction_sections{10000};
    std::size_t max_events{10000};
    int threads{1};

    [[nodiscard]] int category_count() const { return static_cast<int>(generators.size()); }
    void validate() const;
};

/// Settings of synthetic experiments 1-6. Desk scale uses a tenth of the sequences and
/// subcritical Hawkes parameters; `published_params` restores the published ones.
[[nodiscard]] ExperimentSpec experiment_spec(int exp_id, Scale scale = Scale::desk,
                                             bool published_params = false);

[[nodiscard]] std::string experiment_spec_to_json(const ExperimentSpec& spec);
/// A JSON object naming a base experiment ("experiment": 1..6 or omitted for custom) plus
/// overrides; unknown keys are rejected.
[[nodiscard]] ExperimentSpec experiment_spec_from_json(const std::string& json);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct SyntheticData {
    Dataset train;
    /// Categories stripped.
    Dataset test;
    /// Generating intensity of each test sequence.
    std::vector<std::shared_ptr<const IntensityModel>> test_truth;
    /// Held back from the methods; used for per-category metrics.
    std::vector<int> test_categories;
};

[[nodiscard]] SyntheticData generate_synthetic(const ExperimentSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// sum_{j<r} |fitted(t_j) - truth(t_j)| at t_j = j T / r, both conditioned on the observed
/// events before t_j.
[[nodiscard]] double sequence_intensity_error(const IntensityModel& fitted, const IntensityModel& truth,
                                              const EventSequence& seq, int grid_points);

/// Mean of sequence_intensity_error over the test sequences.
[[nodiscard]] double intensity_mae(const IntensityModel& fitted,
                                   std::span<const std::shared_ptr<const IntensityModel>> truth,
                                   std::span<const EventSequence> test, int grid_points);

[[nodiscard]] double time_mae(std::span<const double> predicted, std::span<const double> actual);

/// Fraction of cases whose true mark is among the k highest scores.
[[nodiscard]] double topk_accuracy(std::span<const std::vector<double>> scores,
                                   std::span<const int> actual, int k = 5);

struct MethodResult {
    Method method{};
    std::uint64_t seed{0};
    /// False for classical baselines on marked data.
    bool applicable{true};
    double intensity_mae{0.0};
    std::vector<double> category_mae;
    std::vector<int> category_counts;
    double time_mae{0.0};
    double topk_accuracy{0.0};
    std::vector<double> trace;
};

struct MetricReport {
    std::string experiment;
    std::vector<MethodResult> results;
    double runtime_seconds{0.0};
    int mae_grid{100};
    int topk{5};
};

[[nodiscard]] MetricReport run_experiment(const ExperimentSpec& spec);

/// Same data and training settings for every method of a run; results ordered by (method, seed).
[[nodiscard]] std::vector<MethodResult> run_methods(const ExperimentSpec& spec, const SyntheticData& data,
                                                    std::uint64_t seed);

/// method,category,metric,value,seed
void write_report_csv(std::ostream& out, const MetricReport& report);
[[nodiscard]] std::string report_to_json(const MetricReport& report);

// ---------------------------------------------------------------------------
// Sweeps and figures
// ---------------------------------------------------------------------------

enum class SweepAxis { bins, eta };

struct SweepPoint {
    /// "inf" for an infinite refresh period.
    std::string value;
    MetricReport report;
};

struct SweepResult {
    SweepAxis axis{SweepAxis::bins};
    std::vector<SweepPoint> points;
    /// Unweighted run of each decoder used for the percentage column.
    MetricReport reference;
};

/// One full run per value over the spec's counterfactual methods, data fixed by the seeds.
/// Values are bin counts, or refresh periods where 0 stands for infinity.
[[nodiscard]] SweepResult sweep(const ExperimentSpec& spec, SweepAxis axis, std::span<const int> values);

/// value,method,seed,intensity_mae,pct_vs_unweighted
void write_sweep_csv(std::ostream& out, const SweepResult& result);

/// One CSV per category: transition rows (u_prev, u, f) and marginal rows (u, p). With q > 1
/// each axis is exported separately with the other axes summed out, tagged transition_axis.
/// Returns the written paths.
std::vector<std::filesystem::path> export_transition_histogram(const TransitionTable& table,
                                                               const std::filesystem::path& dir,
                                                               const std::string& prefix = "transition");

}  // namespace cfpp
