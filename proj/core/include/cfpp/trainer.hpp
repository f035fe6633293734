#pragma once

#include "cfpp/event.hpp"
#include "cfpp/iptw.hpp"
#include "cfpp/neural.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfpp {

struct TrainConfig {
    int epochs{50};
    int batch_count{1};
    /// Weight refresh period in epochs; nullopt means never (plain maximum likelihood).
    std::optional<int> eta{5};
    int bins_per_axis{25};
    double learning_rate{0.02};
    double grad_clip{5.0};
    double cap{1e6};
    bool stabilized{false};
    int steps_per_batch{1};
    std::uint64_t seed{0};
    neural::IntegralMode integral_mode{};
    int threads{1};

    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct ModelSpec {
    neural::ModelShape shape{};
    double init_scale{0.1};
    /// Initial total rate; defaults to the dataset's events per unit time.
    std::optional<double> base_rate;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainReport {
    /// Full-data weighted objective after each epoch, before that epoch's weight refresh.
    std::vector<double> trace;
    neural::NeuralModel model;
    WeightTable weights;
    std::optional<TransitionTable> table;
    int refresh_count{0};
};

/// Mean weighted log-likelihood over the sequences. `weights` is empty (all ones) or holds one
/// list per sequence.
[[nodiscard]] double weighted_objective(const neural::NeuralModel& model,
                                        std::span<const EventSequence> batch,
                                        std::span<const std::vector<double>> weights, int threads = 1);

/// Gradient of weighted_objective, reduced in sequence order.
[[nodiscard]] neural::LikelihoodGradient weighted_objective_gradient(
    const neural::NeuralModel& model, std::span<const EventSequence> batch,
    std::span<const std::vector<double>> weights, int threads = 1);

/// Alternating weighted maximum likelihood and weight refresh. Every training sequence must
/// carry a category whenever refreshes can happen.
[[nodiscard]] TrainReport train(const Dataset& data, const ModelSpec& spec, const TrainConfig& config);

/// Rebuilds the transition table and weights from trajectories under the given model.
struct WeightRefresh {
    TransitionTable table;
    WeightTable weights;
};
[[nodiscard]] WeightRefresh refresh_weights(const neural::NeuralModel& model, const Dataset& data,
                                            const TrainConfig& config);

[[nodiscard]] std::string train_config_to_json(const TrainConfig& config);
/// Fields present in `json` override `defaults`; unknown keys are rejected.
[[nodiscard]] TrainConfig train_config_from_json(const std::string& json, TrainConfig defaults = {});
[[nodiscard]] std::string train_report_to_json(const TrainReport& report, const TrainConfig& config);

}  // namespace cfpp
