#pragma once

#include "cfpp/event.hpp"
#include "cfpp/intensity_model.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfpp::neural {

/// Largest magnitude allowed for the time-head exponent before the rate is clamped.
inline constexpr double kExponentClamp = 50.0;

enum class DecoderKind {
    /// rate = exp(v.h + w (t - t_n) + b); closed-form compensator.
    exponential,
    /// The embedding relaxes toward a learned resting point between events,
    /// s(tau) = r + (h - r) exp(-gamma tau), and rate = softplus(v.s(tau) + b).
    /// Integrals are taken on a grid.
    decay_cell,
};

[[nodiscard]] std::string to_string(DecoderKind k);
[[nodiscard]] DecoderKind parse_decoder(const std::string& s);

/// How the compensator term of the log-likelihood is evaluated.
struct IntegralMode {
    enum class Kind { closed, grid };
    Kind kind{Kind::closed};
    /// Grid sections s over [0, horizon); the grid has s + 1 points.
    int sections{100};
    /// Multiply the grid sum by 1/|marks| as in the discretized objective. With false the sum over
    /// marks is used as-is, which matches the closed form.
    bool average_over_marks{true};

    [[nodiscard]] static IntegralMode closed_form() { return {}; }
    [[nodiscard]] static IntegralMode grid(int sections, bool average_over_marks = true) {
        return {Kind::grid, sections, average_over_marks};
    }
    friend bool operator==(const IntegralMode&, const IntegralMode&) = default;
};

struct ModelShape {
    int q{1};
    int mark_count{1};
    DecoderKind decoder{DecoderKind::exponential};

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

enum class Block {
    enc_recurrence,   // q x q, row i holds the weights into unit i
    enc_dt,           // q
    enc_mark,         // |M| x q mark embedding table, row m is added for mark m
    enc_bias,         // q
    dec_v,            // q
    dec_w,            // 1 (exponential decoder)
    dec_b,            // 1
    dec_mark_weight,  // |M| x q
    dec_mark_bias,    // |M|
    dec_rest,         // q, pre-sigmoid resting point (decay cell)
    dec_decay,        // 1, pre-softplus decay rate (decay cell)
};

struct ParamBlock {
    Block id;
    std::string name;
    std::size_t offset{0};
    std::size_t rows{0};
    std::size_t cols{0};

    [[nodiscard]] std::size_t size() const { return rows * cols; }

    friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

[[nodiscard]] std::vector<ParamBlock> make_layout(const ModelShape& shape);

/// Embedding in (0,1)^q.
using Embedding = std::vector<double>;

/// Read-only encoder parameters.
struct EncoderView {
    int q{0};
    std::span<const double> recurrence;
    std::span<const double> dt_weights;
    std::span<const double> mark_embedding;
    std::span<const double> bias;
};

/// All parameters of one neural point process, stored flat in layout order.
class NeuralModel {
public:
    explicit NeuralModel(ModelShape shape, IntegralMode mode = {});

    /// Small random weights; time-head bias set so the initial rate equals `base_rate`.
    [[nodiscard]] static NeuralModel initialize(ModelShape shape, IntegralMode mode,
                                                std::uint64_t seed, double base_rate = 1.0,
                                                double scale = 0.1);

    [[nodiscard]] const ModelShape& shape() const { return shape_; }
    [[nodiscard]] int q() const { return shape_.q; }
    [[nodiscard]] int mark_count() const { return shape_.mark_count; }
    [[nodiscard]] DecoderKind decoder() const { return shape_.decoder; }

    [[nodiscard]] const IntegralMode& integral_mode() const { return mode_; }
    void set_integral_mode(IntegralMode mode);

    [[nodiscard]] std::span<double> params() { return params_; }
    [[nodiscard]] std::span<const double> params() const { return params_; }
    [[nodiscard]] std::size_t param_count() const { return params_.size(); }
    [[nodiscard]] const std::vector<ParamBlock>& layout() const { return layout_; }

    [[nodiscard]] bool has_block(Block id) const;
    [[nodiscard]] const ParamBlock& block_info(Block id) const;
    [[nodiscard]] std::span<double> block(Block id);
    [[nodiscard]] std::span<const double> block(Block id) const;

    [[nodiscard]] EncoderView encoder() const;

    /// Name of the parameter at flat index i, e.g. "dec.v[1]".
    [[nodiscard]] std::string param_name(std::size_t i) const;

    friend bool operator==(const NeuralModel&, const NeuralModel&) = default;

private:
    ModelShape shape_;
    IntegralMode mode_;
    std::vector<ParamBlock> layout_;
    std::vector<double> params_;
};

/// h_0 .. h_n for a sequence with n events; h_0 is the fixed initial embedding.
class HistoryTrajectory {
public:
    HistoryTrajectory() = default;
    explicit HistoryTrajectory(int q);

    [[nodiscard]] int q() const { return q_; }
    /// Number of embeddings (events + 1).
    [[nodiscard]] std::size_t size() const { return q_ == 0 ? 0 : data_.size() / q_; }
    [[nodiscard]] std::span<const double> operator[](std::size_t i) const {
        return std::span<const double>(data_).subspan(i * q_, q_);
    }
    [[nodiscard]] std::span<const double> back() const { return (*this)[size() - 1]; }
    void push_back(std::span<const double> h);

    friend bool operator==(const HistoryTrajectory&, const HistoryTrajectory&) = default;

private:
    int q_{0};
    std::vector<double> data_;
};

[[nodiscard]] Embedding initial_embedding(int q);

/// h = sigmoid(R h_prev + u dt + E[mark] + b)
[[nodiscard]] Embedding encode_step(std::span<const double> h_prev, double dt, int mark,
                                    const EncoderView& p);

/// Folds encode_step over the events (first gap measured from 0).
[[nodiscard]] HistoryTrajectory encode_sequence(const NeuralModel& model,
                                                std::span<const Event> events);

/// Embedding after the given events plus the time of the last one (0 if none).
struct EncodedHistory {
    Embedding h;
    double last_time{0.0};
};
[[nodiscard]] EncodedHistory encode_history(const NeuralModel& model, std::span<const Event> events);

struct Intensity {
    double rate{0.0};
    /// True when the time-head exponent hit the +-kExponentClamp guard.
    bool clamped{false};
};

/// Mark distribution of the next event (history only).
[[nodiscard]] std::vector<double> mark_probabilities(const NeuralModel& model,
                                                     std::span<const double> h);

/// Rate summed over marks, tau = t - t_n >= 0.
[[nodiscard]] Intensity total_intensity(const NeuralModel& model, double tau,
                                        std::span<const double> h);

[[nodiscard]] Intensity intensity(const NeuralModel& model, double t, int mark, double t_n,
                                  std::span<const double> h);

/// Integral over [t0, t1) of the mark-summed rate given the embedding after the event at t_n.
/// Exact for the exponential decoder; adaptive Gauss-Kronrod for the decay cell.
[[nodiscard]] double time_compensator(const NeuralModel& model, double t0, double t1, double t_n,
                                      std::span<const double> h);

/// Limit of the compensator as t1 -> infinity, measured from t_n (may be infinite).
[[nodiscard]] double total_compensator(const NeuralModel& model, std::span<const double> h);

[[nodiscard]] double conditional_pdf(const NeuralModel& model, double t, int mark, double t_n,
                                     std::span<const double> h);

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Weighted log-likelihood of one sequence. `weights` holds one value per event (weight of the
/// interval ending at that event); the tail interval after the last event uses the last
/// weight. Empty `weights` means all ones.
[[nodiscard]] double sequence_log_likelihood(const NeuralModel& model, const EventSequence& seq,
                                             const HistoryTrajectory& trajectory,
                                             std::span<const double> weights,
                                             const IntegralMode& mode);

/// Same, using the model's integral mode.
[[nodiscard]] double sequence_log_likelihood(const NeuralModel& model, const EventSequence& seq,
                                             const HistoryTrajectory& trajectory,
                                             std::span<const double> weights = {});

struct LikelihoodGradient {
    double value{0.0};
    std::vector<double> gradient;
};

/// Log-likelihood and its gradient with respect to every parameter (layout order), by
/// backpropagation through the decoder and the recurrence.
[[nodiscard]] LikelihoodGradient grad_log_likelihood(const NeuralModel& model,
                                                     const EventSequence& seq,
                                                     const HistoryTrajectory& trajectory,
                                                     std::span<const double> weights,
                                                     const IntegralMode& mode);

[[nodiscard]] LikelihoodGradient grad_log_likelihood(const NeuralModel& model,
                                                     const EventSequence& seq,
                                                     const HistoryTrajectory& trajectory,
                                                     std::span<const double> weights = {});

/// A neural model seen through the IntensityModel interface (history is re-encoded per call).
class NeuralIntensity final : public IntensityModel {
public:
    explicit NeuralIntensity(std::shared_ptr<const NeuralModel> model);

    double intensity(double t, std::span<const Event> history) const override;
    double compensator(double t0, double t1, std::span<const Event> history) const override;
    /// Both decoders are monotone in time between events.
    double upper_bound(double t0, double t1, std::span<const Event> history) const override;
    double bound_window(double t, std::span<const Event> history) const override;
    double log_likelihood(const EventSequence& seq) const override;

    [[nodiscard]] const NeuralModel& model() const { return *model_; }

private:
    std::shared_ptr<const NeuralModel> model_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

[[nodiscard]] std::string checkpoint_to_json(const NeuralModel& model);
[[nodiscard]] NeuralModel checkpoint_from_json(const std::string& text);

void save_checkpoint(const NeuralModel& model, const std::filesystem::path& path);

/// Rejects files whose mark count differs from `expected_mark_count` when given.
[[nodiscard]] NeuralModel load_checkpoint(const std::filesystem::path& path,
                                          std::optional<int> expected_mark_count = std::nullopt);

}  // namespace cfpp::neural
