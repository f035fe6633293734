#pragma once

#include "cfpp/neural.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace cfpp {

/// Uniform partition of the unit embedding cube, B bins per axis, plus R category cells.
struct BinGrid {
    int bins_per_axis{1};
    int q{1};
    int category_count{1};

    /// B^q
    [[nodiscard]] std::size_t cells_per_embedding() const;
    /// B^(2q) * R
    [[nodiscard]] std::size_t cell_count() const;
    void validate() const;

    friend bool operator==(const BinGrid&, const BinGrid&) = default;
};

/// Per-axis bin of each component: floor(h_j * B), with h_j = 1 in the last bin.
[[nodiscard]] std::vector<int> assign_bin(std::span<const double> h, const BinGrid& grid);

/// Row-major linear index of assign_bin (axis 0 most significant).
[[nodiscard]] std::size_t linear_bin(std::span<const double> h, const BinGrid& grid);

/// Inverse of linear_bin.
[[nodiscard]] std::vector<int> unflatten_bin(std::size_t u, const BinGrid& grid);

/// Histogram of (current bin u, previous bin u', category r) transition tuples.
class TransitionTable {
public:
    explicit TransitionTable(BinGrid grid);

    void add(std::size_t u, std::size_t u_prev, int category, std::uint64_t n = 1);
    void add(std::span<const double> h, std::span<const double> h_prev, int category);
    /// Elementwise sum; grids must match.
    void merge(const TransitionTable& other);

    [[nodiscard]] const BinGrid& grid() const { return grid_; }
    [[nodiscard]] std::uint64_t count(std::size_t u, std::size_t u_prev, int category) const;
    [[nodiscard]] std::uint64_t row_total(std::size_t u_prev, int category) const;
    [[nodiscard]] std::uint64_t total() const { return total_; }
    /// p(u, u', r) = count / total.
    [[nodiscard]] double probability(std::size_t u, std::size_t u_prev, int category) const;
    [[nodiscard]] const std::vector<std::uint64_t>& counts() const { return counts_; }

    friend bool operator==(const TransitionTable&, const TransitionTable&) = default;

private:
    [[nodiscard]] std::size_t index(std::size_t u, std::size_t u_prev, int category) const;

    BinGrid grid_;
    std::vector<std::uint64_t> counts_;
    std::vector<std::uint64_t> row_totals_;
    std::uint64_t total_{0};
};

/// Counts every consecutive pair (h_j, h_{j-1}) of every trajectory under its category.
/// Throws if nothing was counted.
[[nodiscard]] TransitionTable estimate_histogram(std::span<const neural::HistoryTrajectory> trajectories,
                                                 std::span<const int> categories, const BinGrid& grid,
                                                 int threads = 1);

struct TransitionProb {
    double value{1.0};
    /// The conditioning cell (u', r) was never observed; value is the neutral 1.
    bool fallback{false};
};

/// f(h_i | h_prev, c): cell count over the count of its (u', r) row.
[[nodiscard]] TransitionProb conditional_transition_prob(std::span<const double> h_i,
                                                         std::span<const double> h_prev,
                                                         int category, const TransitionTable& table);

/// Same with the category summed out (numerator of the stabilized weights).
[[nodiscard]] TransitionProb marginal_transition_prob(std::span<const double> h_i,
                                                      std::span<const double> h_prev,
                                                      const TransitionTable& table);

struct WeightOptions {
    double cap{1e6};
    bool stabilized{false};
    /// Lower clamp for stabilized weights.
    double stabilized_floor{1e-6};
};

struct SequenceWeights {
    /// One weight per event.
    std::vector<double> weights;
    std::size_t truncated{0};
    std::size_t fallbacks{0};
};

/// w_i = prod_{k<=i} 1 / f(h_k | h_{k-1}, c), clamped to [1, cap]; stabilized mode multiplies each
/// factor by the category-marginal f(h_k | h_{k-1}) and clamps to [stabilized_floor, cap].
[[nodiscard]] SequenceWeights compute_weights(const neural::HistoryTrajectory& trajectory,
                                              int category, const TransitionTable& table,
                                              const WeightOptions& options = {});

struct WeightTable {
    std::vector<std::vector<double>> weights;
    std::size_t truncation_count{0};
    std::size_t fallback_count{0};
    double cap{1e6};
    bool stabilized{false};

    [[nodiscard]] std::size_t weight_count() const;
    [[nodiscard]] double max_weight() const;

    friend bool operator==(const WeightTable&, const WeightTable&) = default;
};

/// All-ones weights shaped like the given sequences.
[[nodiscard]] WeightTable unit_weights(std::span<const EventSequence> sequences, double cap = 1e6);

[[nodiscard]] WeightTable compute_weight_table(std::span<const neural::HistoryTrajectory> trajectories,
                                               std::span<const int> categories,
                                               const TransitionTable& table,
                                               const WeightOptions& options = {}, int threads = 1);

/// CSV rows: u, u_prev (per-axis indices joined by ':'), r, count, p.
void write_transition_csv(std::ostream& out, const TransitionTable& table);

// ---------------------------------------------------------------------------
// Bin size
// ---------------------------------------------------------------------------

/// Minimizer of the leading-order binning IMSE for m samples:
///   (2 / (int f')^2)^(1/4) m^(-1/4)   when int f' != 0
///   (4 / int f'^2)^(1/5) m^(-1/5)     otherwise.
[[nodiscard]] double optimal_bin_size(double m, double int_fprime, double int_fprime_sq);

/// Leading-order IMSE that optimal_bin_size minimizes.
[[nodiscard]] double binning_imse(double delta, double m, double int_fprime, double int_fprime_sq);

/// delta* for a standard bivariate normal with correlation rho.
[[nodiscard]] double bivariate_normal_bin_size(double m, double rho);

/// Plug-in bias and variance of the binned joint density at one point.
struct BinningDiagnostics {
    double delta{0.0};
    double bias{0.0};
    double variance{0.0};
    double mse{0.0};
};

[[nodiscard]] BinningDiagnostics binning_diagnostics(double delta, double m, double f,
                                                     double df_dh, double df_dh_prev);

}  // namespace cfpp
