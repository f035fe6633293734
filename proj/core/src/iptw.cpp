#include "cfpp/iptw.hpp"

#include "cfpp/dataset_io.hpp"
#include "cfpp/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace cfpp {

std::size_t BinGrid::cells_per_embedding() const {
    std::size_t n = 1;
    for (int i = 0; i < q; ++i) {
        n *= static_cast<std::size_t>(bins_per_axis);
    }
    return n;
}

std::size_t BinGrid::cell_count() const {
    const auto s = cells_per_embedding();
    return s * s * static_cast<std::size_t>(category_count);
}

void BinGrid::validate() const {
    if (bins_per_axis < 1) throw std::invalid_argument("bins_per_axis must be >= 1");
    if (q < 1) throw std::invalid_argument("embedding dimension must be >= 1");
    if (category_count < 1) throw std::invalid_argument("category_count must be >= 1");
    if (std::pow(static_cast<double>(bins_per_axis), 2.0 * q) * category_count > 5e8) {
        throw std::invalid_argument("transition table too large (bins_per_axis^(2q) * R > 5e8)");
    }
}

std::vector<int> assign_bin(std::span<const double> h, const BinGrid& grid) {
    if (static_cast<int>(h.size()) != grid.q) {
        throw std::invalid_argument("embedding dimension does not match the grid");
    }
    std::vector<int> bins(h.size());
    for (std::size_t j = 0; j < h.size(); ++j) {
        const double x = h[j];
        if (!(x >= 0.0 && x <= 1.0)) {
            throw std::invalid_argument("embedding component " + std::to_string(j) +
                                        " outside [0, 1]: " + format_double(x));
        }
        bins[j] = std::min(static_cast<int>(x * grid.bins_per_axis), grid.bins_per_axis - 1);
    }
    return bins;
}

std::size_t linear_bin(std::span<const double> h, const BinGrid& grid) {
    std::size_t u = 0;
    for (int b : assign_bin(h, grid)) {
        u = u * static_cast<std::size_t>(grid.bins_per_axis) + static_cast<std::size_t>(b);
    }
    return u;
}

std::vector<int> unflatten_bin(std::size_t u, const BinGrid& grid) {
    std::vector<int> bins(static_cast<std::size_t>(grid.q));
    for (int j = grid.q - 1; j >= 0; --j) {
        bins[static_cast<std::size_t>(j)] = static_cast<int>(u % grid.bins_per_axis);
        u /= static_cast<std::size_t>(grid.bins_per_axis);
    }
    return bins;
}

// ---------------------------------------------------------------------------

TransitionTable::TransitionTable(BinGrid grid) : grid_(grid) {
    grid_.validate();
    counts_.assign(grid_.cell_count(), 0);
    row_totals_.assign(grid_.cells_per_embedding() * grid_.category_count, 0);
}

std::size_t TransitionTable::index(std::size_t u, std::size_t u_prev, int category) const {
    const auto s = grid_.cells_per_embedding();
    if (u >= s || u_prev >= s || category < 0 || category >= grid_.category_count) {
        throw std::out_of_range("transition cell out of range");
    }
    return (static_cast<std::size_t>(category) * s + u_prev) * s + u;
}

void TransitionTable::add(std::size_t u, std::size_t u_prev, int category, std::uint64_t n) {
    counts_[index(u, u_prev, category)] += n;
    row_totals_[static_cast<std::size_t>(category) * grid_.cells_per_embedding() + u_prev] += n;
    total_ += n;
}

void TransitionTable::add(std::span<const double> h, std::span<const double> h_prev, int category) {
    add(linear_bin(h, grid_), linear_bin(h_prev, grid_), category);
}

void TransitionTable::merge(const TransitionTable& other) {
    if (!(other.grid_ == grid_)) {
        throw std::invalid_argument("cannot merge transition tables over different grids");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        counts_[i] += other.counts_[i];
    }
    for (std::size_t i = 0; i < row_totals_.size(); ++i) {
        row_totals_[i] += other.row_totals_[i];
    }
    total_ += other.total_;
}

std::uint64_t TransitionTable::count(std::size_t u, std::size_t u_prev, int category) const {
    return counts_[index(u, u_prev, category)];
}

std::uint64_t TransitionTable::row_total(std::size_t u_prev, int category) const {
    (void)index(0, u_prev, category);
    return row_totals_[static_cast<std::size_t>(category) * grid_.cells_per_embedding() + u_prev];
}

double TransitionTable::probability(std::size_t u, std::size_t u_prev, int category) const {
    return total_ == 0 ? 0.0
                       : static_cast<double>(count(u, u_prev, category)) / static_cast<double>(total_);
}

TransitionTable estimate_histogram(std::span<const neural::HistoryTrajectory> trajectories,
                                   std::span<const int> categories, const BinGrid& grid,
                                   int threads) {
    if (trajectories.size() != categories.size()) {
        throw std::invalid_argument("one category per trajectory required");
    }
    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(std::max(threads, 1), trajectories.size()));
    std::vector<TransitionTable> partial(workers, TransitionTable(grid));
    const std::size_t chunk = (trajectories.size() + workers - 1) / std::max<std::size_t>(workers, 1);
    parallel_for(workers, threads, [&](std::size_t w) {
        const std::size_t end = std::min(trajectories.size(), (w + 1) * chunk);
        for (std::size_t k = w * chunk; k < end; ++k) {
            const auto& traj = trajectories[k];
            std::size_t prev = linear_bin(traj[0], grid);
            for (std::size_t j = 1; j < traj.size(); ++j) {
                const std::size_t cur = linear_bin(traj[j], grid);
                partial[w].add(cur, prev, categories[k]);
                prev = cur;
            }
        }
    });
    TransitionTable table(grid);
    for (const auto& p : partial) {
        table.merge(p);
    }
    if (table.total() == 0) {
        throw std::invalid_argument("no transitions to count (all trajectories are empty)");
    }
    return table;
}

TransitionProb conditional_transition_prob(std::span<const double> h_i, std::span<const double> h_prev,
                                           int category, const TransitionTable& table) {
    const auto& grid = table.grid();
    const std::size_t u = linear_bin(h_i, grid);
    const std::size_t u_prev = linear_bin(h_prev, grid);
    const auto denom = table.row_total(u_prev, category);
    if (denom == 0) {
        return {1.0, true};
    }
    return {static_cast<double>(table.count(u, u_prev, category)) / static_cast<double>(denom), false};
}

TransitionProb marginal_transition_prob(std::span<const double> h_i, std::span<const double> h_prev,
                                        const TransitionTable& table) {
    const auto& grid = table.grid();
    const std::size_t u = linear_bin(h_i, grid);
    const std::size_t u_prev = linear_bin(h_prev, grid);
    std::uint64_t num = 0;
    std::uint64_t denom = 0;
    for (int r = 0; r < grid.category_count; ++r) {
        num += table.count(u, u_prev, r);
        denom += table.row_total(u_prev, r);
    }
    if (denom == 0) {
        return {1.0, true};
    }
    return {static_cast<double>(num) / static_cast<double>(denom), false};
}

SequenceWeights compute_weights(const neural::HistoryTrajectory& trajectory, int category,
                                const TransitionTable& table, const WeightOptions& options) {
    if (trajectory.size() == 0) {
        throw std::invalid_argument("trajectory must hold at least h_0");
    }
    if (!(options.cap >= 1.0)) {
        throw std::invalid_argument("weight cap must be >= 1");
    }
    SequenceWeights out;
    out.weights.reserve(trajectory.size() - 1);
    const double floor = options.stabilized ? options.stabilized_floor : 1.0;
    double product = 1.0;
    for (std::size_t j = 1; j < trajectory.size(); ++j) {
        const auto f = conditional_transition_prob(trajectory[j], trajectory[j - 1], category, table);
        out.fallbacks += f.fallback ? 1 : 0;
        double factor = f.value == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / f.value;
        if (options.stabilized && f.value != 0.0) {
            factor *= marginal_transition_prob(trajectory[j], trajectory[j - 1], table).value;
        }
        product *= factor;
        double w = product;
        if (w >= options.cap) {
            w = options.cap;
            ++out.truncated;
        } else if (w < floor) {
            w = floor;
        }
        out.weights.push_back(w);
    }
    return out;
}

std::size_t WeightTable::weight_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) {
        n += w.size();
    }
    return n;
}

double WeightTable::max_weight() const {
    double m = 0.0;
    for (const auto& w : weights) {
        for (double v : w) {
            m = std::max(m, v);
        }
    }
    return m;
}

WeightTable unit_weights(std::span<const EventSequence> sequences, double cap) {
    WeightTable t;
    t.cap = cap;
    for (const auto& s : sequences) {
        t.weights.emplace_back(s.events.size(), 1.0);
    }
    return t;
}

WeightTable compute_weight_table(std::span<const neural::HistoryTrajectory> trajectories,
                                 std::span<const int> categories, const TransitionTable& table,
                                 const WeightOptions& options, int threads) {
    if (trajectories.size() != categories.size()) {
        throw std::invalid_argument("one category per trajectory required");
    }
    std::vector<SequenceWeights> per(trajectories.size());
    parallel_for(trajectories.size(), threads, [&](std::size_t k) {
        per[k] = compute_weights(trajectories[k], categories[k], table, options);
    });
    WeightTable out;
    out.cap = options.cap;
    out.stabilized = options.stabilized;
    for (auto& p : per) {
        out.truncation_count += p.truncated;
        out.fallback_count += p.fallbacks;
        out.weights.push_back(std::move(p.weights));
    }
    return out;
}

void write_transition_csv(std::ostream& out, const TransitionTable& table) {
    const auto& grid = table.grid();
    auto join = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ':';
            s += std::to_string(v[i]);
        }
        return s;
    };
    out << "u,u_prev,r,count,p\n";
    const auto cells = grid.cells_per_embedding();
    for (int r = 0; r < grid.category_count; ++r) {
        for (std::size_t up = 0; up < cells; ++up) {
            for (std::size_t u = 0; u < cells; ++u) {
                out << join(unflatten_bin(u, grid)) << ',' << join(unflatten_bin(up, grid)) << ','
                    << r << ',' << table.count(u, up, r) << ','
                    << format_double(table.probability(u, up, r)) << '\n';
            }
        }
    }
}

// ---------------------------------------------------------------------------

double optimal_bin_size(double m, double int_fprime, double int_fprime_sq) {
    if (!(m >= 1.0)) {
        throw std::invalid_argument("sample count must be >= 1");
    }
    if (int_fprime != 0.0) {
        return std::pow(2.0 / (int_fprime * int_fprime), 0.25) * std::pow(m, -0.25);
    }
    if (!(int_fprime_sq > 0.0)) {
        throw std::invalid_argument("optimal bin size undefined: both derivative integrals are zero");
    }
    return std::pow(4.0 / int_fprime_sq, 0.2) * std::pow(m, -0.2);
}

double binning_imse(double delta, double m, double int_fprime, double int_fprime_sq) {
    const double variance = 1.0 / (m * delta * delta);
    if (int_fprime != 0.0) {
        return variance + 0.5 * delta * delta * int_fprime * int_fprime;
    }
    return variance + delta * delta * delta * int_fprime_sq / 6.0;
}

double bivariate_normal_bin_size(double m, double rho) {
    if (!(rho > -1.0 && rho < 1.0)) {
        throw std::invalid_argument("correlation must lie in (-1, 1)");
    }
    const double pi2 = std::numbers::pi * std::numbers::pi;
    return std::pow(24.0 * pi2 * (1.0 - rho) * std::pow(1.0 + rho, 3) / m, 0.2);
}

BinningDiagnostics binning_diagnostics(double delta, double m, double f, double df_dh,
                                       double df_dh_prev) {
    BinningDiagnostics d;
    d.delta = delta;
    d.bias = 0.5 * (df_dh + df_dh_prev) * delta;
    d.variance = f / (m * delta * delta);
    d.mse = d.bias * d.bias + d.variance;
    return d;
}

}  // namespace cfpp
