// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "cfpp/classical.hpp"
#include "cfpp/experiments.hpp"
#include "cfpp/inference.hpp"
#include "cfpp/iptw.hpp"
#include "cfpp/neural.hpp"
#include "cfpp/trainer.hpp"
#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace cfpp;
using neural::Block;
using neural::DecoderKind;
using neural::IntegralMode;
using neural::NeuralModel;

namespace {

struct Outcome {
    bool pass{false};
    std::string detail;
};

std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

EventSequence random_sequence(Rng& rng, int n, int marks, double horizon) {
    std::uniform_real_distribution<double> u(0.0, horizon);
    std::vector<double> ts(static_cast<std::size_t>(n));
    for (auto& t : ts) t = u(rng);
    std::sort(ts.begin(), ts.end());
    EventSequence s{"r", 0, {}, horizon};
    std::uniform_int_distribution<int> mark(0, marks - 1);
    for (double t : ts) s.events.push_back({t, mark(rng)});
    return s;
}

NeuralModel random_model(Rng& rng, int q, int marks, DecoderKind decoder, double w_center) {
    NeuralModel m({q, marks, decoder},
                  decoder == DecoderKind::decay_cell ? IntegralMode::grid(50) : IntegralMode::closed_form());
    std::normal_distribution<double> normal(0.0, 0.5);
    for (double& p : m.params()) p = normal(rng);
    if (decoder == DecoderKind::exponential) m.block(Block::dec_w)[0] = w_center + 0.1 * normal(rng);
    return m;
}

// 1 -----------------------------------------------------------------------

Outcome oracle_likelihood() {
    Rng rng(101);
    std::uniform_real_distribution<double> rate(0.05, 5.0);
    std::uniform_real_distribution<double> horizon(0.5, 100.0);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double lambda = rate(rng);
        const double T = horizon(rng);
        const int n = static_cast<int>(rng() % 60);
        NeuralModel m({1, 1, DecoderKind::exponential});
        m.block(Block::dec_b)[0] = std::log(lambda);
        const auto s = random_sequence(rng, n, 1, T);
        const std::vector<double> ones(s.size(), 1.0);
        const double ll = neural::sequence_log_likelihood(m, s, neural::encode_sequence(m, s.events), ones);
        worst = std::max(worst, std::abs(ll - (n * std::log(lambda) - lambda * T)));
    }
    return {worst < 1e-10, "max |error| " + fmt(worst, 3) + " over 100 instances"};
}

// 2 -----------------------------------------------------------------------

Outcome gradient_check() {
    Rng rng(202);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const int marks = 1 + k % 3;
        const auto decoder = k % 3 == 2 ? DecoderKind::decay_cell : DecoderKind::exponential;
        auto m = random_model(rng, 2, marks, decoder, -0.3);
        const auto mode = decoder == DecoderKind::decay_cell ? IntegralMode::grid(50)
                          : k % 3 == 1                      ? IntegralMode::grid(37)
                                                            : IntegralMode::closed_form();
        const auto s = random_sequence(rng, static_cast<int>(rng() % 6), marks, 5.0);
        std::vector<double> w;
        if (k % 2 == 1) {
            std::uniform_real_distribution<double> u(1.0, 4.0);
            for (std::size_t i = 0; i < s.size(); ++i) w.push_back(u(rng));
        }
        const auto g = neural::grad_log_likelihood(m, s, neural::encode_sequence(m, s.events), w, mode);
        for (std::size_t i = 0; i < m.param_count(); ++i) {
            const double saved = m.params()[i];
            const double h = 1e-5;
            m.params()[i] = saved + h;
            const double up = neural::sequence_log_likelihood(m, s, neural::encode_sequence(m, s.events), w, mode);
            m.params()[i] = saved - h;
            const double down = neural::sequence_log_likelihood(m, s, neural::encode_sequence(m, s.events), w, mode);
            m.params()[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::abs(numeric), std::abs(g.gradient[i]), 1e-2});
            worst = std::max(worst, std::abs(numeric - g.gradient[i]) / denom);
        }
    }
    return {worst < 1e-4, "max relative error " + fmt(worst, 3) + " over 100 instances"};
}

// 3 -----------------------------------------------------------------------

Outcome simulator_validity() {
    const ExpHawkesParams p{0.1, 0.5, 1.0};
    const ExpHawkesModel model(p);
    const double T = 100.0;
    // Run past T so the gaps that start inside [0, T) are complete.
    const auto seqs = simulate_sequences(model, 200, 2.0 * T, nullptr, 303, 0, "h");
    std::vector<double> rescaled;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& s : seqs) {
        const auto r = rescaled_interarrivals(model, s, T);
        rescaled.insert(rescaled.end(), r.begin(), r.end());
        const auto n = static_cast<double>(
            std::count_if(s.events.begin(), s.events.end(), [&](const Event& e) { return e.t < T; }));
        sum += n;
        sum_sq += n * n;
    }
    const auto ks = ks_test_unit_exponential(rescaled);
    const double count = static_cast<double>(seqs.size());
    const double mean = sum / count;
    const double sd = std::sqrt((sum_sq - count * mean * mean) / (count - 1.0));
    const double expected = p.mu * T / (1.0 - p.alpha / p.beta);
    const double z = (mean - expected) / (sd / std::sqrt(count));
    return {ks.p_value > 0.01 && std::abs(z) < 3.0, "KS p = " + fmt(ks.p_value, 4) + " (n = " +
                                                        std::to_string(ks.n) + "); mean count " + fmt(mean, 5) +
                                                        " vs " + fmt(expected, 5) + " (z = " + fmt(z, 3) + ")"};
}

// 4 -----------------------------------------------------------------------

Outcome mle_recovery() {
    const ExpHawkesParams truth{0.1, 0.5, 1.0};
    Dataset d;
    d.sequences = simulate_sequences(ExpHawkesModel(truth), 400, 100.0, nullptr, 404, 0, "m");
    const auto fit = std::get<ExpHawkesParams>(classical_mle(d, ModelFamily::exp_hawkes).params);
    const double e = std::max({std::abs(fit.mu / truth.mu - 1.0), std::abs(fit.alpha / truth.alpha - 1.0),
                               std::abs(fit.beta / truth.beta - 1.0)});
    return {e < 0.1, "mu " + fmt(fit.mu, 4) + ", alpha " + fmt(fit.alpha, 4) + ", beta " + fmt(fit.beta, 4) +
                         "; max relative error " + fmt(100.0 * e, 3) + "%"};
}

// 5 -----------------------------------------------------------------------

neural::HistoryTrajectory path_1d(const std::vector<int>& bins, int B) {
    neural::HistoryTrajectory t(1);
    for (int b : bins) {
        const double h[1] = {(b + 0.5) / B};
        t.push_back(h);
    }
    return t;
}

Outcome weight_algebra() {
    std::size_t checked = 0;
    bool ok = true;

    // Single bin: every weight is one, plain or stabilized.
    Rng rng(505);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int q = 1; q <= 3; ++q) {
        const BinGrid g{1, q, 3};
        std::vector<neural::HistoryTrajectory> trajs;
        std::vector<int> cats;
        for (int k = 0; k < 30; ++k) {
            neural::HistoryTrajectory t(q);
            for (int i = 0; i <= 1 + static_cast<int>(rng() % 15); ++i) {
                std::vector<double> h(static_cast<std::size_t>(q));
                for (auto& x : h) x = u(rng);
                t.push_back(h);
            }
            trajs.push_back(t);
            cats.push_back(k % 3);
        }
        const auto table = estimate_histogram(trajs, cats, g);
        for (bool stabilized : {false, true}) {
            WeightOptions o;
            o.stabilized = stabilized;
            for (const auto& ws : compute_weight_table(trajs, cats, table, o).weights)
                for (double w : ws) {
                    ok = ok && w == 1.0;
                    ++checked;
                }
        }
    }

    // Every count table with entries in {0, 1, 2} on two bins, and {0, 1} on three bins, against
    // every path of five steps: w >= 1, and w hits the cap exactly once a zero transition is seen.
    auto exhaust = [&](int B, int levels) {
        const int cells = B * B;
        int tables = 1;
        for (int i = 0; i < cells; ++i) tables *= levels;
        const int steps = 5;
        int paths = 1;
        for (int i = 0; i <= steps; ++i) paths *= B;
        for (int code = 0; code < tables; ++code) {
            TransitionTable table(BinGrid{B, 1, 1});
            int c = code;
            for (int cell = 0; cell < cells; ++cell) {
                const int n = c % levels;
                c /= levels;
                if (n > 0) table.add(static_cast<std::size_t>(cell % B), static_cast<std::size_t>(cell / B), 0,
                                     static_cast<std::uint64_t>(n));
            }
            for (int pc = 0; pc < paths; ++pc) {
                std::vector<int> bins;
                int x = pc;
                for (int i = 0; i <= steps; ++i) {
                    bins.push_back(x % B);
                    x /= B;
                }
                const auto traj = path_1d(bins, B);
                const auto w = compute_weights(traj, 0, table);
                bool zero_seen = false;
                for (std::size_t i = 0; i < w.weights.size(); ++i) {
                    const auto f = conditional_transition_prob(traj[i + 1], traj[i], 0, table);
                    zero_seen = zero_seen || (!f.fallback && f.value == 0.0);
                    ok = ok && w.weights[i] >= 1.0 && ((w.weights[i] == 1e6) == zero_seen);
                    ++checked;
                }
            }
        }
    };
    exhaust(2, 3);
    exhaust(3, 2);
    return {ok, std::to_string(checked) + " weights checked"};
}

// 6 -----------------------------------------------------------------------

Outcome reduction_identities() {
    auto spec = experiment_spec(1);
    const auto data = generate_synthetic(spec, 1).train;
    bool ok = true;
    std::string detail;
    for (const auto decoder : {DecoderKind::exponential, DecoderKind::decay_cell}) {
        ModelSpec ms;
        ms.shape = {1, 1, decoder};
        auto base = spec.train;
        if (decoder == DecoderKind::decay_cell) base.integral_mode = IntegralMode::grid(spec.nh_sections);
        auto plain = base;
        plain.eta.reset();
        const auto reference = train(data, ms, plain);

        auto one_bin = base;
        one_bin.bins_per_axis = 1;
        auto no_refresh = base;
        no_refresh.eta.reset();
        no_refresh.bins_per_axis = 25;
        const bool a = train(data, ms, one_bin).model == reference.model;
        const bool b = train(data, ms, no_refresh).model == reference.model;
        ok = ok && a && b;
        detail += neural::to_string(decoder) + std::string(": 1 bin ") + (a ? "identical" : "DIFFERS") +
                  ", eta=inf " + (b ? "identical" : "DIFFERS") + "; ";
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

// 7 -----------------------------------------------------------------------

Outcome exp1_ordering() {
    auto spec = experiment_spec(1);
    spec.methods = {Method::c_rmtpp, Method::rmtpp};
    spec.seeds = {1, 2, 3};
    const auto report = run_experiment(spec);
    std::vector<double> c, u;
    for (const auto& r : report.results) (r.method == Method::c_rmtpp ? c : u).push_back(r.intensity_mae);
    const double mc = median(c);
    const double mu = median(u);
    const double improvement = 100.0 * (mu - mc) / mu;
    std::string detail = "median MAE C-RMTPP " + fmt(mc, 5) + " vs RMTPP " + fmt(mu, 5) + ", improvement " +
                         fmt(improvement, 3) + "% (per seed C/U:";
    for (std::size_t i = 0; i < c.size(); ++i) detail += " " + fmt(c[i], 4) + "/" + fmt(u[i], 4);
    return {mc <= mu, detail + ")"};
}

// 8 -----------------------------------------------------------------------

Outcome bins_trend() {
    auto spec = experiment_spec(1);
    spec.methods = {Method::c_rmtpp, Method::c_nh};
    spec.seeds = {1, 2, 3};
    const std::vector<int> bins{1, 5, 10};
    const auto result = sweep(spec, SweepAxis::bins, bins);
    bool ok = true;
    std::string detail;
    for (const auto method : spec.methods) {
        std::vector<double> medians;
        for (const auto& point : result.points) {
            std::vector<double> v;
            for (const auto& r : point.report.results)
                if (r.method == method) v.push_back(r.intensity_mae);
            medians.push_back(median(v));
        }
        bool monotone = true;
        for (std::size_t i = 1; i < medians.size(); ++i) monotone = monotone && medians[i] <= medians[i - 1] * 1.01;
        ok = ok && monotone;
        detail += to_string(method) + " median MAE by bins {1,5,10}:";
        for (std::size_t i = 0; i < medians.size(); ++i) {
            detail += " " + fmt(medians[i], 5);
            if (i > 0) detail += " (" + fmt(100.0 * (medians[i] - medians[0]) / medians[0], 3) + "%)";
        }
        detail += monotone ? "; " : " not monotone; ";
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

// 9 -----------------------------------------------------------------------

Outcome bin_size_formulas() {
    const double a = optimal_bin_size(10000, std::sqrt(2.0), 0.0);
    const double b = optimal_bin_size(32, 0.0, 4.0);
    double worst_first = 0.0;
    double worst_second_16 = 0.0;
    double worst_second_32 = 0.0;
    for (double m : {2.0, 10.0, 1e3, 7.5e5, 1e9}) {
        for (double f1 : {0.3, 1.0, 2.5}) {
            worst_first = std::max(worst_first,
                                   std::abs(optimal_bin_size(m, f1, 0.0) / optimal_bin_size(16 * m, f1, 0.0) - 2.0));
            worst_second_16 = std::max(worst_second_16, std::abs(optimal_bin_size(m, 0.0, f1) /
                                                                     optimal_bin_size(16 * m, 0.0, f1) -
                                                                 std::pow(16.0, 0.2)));
            worst_second_32 = std::max(worst_second_32, std::abs(optimal_bin_size(m, 0.0, f1) /
                                                                     optimal_bin_size(32 * m, 0.0, f1) -
                                                                 std::pow(32.0, 0.2)));
        }
    }
    const bool ok = std::abs(a - 0.1) < 1e-12 && std::abs(b - 0.5) < 1e-12 && worst_first < 1e-12 &&
                    worst_second_16 < 1e-12 && worst_second_32 < 1e-12;
    return {ok, "examples " + fmt(a, 15) + ", " + fmt(b, 15) + "; first branch m/16m = 2 (err " +
                    fmt(worst_first, 2) + "); second branch m/16m = 16^(1/5) (err " + fmt(worst_second_16, 2) +
                    "), m/32m = 32^(1/5) (err " + fmt(worst_second_32, 2) + ")"};
}

// 10 ----------------------------------------------------------------------

Outcome inference_oracles() {
    Rng rng(1010);
    double worst_mass = 0.0;
    double worst_hat = 0.0;
    double worst_z = 0.0;
    for (int k = 0; k < 50; ++k) {
        const int marks = 1 + k % 4;
        const auto m = random_model(rng, 2, marks, DecoderKind::exponential, 0.3);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const std::vector<double> h{u(rng), u(rng)};
        const double t_n = 10.0 * u(rng);

        const auto grid = predict_next(m, h, t_n);
        const int n = 20000;
        const double step = (grid.t_max - t_n) / n;
        double mass = 0.0;
        for (int j = 0; j <= n; ++j) {
            double f = 0.0;
            for (int mk = 0; mk < marks; ++mk) f += predictive_density(m, t_n + j * step, mk, t_n, h);
            mass += (j == 0 || j == n ? 0.5 : 1.0) * f * step;
        }
        worst_mass = std::max(worst_mass, std::abs(mass - 1.0));

        const auto mc = predict_next(m, h, t_n, McQuadrature{4000, static_cast<std::uint64_t>(k), {}});
        worst_z = std::max(worst_z, std::abs(grid.t_hat - mc.t_hat) / (3.0 * mc.std_error + 1e-4));
    }
    for (double lambda : {0.2, 1.0, 2.0, 7.5}) {
        for (double t_n : {0.0, 3.5, 50.0}) {
            NeuralModel m({1, 1, DecoderKind::exponential});
            m.block(Block::dec_b)[0] = std::log(lambda);
            const std::vector<double> h{0.5};
            worst_hat = std::max(worst_hat, std::abs(predict_next(m, h, t_n).t_hat - (t_n + 1.0 / lambda)));
        }
    }
    const bool ok = worst_mass < 1e-2 && worst_hat < 1e-4 && worst_z <= 1.0;
    return {ok, "max |mass - 1| " + fmt(worst_mass, 3) + "; max |t_hat - (t_n + 1/lambda)| " + fmt(worst_hat, 3) +
                    "; max |grid - MC| / (3 se + 1e-4) " + fmt(worst_z, 3) + " over 50 models"};
}

// 11 ----------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome end_to_end_determinism() {
    const auto root = std::filesystem::path(CFPP_TEST_TMP) / "acceptance";
    std::filesystem::remove_all(root);
    std::vector<std::string> csvs;
    for (const char* run : {"a", "b"}) {
        std::ostringstream out, err;
        const int code = cli::run({"experiment", "--exp", "1", "--methods", "counterfactual,unweighted,exp-hawkes",
                                   "--seed", "1", "--out", (root / run).string()},
                                  out, err);
        if (code != 0) return {false, "experiment exited with " + std::to_string(code) + ": " + err.str()};
        csvs.push_back(slurp(root / run / "exp1_metrics.csv"));
    }
    const bool ok = !csvs[0].empty() && csvs[0] == csvs[1];
    return {ok, std::to_string(csvs[0].size()) + " bytes, " + (ok ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"oracle likelihood", oracle_likelihood},
        {"gradient correctness", gradient_check},
        {"simulator validity", simulator_validity},
        {"MLE recovery", mle_recovery},
        {"weight algebra", weight_algebra},
        {"reduction identities", reduction_identities},
        {"desk Exp 1 ordering", exp1_ordering},
        {"bins trend", bins_trend},
        {"optimal bin size formulas", bin_size_formulas},
        {"inference oracles", inference_oracles},
        {"end-to-end determinism", end_to_end_determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << " ["
                  << fmt(secs, 3) << " s]: " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size()
              << " criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
