#include "cfpp/iptw.hpp"
#include "cfpp/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

using namespace cfpp;
using neural::HistoryTrajectory;

namespace {

HistoryTrajectory trajectory_1d(std::vector<double> hs) {
    HistoryTrajectory t(1);
    for (double h : hs) {
        const double v[1] = {h};
        t.push_back(v);
    }
    return t;
}

HistoryTrajectory random_trajectory(Rng& rng, int q, int n) {
    HistoryTrajectory t(q);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i <= n; ++i) {
        std::vector<double> h(static_cast<std::size_t>(q));
        for (auto& x : h) x = u(rng);
        t.push_back(h);
    }
    return t;
}

}  // namespace

TEST_SUITE("iptw") {

TEST_CASE("bin assignment") {
    const BinGrid g{20, 1, 1};
    const double half[1] = {0.5}, zero[1] = {0.0}, one[1] = {1.0};
    CHECK(assign_bin(half, g) == std::vector<int>{10});
    CHECK(assign_bin(zero, g) == std::vector<int>{0});
    CHECK(assign_bin(one, g) == std::vector<int>{19});
    const double bad[1] = {1.5};
    CHECK_THROWS_AS((void)assign_bin(bad, g), std::invalid_argument);
    const double neg[1] = {-0.01};
    CHECK_THROWS_AS((void)assign_bin(neg, g), std::invalid_argument);
}

TEST_CASE("grid sizes and linear index") {
    const BinGrid g{5, 3, 2};
    CHECK(g.cells_per_embedding() == 125);
    CHECK(g.cell_count() == 125u * 125u * 2u);
    const double h[3] = {0.1, 0.5, 0.99};  // bins 0, 2, 4
    CHECK(linear_bin(h, g) == 0 * 25 + 2 * 5 + 4);
    for (std::size_t u = 0; u < g.cells_per_embedding(); ++u) {
        const auto idx = unflatten_bin(u, g);
        std::vector<double> rep;
        for (int b : idx) rep.push_back((b + 0.5) / g.bins_per_axis);
        CHECK(linear_bin(rep, g) == u);
    }
    CHECK_THROWS_AS(BinGrid({0, 1, 1}).validate(), std::invalid_argument);
}

TEST_CASE("histogram probabilities") {
    const BinGrid g{4, 1, 2};
    TransitionTable one(g);
    one.add(2, 1, 0);
    CHECK(one.probability(2, 1, 0) == 1.0);
    CHECK(one.probability(1, 2, 0) == 0.0);

    TransitionTable two(g);
    two.add(2, 1, 0);
    two.add(3, 0, 1);
    CHECK(two.probability(2, 1, 0) == 0.5);
    CHECK(two.probability(3, 0, 1) == 0.5);

    Rng rng(5);
    TransitionTable t(g);
    for (int i = 0; i < 500; ++i) t.add(rng() % 4, rng() % 4, static_cast<int>(rng() % 2));
    double sum = 0.0;
    for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t up = 0; up < 4; ++up)
            for (int r = 0; r < 2; ++r) sum += t.probability(u, up, r);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.total() == 500);
}

TEST_CASE("estimate_histogram counts every consecutive pair") {
    const BinGrid g{2, 1, 1};
    const std::vector<HistoryTrajectory> trajs{trajectory_1d({0.5, 0.2, 0.7, 0.9})};
    const std::vector<int> cats{0};
    const auto t = estimate_histogram(trajs, cats, g);
    CHECK(t.total() == 3);
    CHECK(t.count(0, 1, 0) == 1);  // 0.5 -> 0.2
    CHECK(t.count(1, 0, 0) == 1);  // 0.2 -> 0.7
    CHECK(t.count(1, 1, 0) == 1);  // 0.7 -> 0.9
    const std::vector<HistoryTrajectory> none{trajectory_1d({0.5})};
    CHECK_THROWS_AS((void)estimate_histogram(none, cats, g), std::invalid_argument);
}

TEST_CASE("histogram is invariant to user order and threads") {
    Rng rng(8);
    const BinGrid g{5, 2, 3};
    std::vector<HistoryTrajectory> trajs;
    std::vector<int> cats;
    for (int k = 0; k < 40; ++k) {
        trajs.push_back(random_trajectory(rng, 2, 1 + static_cast<int>(rng() % 10)));
        cats.push_back(static_cast<int>(rng() % 3));
    }
    const auto base = estimate_histogram(trajs, cats, g);
    std::vector<std::size_t> order(trajs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<HistoryTrajectory> t2;
    std::vector<int> c2;
    for (auto i : order) {
        t2.push_back(trajs[i]);
        c2.push_back(cats[i]);
    }
    CHECK(estimate_histogram(t2, c2, g) == base);
    CHECK(estimate_histogram(trajs, cats, g, 4) == base);
}

TEST_CASE("conditional transition probabilities") {
    const BinGrid g{4, 1, 1};
    TransitionTable uniform(g);
    for (std::size_t u = 0; u < 4; ++u) uniform.add(u, 2, 0, 3);
    const double prev[1] = {0.6};  // bin 2
    for (double h : {0.1, 0.3, 0.6, 0.9}) {
        const double cur[1] = {h};
        const auto f = conditional_transition_prob(cur, prev, 0, uniform);
        CHECK(f.value == doctest::Approx(0.25).epsilon(1e-15));
        CHECK_FALSE(f.fallback);
    }

    TransitionTable sparse(g);
    sparse.add(1, 2, 0);
    const double cur0[1] = {0.1}, cur1[1] = {0.3};
    CHECK(conditional_transition_prob(cur0, prev, 0, sparse).value == 0.0);
    CHECK(conditional_transition_prob(cur1, prev, 0, sparse).value == 1.0);

    const double unseen_prev[1] = {0.0};
    const auto fb = conditional_transition_prob(cur1, unseen_prev, 0, sparse);
    CHECK(fb.value == 1.0);
    CHECK(fb.fallback);
}

TEST_CASE("rows normalize") {
    Rng rng(12);
    const BinGrid g{3, 2, 2};
    TransitionTable t(g);
    const auto cells = g.cells_per_embedding();
    for (int i = 0; i < 2000; ++i) t.add(rng() % cells, rng() % cells, static_cast<int>(rng() % 2));
    for (std::size_t up = 0; up < cells; ++up) {
        for (int r = 0; r < 2; ++r) {
            if (t.row_total(up, r) == 0) continue;
            std::vector<double> prev;
            for (int b : unflatten_bin(up, g)) prev.push_back((b + 0.5) / 3.0);
            double sum = 0.0;
            for (std::size_t u = 0; u < cells; ++u) {
                std::vector<double> cur;
                for (int b : unflatten_bin(u, g)) cur.push_back((b + 0.5) / 3.0);
                sum += conditional_transition_prob(cur, prev, r, t).value;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("weights accumulate along the path") {
    const BinGrid g{2, 1, 1};
    TransitionTable t(g);
    t.add(0, 0, 0);
    t.add(1, 0, 0);
    const auto traj = trajectory_1d({0.25, 0.25, 0.25, 0.25});
    const auto w = compute_weights(traj, 0, t);
    REQUIRE(w.weights.size() == 3);
    CHECK(w.weights[0] == 2.0);
    CHECK(w.weights[1] == 4.0);
    CHECK(w.weights[2] == 8.0);
    CHECK(w.truncated == 0);
}

TEST_CASE("a single bin gives unit weights") {
    Rng rng(2);
    const BinGrid g{1, 2, 3};
    std::vector<HistoryTrajectory> trajs;
    std::vector<int> cats;
    for (int k = 0; k < 30; ++k) {
        trajs.push_back(random_trajectory(rng, 2, 1 + static_cast<int>(rng() % 20)));
        cats.push_back(k % 3);
    }
    const auto table = estimate_histogram(trajs, cats, g);
    for (bool stabilized : {false, true}) {
        WeightOptions opts;
        opts.stabilized = stabilized;
        const auto wt = compute_weight_table(trajs, cats, table, opts);
        for (const auto& ws : wt.weights)
            for (double w : ws) CHECK(w == 1.0);
    }
}

TEST_CASE("weights are at least one and hit the cap exactly on zero paths") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const BinGrid g{1 + static_cast<int>(rng() % 6), 1, 2};
        std::vector<HistoryTrajectory> trajs;
        std::vector<int> cats;
        for (int k = 0; k < 6; ++k) {
            trajs.push_back(random_trajectory(rng, 1, 1 + static_cast<int>(rng() % 8)));
            cats.push_back(k % 2);
        }
        const auto table = estimate_histogram(trajs, cats, g);
        // A query trajectory that may walk through unobserved cells.
        const auto query = random_trajectory(rng, 1, 8);
        const auto w = compute_weights(query, 0, table);
        bool zero_seen = false;
        for (std::size_t i = 0; i < w.weights.size(); ++i) {
            const auto f = conditional_transition_prob(query[i + 1], query[i], 0, table);
            zero_seen = zero_seen || f.value == 0.0;
            CHECK(w.weights[i] >= 1.0);
            if (zero_seen) CHECK(w.weights[i] == 1e6);
        }
        for (const auto& traj : trajs) {
            for (double x : compute_weights(traj, 0, table).weights) CHECK(x >= 1.0);
        }
    }
}

TEST_CASE("truncation counts and monotone cap") {
    const BinGrid g{4, 1, 1};
    TransitionTable t(g);
    for (std::size_t u = 0; u < 4; ++u) t.add(u, u, 0);
    t.add(1, 0, 0);
    t.add(2, 0, 0);
    t.add(3, 0, 0);
    // Row 0 is uniform over 4 next bins: each step multiplies by 4.
    const auto traj = trajectory_1d({0.1, 0.1, 0.1, 0.1, 0.1, 0.1});
    WeightOptions small;
    small.cap = 100.0;
    const auto w_small = compute_weights(traj, 0, t, small);
    CHECK(w_small.weights == std::vector<double>{4, 16, 64, 100, 100});
    CHECK(w_small.truncated == 2);
    const auto w_big = compute_weights(traj, 0, t);
    CHECK(w_big.truncated == 0);
    for (std::size_t i = 0; i < w_big.weights.size(); ++i) CHECK(w_big.weights[i] >= w_small.weights[i]);
}

TEST_CASE("stabilized weights") {
    const BinGrid g{2, 1, 2};
    TransitionTable t(g);
    // Category 0 always stays in bin 0; category 1 splits evenly.
    t.add(0, 0, 0, 10);
    t.add(0, 0, 1, 5);
    t.add(1, 0, 1, 5);
    const auto traj = trajectory_1d({0.1, 0.1, 0.1});
    WeightOptions opts;
    opts.stabilized = true;
    // Marginal f(0|0) = 15/20; conditional for category 1 = 1/2.
    const auto w1 = compute_weights(traj, 1, t, opts);
    CHECK(w1.weights[0] == doctest::Approx(1.5));
    CHECK(w1.weights[1] == doctest::Approx(2.25));
    // Category 0: 0.75 per step, below one and kept.
    const auto w0 = compute_weights(traj, 0, t, opts);
    CHECK(w0.weights[0] == doctest::Approx(0.75));
    CHECK(w0.weights[1] == doctest::Approx(0.5625));
    const auto marg_prob = marginal_transition_prob(traj[1], traj[0], t);
    CHECK(marg_prob.value == doctest::Approx(0.75));

    TransitionTable zero(g);
    zero.add(1, 0, 0);
    zero.add(0, 0, 1, 1000000);
    const auto tiny = compute_weights(trajectory_1d({0.1, 0.9, 0.1}), 0, zero, opts);
    CHECK(tiny.weights[0] >= 1e-6);
}

TEST_CASE("unit weights and weight tables") {
    std::vector<EventSequence> seqs(3);
    seqs[0].events = {{1.0, 0}, {2.0, 0}};
    seqs[2].events = {{1.0, 0}};
    const auto wt = unit_weights(seqs);
    CHECK(wt.weight_count() == 3);
    CHECK(wt.max_weight() == 1.0);
    CHECK(wt.weights[1].empty());
}

TEST_CASE("transition csv") {
    const BinGrid g{2, 1, 1};
    TransitionTable t(g);
    t.add(1, 0, 0, 3);
    t.add(0, 0, 0, 1);
    std::ostringstream out;
    write_transition_csv(out, t);
    const auto s = out.str();
    CHECK(s.rfind("u,u_prev,r,count,p\n", 0) == 0);
    CHECK(s.find("1,0,0,3,0.75") != std::string::npos);
}

TEST_CASE("optimal bin size examples") {
    CHECK(optimal_bin_size(10000, std::sqrt(2.0), 0.0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(optimal_bin_size(32, 0.0, 4.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS((void)optimal_bin_size(100, 0.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)optimal_bin_size(0.5, 1.0, 0.0), std::invalid_argument);
    for (double m : {10.0, 1e3, 7.5e5}) {
        CHECK(optimal_bin_size(m, 1.3, 0.0) / optimal_bin_size(16 * m, 1.3, 0.0) == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(optimal_bin_size(m, 0.0, 2.7) / optimal_bin_size(16 * m, 0.0, 2.7) ==
              doctest::Approx(std::pow(16.0, 0.2)).epsilon(1e-12));
        CHECK(optimal_bin_size(m, 0.0, 2.7) / optimal_bin_size(32 * m, 0.0, 2.7) ==
              doctest::Approx(std::pow(32.0, 0.2)).epsilon(1e-12));
    }
    const double m = 5000.0;
    CHECK(bivariate_normal_bin_size(m, 0.0) ==
          doctest::Approx(std::pow(24.0 * std::numbers::pi * std::numbers::pi / m, 0.2)).epsilon(1e-12));
}

TEST_CASE("optimal bin size minimizes the IMSE") {
    for (auto [a, b] : {std::pair{1.5, 0.0}, std::pair{0.0, 3.0}}) {
        const double d = optimal_bin_size(2000, a, b);
        const double best = binning_imse(d, 2000, a, b);
        CHECK(binning_imse(d * 0.9, 2000, a, b) > best);
        CHECK(binning_imse(d * 1.1, 2000, a, b) > best);
    }
}

TEST_CASE("binning diagnostics") {
    const auto d = binning_diagnostics(0.1, 1000, 0.8, 0.3, 0.5);
    CHECK(d.bias == doctest::Approx(0.5 * 0.8 * 0.1));
    CHECK(d.variance == doctest::Approx(0.8 / (1000 * 0.01)));
    CHECK(d.mse == doctest::Approx(d.bias * d.bias + d.variance));
}

}  // TEST_SUITE
