#include "cfpp/neural.hpp"
#include "cfpp/rng.hpp"

#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <filesystem>

using namespace cfpp;
using namespace cfpp::neural;

namespace {

NeuralModel constant_rate_model(double rate, int marks = 1) {
    NeuralModel m({1, marks, DecoderKind::exponential});
    m.block(Block::dec_b)[0] = std::log(rate);
    return m;
}

NeuralModel random_model(Rng& rng, int q, int marks, DecoderKind decoder, IntegralMode mode,
                         double scale = 0.5) {
    NeuralModel m({q, marks, decoder}, mode);
    std::normal_distribution<double> normal(0.0, scale);
    for (double& p : m.params()) {
        p = normal(rng);
    }
    if (decoder == DecoderKind::exponential) {
        m.block(Block::dec_w)[0] = -0.3 + 0.2 * normal(rng);
    }
    return m;
}

EventSequence random_sequence(Rng& rng, int n, int marks, double horizon) {
    std::uniform_real_distribution<double> u(0.0, horizon);
    std::vector<double> ts;
    while (static_cast<int>(ts.size()) < n) {
        ts.push_back(u(rng));
    }
    std::sort(ts.begin(), ts.end());
    EventSequence s{"r", 0, {}, horizon};
    std::uniform_int_distribution<int> mark(0, marks - 1);
    for (double t : ts) {
        s.events.push_back({t, mark(rng)});
    }
    return s;
}

double max_relative_error(NeuralModel model, const EventSequence& seq, std::span<const double> weights,
                          const IntegralMode& mode) {
    const auto traj = encode_sequence(model, seq.events);
    const auto g = grad_log_likelihood(model, seq, traj, weights, mode);
    double worst = 0.0;
    for (std::size_t i = 0; i < model.param_count(); ++i) {
        const double saved = model.params()[i];
        const double step = 1e-5;
        model.params()[i] = saved + step;
        const double up = sequence_log_likelihood(model, seq, encode_sequence(model, seq.events), weights, mode);
        model.params()[i] = saved - step;
        const double down = sequence_log_likelihood(model, seq, encode_sequence(model, seq.events), weights, mode);
        model.params()[i] = saved;
        const double numeric = (up - down) / (2 * step);
        const double denom = std::max({std::abs(numeric), std::abs(g.gradient[i]), 1e-2});
        worst = std::max(worst, std::abs(numeric - g.gradient[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_SUITE("neural") {

TEST_CASE("encoder outputs one half with zero parameters") {
    NeuralModel m({3, 2, DecoderKind::exponential});
    const auto h = encode_step(initial_embedding(3), 1.7, 1, m.encoder());
    for (double v : h) {
        CHECK(v == 0.5);
    }
}

TEST_CASE("encoding is a fold of encode_step") {
    Rng rng(11);
    const auto m = random_model(rng, 3, 2, DecoderKind::exponential, {});
    const auto seq = random_sequence(rng, 5, 2, 10.0);
    const auto traj = encode_sequence(m, seq.events);
    REQUIRE(traj.size() == 6);

    Embedding h = initial_embedding(3);
    double prev = 0.0;
    for (const auto& e : seq.events) {
        h = encode_step(h, e.t - prev, e.m, m.encoder());
        prev = e.t;
    }
    const auto last = traj.back();
    CHECK(std::equal(h.begin(), h.end(), last.begin(), last.end()));

    // Resuming from h_3 with the last two events gives the same h_5.
    Embedding resumed(traj[3].begin(), traj[3].end());
    resumed = encode_step(resumed, seq.events[3].t - seq.events[2].t, seq.events[3].m, m.encoder());
    resumed = encode_step(resumed, seq.events[4].t - seq.events[3].t, seq.events[4].m, m.encoder());
    CHECK(std::equal(resumed.begin(), resumed.end(), last.begin(), last.end()));

    for (std::size_t i = 0; i < traj.size(); ++i) {
        for (double v : traj[i]) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("exponential decoder values") {
    NeuralModel m({1, 1, DecoderKind::exponential});
    m.block(Block::dec_w)[0] = 1.0;
    const Embedding h{0.5};
    CHECK(total_intensity(m, 1.0, h).rate == doctest::Approx(std::exp(1.0)).epsilon(1e-14));
    CHECK(time_compensator(m, 3.0, 4.0, 3.0, h) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
    CHECK(time_compensator(m, 3.5, 3.5, 3.0, h) == 0.0);

    const auto flat = constant_rate_model(2.0);
    CHECK(time_compensator(flat, 1.0, 4.0, 1.0, h) == doctest::Approx(6.0).epsilon(1e-14));
    CHECK(total_intensity(flat, 0.0, h).rate == doctest::Approx(total_intensity(flat, 50.0, h).rate));
    CHECK(conditional_pdf(constant_rate_model(1.0), 2.0, 0, 2.0, h) == doctest::Approx(1.0));
}

TEST_CASE("mark head normalizes") {
    Rng rng(5);
    const auto m = random_model(rng, 2, 4, DecoderKind::exponential, {});
    const Embedding h{0.3, 0.8};
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
        sum += intensity(m, 1.2, k, 0.5, h).rate;
    }
    CHECK(sum == doctest::Approx(total_intensity(m, 0.7, h).rate).epsilon(1e-13));
}

TEST_CASE("exponent clamp is flagged") {
    auto m = constant_rate_model(1.0);
    m.block(Block::dec_w)[0] = 10.0;
    const Embedding h{0.5};
    const auto r = total_intensity(m, 10.0, h);
    CHECK(r.clamped);
    CHECK(r.rate == doctest::Approx(std::exp(50.0)));
    // The compensator integrates the clamped rate.
    const double expected = (std::exp(50.0) - 1.0) / 10.0 + std::exp(50.0) * 5.0;
    CHECK(time_compensator(m, 0.0, 10.0, 0.0, h) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("Poisson log-likelihood oracle") {
    const auto m = constant_rate_model(2.0);
    EventSequence s{"p", 0, {{0.3, 0}, {0.9, 0}, {1.4, 0}, {2.2, 0}, {2.9, 0}}, 3.0};
    const auto traj = encode_sequence(m, s.events);
    const double ll = sequence_log_likelihood(m, s, traj);
    CHECK(ll == doctest::Approx(5 * std::log(2.0) - 6.0).epsilon(1e-13));
    CHECK(std::abs(ll - (-2.534264)) < 1e-6);

    const std::vector<double> ones(5, 1.0);
    CHECK(sequence_log_likelihood(m, s, traj, ones) == ll);

    const std::vector<double> bad(4, 1.0);
    CHECK_THROWS_AS((void)sequence_log_likelihood(m, s, traj, bad), std::invalid_argument);
}

TEST_CASE("grid integral converges to the closed form") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto m = random_model(rng, 2, 1, DecoderKind::exponential, {}, 0.3);
        const auto s = random_sequence(rng, 6, 1, 20.0);
        const auto traj = encode_sequence(m, s.events);
        const double exact = sequence_log_likelihood(m, s, traj, {}, IntegralMode::closed_form());
        double last = INFINITY;
        for (int sections : {10, 100, 1000, 10000}) {
            const double err = std::abs(
                sequence_log_likelihood(m, s, traj, {}, IntegralMode::grid(sections)) - exact);
            CHECK(err < last);
            last = err;
        }
        CHECK(last < 1e-2);
    }
}

TEST_CASE("grid factor averages over marks only when asked") {
    Rng rng(3);
    auto m = random_model(rng, 2, 3, DecoderKind::exponential, {}, 0.3);
    const auto s = random_sequence(rng, 4, 3, 10.0);
    const auto traj = encode_sequence(m, s.events);
    const double summed = sequence_log_likelihood(m, s, traj, {}, IntegralMode::grid(20000, false));
    const double exact = sequence_log_likelihood(m, s, traj, {}, IntegralMode::closed_form());
    CHECK(summed == doctest::Approx(exact).epsilon(1e-3));
    const double averaged = sequence_log_likelihood(m, s, traj, {}, IntegralMode::grid(20000, true));
    CHECK(averaged > summed);
}

TEST_CASE("analytic gradient matches finite differences") {
    Rng rng(1234);
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const int marks = 1 + trial % 3;
        const auto m = random_model(rng, 2, marks, DecoderKind::exponential, {});
        const auto s = random_sequence(rng, trial % 6, marks, 5.0);
        std::vector<double> w;
        if (trial % 2 == 1) {
            std::uniform_real_distribution<double> u(1.0, 4.0);
            for (std::size_t i = 0; i < s.events.size(); ++i) w.push_back(u(rng));
        }
        worst = std::max(worst, max_relative_error(m, s, w, IntegralMode::closed_form()));
        worst = std::max(worst, max_relative_error(m, s, w, IntegralMode::grid(37)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("decay-cell gradient matches finite differences") {
    Rng rng(99);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int marks = 1 + trial % 3;
        const auto m = random_model(rng, 2, marks, DecoderKind::decay_cell, IntegralMode::grid(50));
        const auto s = random_sequence(rng, 1 + trial % 5, marks, 5.0);
        worst = std::max(worst, max_relative_error(m, s, {}, IntegralMode::grid(50)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("decay cell requires the grid mode") {
    CHECK_THROWS_AS(NeuralModel({2, 1, DecoderKind::decay_cell}, IntegralMode::closed_form()),
                    std::invalid_argument);
    Rng rng(4);
    auto m = random_model(rng, 2, 1, DecoderKind::decay_cell, IntegralMode::grid(10));
    const auto s = random_sequence(rng, 3, 1, 5.0);
    CHECK_THROWS_AS((void)sequence_log_likelihood(m, s, encode_sequence(m, s.events), {},
                                                  IntegralMode::closed_form()),
                    std::invalid_argument);
}

TEST_CASE("gradient of an empty sequence is the compensator term alone") {
    Rng rng(8);
    auto m = random_model(rng, 2, 2, DecoderKind::exponential, {});
    EventSequence s{"e", 0, {}, 4.0};
    const auto traj = encode_sequence(m, s.events);
    const auto g = grad_log_likelihood(m, s, traj);
    CHECK(g.value == doctest::Approx(-time_compensator(m, 0.0, 4.0, 0.0, traj[0])).epsilon(1e-14));
    // Mark head and encoder take no gradient without events.
    for (auto id : {Block::dec_mark_weight, Block::dec_mark_bias, Block::enc_recurrence, Block::enc_dt}) {
        const auto& b = m.block_info(id);
        for (std::size_t i = 0; i < b.size(); ++i) {
            CHECK(g.gradient[b.offset + i] == 0.0);
        }
    }
}

TEST_CASE("gradient is linear in the weights") {
    Rng rng(17);
    auto m = random_model(rng, 2, 2, DecoderKind::exponential, {});
    const auto s = random_sequence(rng, 5, 2, 5.0);
    const auto traj = encode_sequence(m, s.events);
    const std::vector<double> w{1.0, 2.0, 1.5, 3.0, 1.25};
    std::vector<double> w2;
    for (double v : w) w2.push_back(2 * v);
    const auto g1 = grad_log_likelihood(m, s, traj, w);
    const auto g2 = grad_log_likelihood(m, s, traj, w2);
    CHECK(g2.value == 2 * g1.value);
    for (std::size_t i = 0; i < g1.gradient.size(); ++i) {
        CHECK(g2.gradient[i] == doctest::Approx(2 * g1.gradient[i]).epsilon(1e-13));
    }
}

TEST_CASE("conditional density integrates to one") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        auto m = random_model(rng, 2, 2, DecoderKind::exponential, {});
        m.block(Block::dec_w)[0] = std::abs(m.block(Block::dec_w)[0]) + 0.05;
        const Embedding h{0.4, 0.6};
        auto f = [&](double t) { return conditional_pdf(m, t, 0, 0.0, h) + conditional_pdf(m, t, 1, 0.0, h); };
        // Past the point where the compensator exceeds 40 the remaining mass is below e^-40.
        double end = 1.0;
        while (time_compensator(m, 0.0, end, 0.0, h) < 40.0) end *= 2.0;
        double mass = 0.0;
        for (double a = 0.0; a < end; a += end / 64) {
            mass += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, a + end / 64, 8, 1e-12);
        }
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-2));
    }
}

TEST_CASE("checkpoint round trip") {
    Rng rng(2);
    const auto m = random_model(rng, 3, 4, DecoderKind::decay_cell, IntegralMode::grid(64, false));
    const auto back = checkpoint_from_json(checkpoint_to_json(m));
    CHECK(back == m);

    const auto dir = std::filesystem::path(CFPP_TEST_TMP);
    std::filesystem::create_directories(dir);
    const auto path = dir / "model.ckpt";
    save_checkpoint(m, path);
    CHECK(load_checkpoint(path, 4) == m);
    CHECK_THROWS((void)load_checkpoint(path, 3));
}

TEST_CASE("neural intensity adapter agrees with the direct functions") {
    Rng rng(6);
    auto model = std::make_shared<NeuralModel>(random_model(rng, 2, 1, DecoderKind::exponential, {}));
    const auto s = random_sequence(rng, 4, 1, 10.0);
    NeuralIntensity adapter(model);
    const auto traj = encode_sequence(*model, s.events);
    CHECK(adapter.log_likelihood(s) == sequence_log_likelihood(*model, s, traj));
    const std::span<const Event> hist(s.events.data(), 2);
    const double t = s.events[2].t;
    CHECK(adapter.intensity(t, hist) == total_intensity(*model, t - s.events[1].t, traj[2]).rate);
    CHECK(adapter.upper_bound(s.events[1].t, t, hist) >= adapter.intensity(t, hist));
}

}  // TEST_SUITE
