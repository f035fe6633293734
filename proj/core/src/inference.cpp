#include "cfpp/inference.hpp"

#include "cfpp/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace cfpp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct GridOutcome {
    double mean_gap{0.0};
    double deficit{0.0};
    double window{0.0};
};

/// `increment(a, b)` is the compensator over gaps [a, b) after the last event; `survival_limit`
/// is S(infinity).
GridOutcome grid_expectation(const std::function<double(double, double)>& increment,
                             double survival_limit, double initial_span, const GridQuadrature& q) {
    if (q.sections < 2) {
        throw std::invalid_argument("grid quadrature needs at least 2 sections");
    }
    if (!(initial_span > 0.0) || !std::isfinite(initial_span)) {
        throw std::invalid_argument("grid quadrature needs a positive finite window");
    }
    double window = initial_span;
    double s_end = std::exp(-increment(0.0, window));
    int doublings = 0;
    while (s_end - survival_limit >= q.tail_tolerance) {
        if (++doublings > q.max_doublings) {
            throw QuadratureBudgetExceeded("tail mass still " + std::to_string(s_end - survival_limit) +
                                           " after " + std::to_string(q.max_doublings) +
                                           " window doublings");
        }
        window *= 2.0;
        s_end = std::exp(-increment(0.0, window));
    }
    const int n = q.sections + (q.sections % 2);
    const double step = window / n;
    double cumulative = 0.0;
    double simpson = 1.0;  // S(0)
    double prev = 0.0;
    double s_last = 1.0;
    for (int j = 1; j <= n; ++j) {
        const double tau = j == n ? window : j * step;
        cumulative += increment(prev, tau);
        prev = tau;
        s_last = std::exp(-cumulative);
        simpson += (j == n ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0)) * s_last;
    }
    const double integral = simpson * step / 3.0;
    const double mass = 1.0 - s_last;
    if (!(mass > 1e-300)) {
        throw QuadratureBudgetExceeded("no probability mass before the truncation point");
    }
    return {(integral - window * s_last) / mass, s_last, window};
}

double default_span(double rate_at_start, const GridQuadrature& q) {
    if (q.span) {
        return *q.span;
    }
    return 20.0 / std::max(rate_at_start, 1e-12);
}

std::function<double(double, double)> neural_increment(const neural::NeuralModel& model,
                                                       std::span<const double> h) {
    return [&model, h](double a, double b) { return neural::time_compensator(model, a, b, 0.0, h); };
}

}  // namespace

double predictive_density(const neural::NeuralModel& model, double t, int mark, double t_n,
                          std::span<const double> h) {
    return neural::conditional_pdf(model, t, mark, t_n, h);
}

std::optional<Event> sample_next(const neural::NeuralModel& model, std::span<const double> h,
                                 double t_n, Rng& rng, double limit) {
    double window = kInf;
    if (model.decoder() == neural::DecoderKind::exponential) {
        const double w = model.block(neural::Block::dec_w)[0];
        if (w > 0.0) {
            window = 1.0 / w;
        }
    }
    auto rate = [&](double t) { return neural::total_intensity(model, t - t_n, h).rate; };
    double t = t_n;
    while (t < limit) {
        const double end = std::min(limit, t + window);
        // Both decoders are monotone in time between events, so an endpoint bounds the window.
        const double bound = std::max(rate(t), rate(end));
        if (!(bound > 0.0)) {
            t = end;
            continue;
        }
        const double candidate = t - std::log(uniform_open0(rng)) / bound;
        if (candidate >= end) {
            t = end;
            continue;
        }
        const double r = rate(candidate);
        if (r > bound * (1.0 + 1e-12)) {
            throw std::logic_error("thinning bound violated");
        }
        t = candidate;
        if (uniform_open0(rng) * bound <= r) {
            const auto probs = neural::mark_probabilities(model, h);
            std::discrete_distribution<int> pick(probs.begin(), probs.end());
            return Event{t, pick(rng)};
        }
    }
    return std::nullopt;
}

Prediction predict_next(const neural::NeuralModel& model, std::span<const double> h, double t_n,
                        const Quadrature& quadrature) {
    Prediction p;
    p.mark_scores = neural::mark_probabilities(model, h);
    p.m_hat = static_cast<int>(std::max_element(p.mark_scores.begin(), p.mark_scores.end()) -
                               p.mark_scores.begin());

    const GridQuadrature& grid = std::holds_alternative<GridQuadrature>(quadrature)
                                     ? std::get<GridQuadrature>(quadrature)
                                     : std::get<McQuadrature>(quadrature).window;
    const double total = neural::total_compensator(model, h);
    const double survival_limit = std::isfinite(total) ? std::exp(-total) : 0.0;
    const double start_rate = neural::total_intensity(model, 0.0, h).rate;
    const auto outcome =
        grid_expectation(neural_increment(model, h), survival_limit, default_span(start_rate, grid), grid);
    p.t_max = t_n + outcome.window;
    p.deficit_mass = outcome.deficit;

    if (const auto* mc = std::get_if<McQuadrature>(&quadrature)) {
        if (mc->samples < 1) {
            throw std::invalid_argument("Monte Carlo quadrature needs at least one sample");
        }
        Rng rng(mix64(mc->seed));
        double sum = 0.0;
        double sum_sq = 0.0;
        int misses = 0;
        for (int i = 0; i < mc->samples; ++i) {
            const auto e = sample_next(model, h, t_n, rng, p.t_max);
            if (!e) {
                ++misses;
                continue;
            }
            p.sample_times.push_back(e->t);
            sum += e->t - t_n;
            sum_sq += (e->t - t_n) * (e->t - t_n);
        }
        const auto hits = static_cast<double>(p.sample_times.size());
        if (hits == 0.0) {
            throw QuadratureBudgetExceeded("no Monte Carlo draw fell before the truncation point");
        }
        const double mean = sum / hits;
        const double var = hits > 1.0 ? std::max(0.0, (sum_sq - hits * mean * mean) / (hits - 1.0)) : 0.0;
        p.t_hat = t_n + mean;
        p.std_error = std::sqrt(var / hits);
        p.deficit_mass = static_cast<double>(misses) / mc->samples;
    } else {
        p.t_hat = t_n + outcome.mean_gap;
    }
    return p;
}

double expected_next_time(const IntensityModel& model, std::span<const Event> history,
                          const GridQuadrature& quadrature) {
    const double t_n = history.empty() ? 0.0 : history.back().t;
    auto increment = [&](double a, double b) { return model.compensator(t_n + a, t_n + b, history); };
    // Rate at t_n itself counts the event at t_n.
    const double start_rate = model.upper_bound(t_n, t_n, history);
    const auto outcome = grid_expectation(increment, 0.0, default_span(start_rate, quadrature), quadrature);
    return t_n + outcome.mean_gap;
}

}  // namespace cfpp
