#include "cfpp/classical.hpp"

#include "cfpp/numerics.hpp"
#include "cfpp/parallel.hpp"
#include "optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cfpp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const char* msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

}  // namespace

void ExpHawkesParams::validate() const {
    require(std::isfinite(mu) && mu >= 0.0, "exp hawkes: mu must be finite and >= 0");
    require(std::isfinite(alpha) && alpha >= 0.0, "exp hawkes: alpha must be finite and >= 0");
    require(std::isfinite(beta) && beta > 0.0, "exp hawkes: beta must be finite and > 0");
}

void SelfCorrectingParams::validate() const {
    require(std::isfinite(mu), "self-correcting: mu must be finite");
    require(std::isfinite(alpha) && alpha >= 0.0, "self-correcting: alpha must be finite and >= 0");
}

void PoissonParams::validate() const {
    require(std::isfinite(rate) && rate >= 0.0, "poisson: rate must be finite and >= 0");
}

double exp_hawkes_intensity(double t, std::span<const double> history, const ExpHawkesParams& p) {
    double rate = p.mu;
    for (double ti : history) {
        if (ti < t) {
            rate += p.alpha * std::exp(-p.beta * (t - ti));
        }
    }
    return rate;
}

double exp_hawkes_compensator(double t0, double t1, std::span<const double> history,
                              const ExpHawkesParams& p) {
    if (!(t1 > t0)) {
        return 0.0;
    }
    double excitation = 0.0;
    for (double ti : history) {
        excitation += std::exp(-p.beta * (t0 - ti)) - std::exp(-p.beta * (t1 - ti));
    }
    return p.mu * (t1 - t0) + (p.alpha / p.beta) * excitation;
}

double self_correcting_intensity(double t, std::size_t event_count_before_t,
                                 const SelfCorrectingParams& p) {
    return std::exp(p.mu * t - p.alpha * static_cast<double>(event_count_before_t));
}

double self_correcting_compensator(double t0, double t1, std::size_t event_count,
                                   const SelfCorrectingParams& p) {
    if (!(t1 > t0)) {
        return 0.0;
    }
    return exp_linear_integral(p.mu * t0 - p.alpha * static_cast<double>(event_count), p.mu,
                               t1 - t0);
}

double IntensityModel::log_likelihood(const EventSequence& seq) const {
    double ll = 0.0;
    double prev = 0.0;
    const std::span<const Event> events(seq.events);
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto history = events.first(i);
        ll += std::log(intensity(events[i].t, history)) - compensator(prev, events[i].t, history);
        prev = events[i].t;
    }
    return ll - compensator(prev, seq.horizon, events);
}

// ---------------------------------------------------------------------------

PoissonModel::PoissonModel(PoissonParams p) : p_(p) { p_.validate(); }

double PoissonModel::intensity(double, std::span<const Event>) const { return p_.rate; }

double PoissonModel::compensator(double t0, double t1, std::span<const Event>) const {
    return t1 > t0 ? p_.rate * (t1 - t0) : 0.0;
}

double PoissonModel::upper_bound(double, double, std::span<const Event>) const { return p_.rate; }

double PoissonModel::log_likelihood(const EventSequence& seq) const {
    return static_cast<double>(seq.events.size()) * std::log(p_.rate) - p_.rate * seq.horizon;
}

ExpHawkesModel::ExpHawkesModel(ExpHawkesParams p) : p_(p) { p_.validate(); }

double ExpHawkesModel::intensity(double t, std::span<const Event> history) const {
    double rate = p_.mu;
    for (const auto& e : history) {
        if (e.t < t) {
            rate += p_.alpha * std::exp(-p_.beta * (t - e.t));
        }
    }
    return rate;
}

double ExpHawkesModel::compensator(double t0, double t1, std::span<const Event> history) const {
    if (!(t1 > t0)) {
        return 0.0;
    }
    double excitation = 0.0;
    for (const auto& e : history) {
        excitation += std::exp(-p_.beta * (t0 - e.t)) - std::exp(-p_.beta * (t1 - e.t));
    }
    return p_.mu * (t1 - t0) + (p_.alpha / p_.beta) * excitation;
}

double ExpHawkesModel::upper_bound(double t0, double, std::span<const Event> history) const {
    double rate = p_.mu;
    for (const auto& e : history) {
        if (e.t <= t0) {
            rate += p_.alpha * std::exp(-p_.beta * (t0 - e.t));
        }
    }
    return rate;
}

double ExpHawkesModel::log_likelihood(const EventSequence& seq) const {
    double ll = 0.0;
    double excitation = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const double t = seq.events[i].t;
        if (i > 0) {
            excitation = std::exp(-p_.beta * (t - prev)) * (1.0 + excitation);
        }
        ll += std::log(p_.mu + p_.alpha * excitation);
        prev = t;
    }
    ll -= p_.mu * seq.horizon;
    for (const auto& e : seq.events) {
        ll -= (p_.alpha / p_.beta) * -std::expm1(-p_.beta * (seq.horizon - e.t));
    }
    return ll;
}

SelfCorrectingModel::SelfCorrectingModel(SelfCorrectingParams p) : p_(p) { p_.validate(); }

double SelfCorrectingModel::intensity(double t, std::span<const Event> history) const {
    std::size_t n = 0;
    for (const auto& e : history) {
        n += e.t < t ? 1 : 0;
    }
    return self_correcting_intensity(t, n, p_);
}

double SelfCorrectingModel::compensator(double t0, double t1, std::span<const Event> history) const {
    return self_correcting_compensator(t0, t1, history.size(), p_);
}

double SelfCorrectingModel::upper_bound(double t0, double t1, std::span<const Event> history) const {
    std::size_t n = 0;
    for (const auto& e : history) {
        n += e.t <= t0 ? 1 : 0;
    }
    return std::max(self_correcting_intensity(t0, n, p_), self_correcting_intensity(t1, n, p_));
}

double SelfCorrectingModel::bound_window(double, std::span<const Event>) const {
    // The rate grows by at most a factor e across one window.
    return p_.mu != 0.0 ? 1.0 / std::abs(p_.mu) : std::numeric_limits<double>::infinity();
}

double SelfCorrectingModel::log_likelihood(const EventSequence& seq) const {
    double ll = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const double t = seq.events[i].t;
        ll += p_.mu * t - p_.alpha * static_cast<double>(i);
        ll -= self_correcting_compensator(prev, t, i, p_);
        prev = t;
    }
    return ll - self_correcting_compensator(prev, seq.horizon, seq.events.size(), p_);
}

// ---------------------------------------------------------------------------

MarkPmf::MarkPmf(std::vector<MarkPiece> pieces) : pieces_(std::move(pieces)) {
    require(!pieces_.empty(), "mark pmf needs at least one piece");
    mark_count_ = static_cast<int>(pieces_.front().probabilities.size());
    require(mark_count_ > 0, "mark pmf rows must be non-empty");
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        const auto& piece = pieces_[i];
        require(piece.t_high >= piece.t_low, "mark pmf piece has t_high < t_low");
        require(static_cast<int>(piece.probabilities.size()) == mark_count_,
                "mark pmf rows must share one mark count");
        double sum = 0.0;
        for (double q : piece.probabilities) {
            require(q >= 0.0 && std::isfinite(q), "mark pmf probabilities must be >= 0");
            sum += q;
        }
        require(std::abs(sum - 1.0) <= 1e-12, "mark pmf row must sum to 1");
        if (i > 0) {
            require(piece.t_low == pieces_[i - 1].t_high, "mark pmf pieces must be contiguous");
        }
    }
}

MarkPmf MarkPmf::constant(std::vector<double> probabilities, double horizon) {
    return MarkPmf({MarkPiece{0.0, horizon, std::move(probabilities)}});
}

MarkPmf MarkPmf::time_phased_three_marks(double horizon) {
    return MarkPmf({
        MarkPiece{0.0, 40.0, {0.2, 0.8, 0.0}},
        MarkPiece{40.0, 80.0, {0.2, 0.0, 0.8}},
        MarkPiece{80.0, std::max(horizon, 80.0), {1.0, 0.0, 0.0}},
    });
}

const std::vector<double>& MarkPmf::row_at(double t) const {
    for (const auto& piece : pieces_) {
        if (t >= piece.t_low && t <= piece.t_high) {
            return piece.probabilities;
        }
    }
    throw std::out_of_range("time " + std::to_string(t) + " is outside every mark pmf piece");
}

int sample_mark(double t, const MarkPmf& pmf, Rng& rng) {
    const auto& row = pmf.row_at(t);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t m = 0; m < row.size(); ++m) {
        if (row[m] <= 0.0) {
            continue;
        }
        last_positive = static_cast<int>(m);
        acc += row[m];
        if (u < acc) {
            return static_cast<int>(m);
        }
    }
    return last_positive;
}

// ---------------------------------------------------------------------------

EventSequence thinning_simulate(const IntensityModel& model, double horizon,
                                const MarkPmf* mark_pmf, Rng& rng,
                                const ThinningOptions& options) {
    require(horizon > 0.0 && std::isfinite(horizon), "thinning: horizon must be positive");
    EventSequence seq;
    seq.horizon = horizon;
    double t = 0.0;
    while (t < horizon) {
        const std::span<const Event> history(seq.events);
        const double window_end = std::min(horizon, t + model.bound_window(t, history));
        const double bound = model.upper_bound(t, window_end, history);
        if (!(bound > 0.0)) {
            t = window_end;
            continue;
        }
        const double candidate = t - std::log(uniform_open0(rng)) / bound;
        if (candidate >= window_end) {
            t = window_end;
            continue;
        }
        if (!(candidate > t)) {
            continue;
        }
        t = candidate;
        const double rate = model.intensity(candidate, history);
        if (rate > bound * (1.0 + 1e-9)) {
            throw std::logic_error("thinning: dominating rate bound violated");
        }
        if (uniform_open0(rng) * bound <= rate) {
            const int mark = mark_pmf != nullptr ? sample_mark(candidate, *mark_pmf, rng) : 0;
            seq.events.push_back(Event{candidate, mark});
            if (seq.events.size() > options.max_events) {
                throw ExplosionError("thinning: more than " + std::to_string(options.max_events) +
                                     " events before horizon " + std::to_string(horizon));
            }
        }
    }
    return seq;
}

std::vector<EventSequence> simulate_sequences(const IntensityModel& model, std::size_t count,
                                              double horizon, const MarkPmf* mark_pmf,
                                              std::uint64_t master_seed, std::uint64_t first_stream,
                                              const std::string& id_prefix, int threads,
                                              const ThinningOptions& options) {
    std::vector<EventSequence> out(count);
    parallel_for(count, threads, [&](std::size_t i) {
        Rng rng = stream_rng(master_seed, first_stream + i);
        out[i] = thinning_simulate(model, horizon, mark_pmf, rng, options);
        out[i].user_id = id_prefix + std::to_string(i);
    });
    return out;
}

// ---------------------------------------------------------------------------

std::string to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::poisson: return "poisson";
        case ModelFamily::exp_hawkes: return "exp-hawkes";
        case ModelFamily::self_correcting: return "self-correcting";
    }
    return "unknown";
}

ModelFamily parse_model_family(const std::string& s) {
    if (s == "poisson") return ModelFamily::poisson;
    if (s == "exp-hawkes" || s == "hawkes") return ModelFamily::exp_hawkes;
    if (s == "self-correcting" || s == "self-corr") return ModelFamily::self_correcting;
    throw std::invalid_argument("unknown model family '" + s + "'");
}

std::shared_ptr<const IntensityModel> make_model(const ClassicalParams& params) {
    return std::visit(
        [](const auto& p) -> std::shared_ptr<const IntensityModel> {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, PoissonParams>) {
                return std::make_shared<PoissonModel>(p);
            } else if constexpr (std::is_same_v<P, ExpHawkesParams>) {
                return std::make_shared<ExpHawkesModel>(p);
            } else {
                return std::make_shared<SelfCorrectingModel>(p);
            }
        },
        params);
}

namespace {

double hawkes_objective(const Dataset& data, std::span<const double> x, std::span<double> grad) {
    const double mu = std::exp(x[0]);
    const double alpha = std::exp(x[1]);
    const double beta = std::exp(x[2]);
    double ll = 0.0;
    double g_mu = 0.0, g_alpha = 0.0, g_beta = 0.0;
    for (const auto& seq : data.sequences) {
        double a = 0.0;  // excitation sum without alpha
        double b = 0.0;  // d a / d beta
        double prev = 0.0;
        for (std::size_t i = 0; i < seq.events.size(); ++i) {
            const double t = seq.events[i].t;
            if (i > 0) {
                const double dt = t - prev;
                const double decay = std::exp(-beta * dt);
                b = decay * (b - dt * (1.0 + a));
                a = decay * (1.0 + a);
            }
            const double rate = mu + alpha * a;
            ll += std::log(rate);
            g_mu += 1.0 / rate;
            g_alpha += a / rate;
            g_beta += alpha * b / rate;
            prev = t;
        }
        ll -= mu * seq.horizon;
        g_mu -= seq.horizon;
        for (const auto& e : seq.events) {
            const double tau = seq.horizon - e.t;
            const double decay = std::exp(-beta * tau);
            const double one_minus = -std::expm1(-beta * tau);
            ll -= alpha / beta * one_minus;
            g_alpha -= one_minus / beta;
            g_beta -= -alpha / (beta * beta) * one_minus + alpha / beta * tau * decay;
        }
    }
    if (!grad.empty()) {
        grad[0] = mu * g_mu;
        grad[1] = alpha * g_alpha;
        grad[2] = beta * g_beta;
    }
    return ll;
}

double self_correcting_objective(const Dataset& data, std::span<const double> x,
                                 std::span<double> grad) {
    const double mu = x[0];
    const double alpha = std::exp(x[1]);
    double ll = 0.0;
    double g_mu = 0.0, g_alpha = 0.0;
    for (const auto& seq : data.sequences) {
        const std::size_t n = seq.events.size();
        for (std::size_t k = 0; k <= n; ++k) {
            const double start = k == 0 ? 0.0 : seq.events[k - 1].t;
            const double end = k == n ? seq.horizon : seq.events[k].t;
            const double kd = static_cast<double>(k);
            const double offset = mu * start - alpha * kd;
            const double len = end - start;
            const double integral = exp_linear_integral(offset, mu, len);
            const double moment = start * integral + exp_linear_moment(offset, mu, len);
            ll -= integral;
            g_mu -= moment;
            g_alpha += kd * integral;
            if (k < n) {
                ll += mu * end - alpha * kd;
                g_mu += end;
                g_alpha -= kd;
            }
        }
    }
    if (!grad.empty()) {
        grad[0] = g_mu;
        grad[1] = alpha * g_alpha;
    }
    return ll;
}

double poisson_objective(const Dataset& data, std::span<const double> x, std::span<double> grad) {
    const double rate = std::exp(x[0]);
    double n = 0.0, horizon = 0.0;
    for (const auto& seq : data.sequences) {
        n += static_cast<double>(seq.events.size());
        horizon += seq.horizon;
    }
    if (!grad.empty()) {
        grad[0] = n - rate * horizon;
    }
    return n * x[0] - rate * horizon;
}

ClassicalParams params_from_coords(ModelFamily family, std::span<const double> x) {
    switch (family) {
        case ModelFamily::poisson: return PoissonParams{std::exp(x[0])};
        case ModelFamily::exp_hawkes:
            return ExpHawkesParams{std::exp(x[0]), std::exp(x[1]), std::exp(x[2])};
        case ModelFamily::self_correcting: return SelfCorrectingParams{x[0], std::exp(x[1])};
    }
    throw std::logic_error("unreachable");
}

double log_uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng);
}

}  // namespace

double classical_objective(const Dataset& data, ModelFamily family, std::span<const double> x,
                           std::span<double> grad) {
    double value = 0.0;
    switch (family) {
        case ModelFamily::poisson: value = poisson_objective(data, x, grad); break;
        case ModelFamily::exp_hawkes: value = hawkes_objective(data, x, grad); break;
        case ModelFamily::self_correcting: value = self_correcting_objective(data, x, grad); break;
    }
    if (!std::isfinite(value)) {
        return kNegInf;
    }
    return value;
}

MleResult classical_mle(const Dataset& data, ModelFamily family, const MleOptions& options) {
    std::size_t total_events = 0;
    double total_horizon = 0.0;
    for (const auto& seq : data.sequences) {
        total_events += seq.events.size();
        total_horizon += seq.horizon;
    }
    if (data.sequences.empty() || total_events == 0) {
        throw std::invalid_argument("classical_mle: needs at least one sequence with events");
    }
    const double rate = static_cast<double>(total_events) / total_horizon;

    std::vector<std::vector<double>> starts;
    Rng rng(mix64(options.seed));
    switch (family) {
        case ModelFamily::poisson: starts.push_back({std::log(rate)}); break;
        case ModelFamily::exp_hawkes:
            starts.push_back({std::log(0.5 * rate), std::log(0.5), std::log(1.0)});
            for (int r = 1; r < options.restarts; ++r) {
                const double ratio = std::uniform_real_distribution<double>(0.05, 0.9)(rng);
                const double beta = std::exp(log_uniform(rng, 0.1, 10.0));
                const double mu =
                    rate * (1.0 - ratio) * std::uniform_real_distribution<double>(0.5, 1.5)(rng);
                starts.push_back({std::log(mu), std::log(ratio * beta), std::log(beta)});
            }
            break;
        case ModelFamily::self_correcting:
            starts.push_back({rate, 0.0});
            for (int r = 1; r < options.restarts; ++r) {
                const double alpha = std::exp(log_uniform(rng, 0.1, 5.0));
                const double mu =
                    alpha * rate * std::uniform_real_distribution<double>(0.7, 1.3)(rng);
                starts.push_back({mu, std::log(alpha)});
            }
            break;
    }

    const detail::Objective objective = [&](std::span<const double> x, std::span<double> g) {
        return classical_objective(data, family, x, g);
    };

    MleResult result;
    result.log_likelihood = kNegInf;
    std::vector<double> best_x;
    for (const auto& start : starts) {
        std::vector<double> g(start.size());
        result.start_log_likelihoods.push_back(objective(start, g));
        auto opt = family == ModelFamily::poisson
                       ? detail::OptimizeResult{start, result.start_log_likelihoods.back(), 0, true}
                       : detail::maximize_bfgs(objective, start, options.max_iterations,
                                               options.gradient_tolerance);
        result.iterations += opt.iterations;
        if (opt.value > result.log_likelihood || best_x.empty()) {
            result.log_likelihood = opt.value;
            best_x = opt.x;
        }
    }
    result.params = params_from_coords(family, best_x);

    const auto model = make_model(result.params);
    for (const auto& seq : data.sequences) {
        const double ll = model->log_likelihood(seq);
        if (!std::isfinite(ll)) {
            throw NonFiniteLikelihood("classical_mle: non-finite log-likelihood for sequence '" +
                                      seq.user_id + "'");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

std::vector<double> rescaled_interarrivals(const IntensityModel& model, const EventSequence& seq,
                                           double starts_before) {
    std::vector<double> out;
    out.reserve(seq.events.size());
    const std::span<const Event> events(seq.events);
    double prev = 0.0;
    for (std::size_t i = 0; i < events.size() && prev < starts_before; ++i) {
        out.push_back(model.compensator(prev, events[i].t, events.first(i)));
        prev = events[i].t;
    }
    return out;
}

KsResult ks_test_unit_exponential(std::vector<double> samples) {
    KsResult r;
    r.n = samples.size();
    if (samples.empty()) {
        return r;
    }
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double cdf = -std::expm1(-std::max(0.0, samples[i]));
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - cdf, cdf - static_cast<double>(i) / n});
    }
    r.statistic = d;
    const double sqrt_n = std::sqrt(n);
    const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if (lambda < 1e-3) {
        r.p_value = 1.0;
        return r;
    }
    double q = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        q += (k % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-16) {
            break;
        }
    }
    r.p_value = std::clamp(q, 0.0, 1.0);
    return r;
}

}  // namespace cfpp
