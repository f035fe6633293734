#include "cfpp/neural.hpp"

#include "cfpp/dataset_io.hpp"
#include "cfpp/numerics.hpp"
#include "cfpp/rng.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cfpp::neural {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

const char* block_name(Block id) {
    switch (id) {
        case Block::enc_recurrence: return "enc.recurrence";
        case Block::enc_dt: return "enc.dt";
        case Block::enc_mark: return "enc.mark";
        case Block::enc_bias: return "enc.bias";
        case Block::dec_v: return "dec.v";
        case Block::dec_w: return "dec.w";
        case Block::dec_b: return "dec.b";
        case Block::dec_mark_weight: return "dec.mark_weight";
        case Block::dec_mark_bias: return "dec.mark_bias";
        case Block::dec_rest: return "dec.rest";
        case Block::dec_decay: return "dec.decay";
    }
    return "?";
}

}  // namespace

std::string to_string(DecoderKind k) {
    return k == DecoderKind::exponential ? "exponential" : "decay-cell";
}

DecoderKind parse_decoder(const std::string& s) {
    if (s == "exponential" || s == "rmtpp") return DecoderKind::exponential;
    if (s == "decay-cell" || s == "nh") return DecoderKind::decay_cell;
    throw std::invalid_argument("unknown decoder '" + s + "'");
}

std::vector<ParamBlock> make_layout(const ModelShape& shape) {
    if (shape.q < 1 || shape.mark_count < 1) {
        throw std::invalid_argument("model shape needs q >= 1 and mark_count >= 1");
    }
    const auto q = static_cast<std::size_t>(shape.q);
    const auto marks = static_cast<std::size_t>(shape.mark_count);
    std::vector<ParamBlock> layout;
    std::size_t offset = 0;
    auto add = [&](Block id, std::size_t rows, std::size_t cols) {
        layout.push_back(ParamBlock{id, block_name(id), offset, rows, cols});
        offset += rows * cols;
    };
    add(Block::enc_recurrence, q, q);
    add(Block::enc_dt, 1, q);
    add(Block::enc_mark, marks, q);
    add(Block::enc_bias, 1, q);
    add(Block::dec_v, 1, q);
    if (shape.decoder == DecoderKind::exponential) {
        add(Block::dec_w, 1, 1);
    }
    add(Block::dec_b, 1, 1);
    add(Block::dec_mark_weight, marks, q);
    add(Block::dec_mark_bias, 1, marks);
    if (shape.decoder == DecoderKind::decay_cell) {
        add(Block::dec_rest, 1, q);
        add(Block::dec_decay, 1, 1);
    }
    return layout;
}

// ---------------------------------------------------------------------------

NeuralModel::NeuralModel(ModelShape shape, IntegralMode mode)
    : shape_(shape), layout_(make_layout(shape)) {
    std::size_t total = 0;
    for (const auto& b : layout_) {
        total += b.size();
    }
    params_.assign(total, 0.0);
    set_integral_mode(mode);
}

void NeuralModel::set_integral_mode(IntegralMode mode) {
    if (mode.kind == IntegralMode::Kind::grid && mode.sections < 1) {
        throw std::invalid_argument("grid integral needs at least one section");
    }
    if (mode.kind == IntegralMode::Kind::closed && shape_.decoder == DecoderKind::decay_cell) {
        throw std::invalid_argument("the decay-cell decoder requires the grid integral mode");
    }
    mode_ = mode;
}

NeuralModel NeuralModel::initialize(ModelShape shape, IntegralMode mode, std::uint64_t seed,
                                    double base_rate, double scale) {
    NeuralModel model(shape, mode);
    Rng rng(mix64(seed ^ 0x5eed5eedULL));
    std::normal_distribution<double> normal(0.0, scale);
    for (const auto& b : model.layout_) {
        auto values = model.block(b.id);
        switch (b.id) {
            case Block::enc_recurrence:
            case Block::enc_dt:
            case Block::enc_mark:
            case Block::dec_v:
            case Block::dec_mark_weight:
                for (double& v : values) {
                    v = normal(rng);
                }
                break;
            default: break;
        }
    }
    const double rate = std::max(base_rate, 1e-6);
    if (shape.decoder == DecoderKind::exponential) {
        model.block(Block::dec_b)[0] = std::log(rate);
    } else {
        model.block(Block::dec_b)[0] = rate > 30.0 ? rate : std::log(std::expm1(rate));
        model.block(Block::dec_decay)[0] = std::log(std::expm1(1.0));
    }
    return model;
}

bool NeuralModel::has_block(Block id) const {
    return std::any_of(layout_.begin(), layout_.end(), [id](const auto& b) { return b.id == id; });
}

const ParamBlock& NeuralModel::block_info(Block id) const {
    for (const auto& b : layout_) {
        if (b.id == id) {
            return b;
        }
    }
    throw std::out_of_range(std::string("model has no parameter block ") + block_name(id));
}

std::span<double> NeuralModel::block(Block id) {
    const auto& b = block_info(id);
    return std::span<double>(params_).subspan(b.offset, b.size());
}

std::span<const double> NeuralModel::block(Block id) const {
    const auto& b = block_info(id);
    return std::span<const double>(params_).subspan(b.offset, b.size());
}

EncoderView NeuralModel::encoder() const {
    return EncoderView{shape_.q, block(Block::enc_recurrence), block(Block::enc_dt),
                       block(Block::enc_mark), block(Block::enc_bias)};
}

std::string NeuralModel::param_name(std::size_t i) const {
    for (const auto& b : layout_) {
        if (i >= b.offset && i < b.offset + b.size()) {
            const std::size_t k = i - b.offset;
            if (b.rows == 1) {
                return b.name + "[" + std::to_string(k) + "]";
            }
            return b.name + "[" + std::to_string(k / b.cols) + "," + std::to_string(k % b.cols) + "]";
        }
    }
    return "param[" + std::to_string(i) + "]";
}

// ---------------------------------------------------------------------------

HistoryTrajectory::HistoryTrajectory(int q) : q_(q) {}

void HistoryTrajectory::push_back(std::span<const double> h) {
    if (static_cast<int>(h.size()) != q_) {
        throw std::invalid_argument("embedding dimension mismatch");
    }
    data_.insert(data_.end(), h.begin(), h.end());
}

Embedding initial_embedding(int q) { return Embedding(static_cast<std::size_t>(q), 0.5); }

Embedding encode_step(std::span<const double> h_prev, double dt, int mark, const EncoderView& p) {
    const auto q = static_cast<std::size_t>(p.q);
    Embedding h(q);
    for (std::size_t i = 0; i < q; ++i) {
        double a = p.bias[i] + p.dt_weights[i] * dt + p.mark_embedding[mark * q + i];
        for (std::size_t j = 0; j < q; ++j) {
            a += p.recurrence[i * q + j] * h_prev[j];
        }
        h[i] = sigmoid(a);
    }
    return h;
}

HistoryTrajectory encode_sequence(const NeuralModel& model, std::span<const Event> events) {
    HistoryTrajectory traj(model.q());
    const auto enc = model.encoder();
    Embedding h = initial_embedding(model.q());
    traj.push_back(h);
    double prev = 0.0;
    for (const auto& e : events) {
        if (e.m < 0 || e.m >= model.mark_count()) {
            throw std::invalid_argument("event mark outside the model's mark space");
        }
        h = encode_step(h, e.t - prev, e.m, enc);
        traj.push_back(h);
        prev = e.t;
    }
    return traj;
}

EncodedHistory encode_history(const NeuralModel& model, std::span<const Event> events) {
    const auto enc = model.encoder();
    EncodedHistory out{initial_embedding(model.q()), 0.0};
    for (const auto& e : events) {
        out.h = encode_step(out.h, e.t - out.last_time, e.m, enc);
        out.last_time = e.t;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decoder internals
// ---------------------------------------------------------------------------

namespace {

struct DecayParams {
    std::vector<double> rest;  // sigmoid(dec.rest)
    double gamma{1.0};
    double dgamma{0.0};  // d gamma / d dec.decay
};

DecayParams decay_params(const NeuralModel& model) {
    DecayParams d;
    for (double r : model.block(Block::dec_rest)) {
        d.rest.push_back(sigmoid(r));
    }
    const double kappa = model.block(Block::dec_decay)[0];
    d.gamma = softplus(kappa);
    d.dgamma = sigmoid(kappa);
    return d;
}

/// Decoder evaluation context for one embedding.
class TimeHead {
public:
    TimeHead(const NeuralModel& model, std::span<const double> h)
        : model_(model), h_(h), v_(model.block(Block::dec_v)), b_(model.block(Block::dec_b)[0]) {
        if (model.decoder() == DecoderKind::exponential) {
            w_ = model.block(Block::dec_w)[0];
            base_ = dot(v_, h_) + b_;
        } else {
            decay_ = decay_params(model);
            rest_dot_ = dot(v_, decay_.rest);
            delta_dot_ = dot(v_, h_) - rest_dot_;
        }
    }

    [[nodiscard]] bool exponential() const { return model_.decoder() == DecoderKind::exponential; }

    /// Unclamped exponent z(tau).
    [[nodiscard]] double exponent(double tau) const {
        if (exponential()) {
            return base_ + w_ * tau;
        }
        return rest_dot_ + delta_dot_ * std::exp(-decay_.gamma * tau) + b_;
    }

    [[nodiscard]] static bool clamped(double z) { return std::abs(z) > kExponentClamp; }
    [[nodiscard]] static double clamp(double z) {
        return std::clamp(z, -kExponentClamp, kExponentClamp);
    }

    [[nodiscard]] double rate_from_exponent(double z) const {
        const double zc = clamp(z);
        return exponential() ? std::exp(zc) : softplus(zc);
    }

    [[nodiscard]] Intensity rate(double tau) const {
        const double z = exponent(tau);
        return {rate_from_exponent(z), clamped(z)};
    }

    /// d log(rate) / dz, zero inside the clamp.
    [[nodiscard]] double dlog_rate(double z) const {
        if (clamped(z)) {
            return 0.0;
        }
        return exponential() ? 1.0 : sigmoid(z) / softplus(z);
    }

    /// d rate / dz, zero inside the clamp.
    [[nodiscard]] double drate(double z) const {
        if (clamped(z)) {
            return 0.0;
        }
        return exponential() ? std::exp(z) : sigmoid(z);
    }

    /// Rate limit as tau -> infinity.
    [[nodiscard]] double limit_rate() const {
        if (exponential()) {
            if (w_ > 0.0) return rate_from_exponent(kInf);
            if (w_ < 0.0) return rate_from_exponent(-kInf);
            return rate_from_exponent(base_);
        }
        return rate_from_exponent(rest_dot_ + b_);
    }

    /// Adds g * dz/d(param) into grad and g * dz/dh into dh.
    void exponent_grad(const NeuralModel& model, double tau, double g, std::span<double> grad,
                       std::span<double> dh) const {
        if (g == 0.0) {
            return;
        }
        const auto& vb = model.block_info(Block::dec_v);
        const std::size_t b_off = model.block_info(Block::dec_b).offset;
        const std::size_t q = h_.size();
        if (exponential()) {
            for (std::size_t j = 0; j < q; ++j) {
                grad[vb.offset + j] += g * h_[j];
                dh[j] += g * v_[j];
            }
            grad[model.block_info(Block::dec_w).offset] += g * tau;
            grad[b_off] += g;
            return;
        }
        const double e = std::exp(-decay_.gamma * tau);
        const std::size_t rest_off = model.block_info(Block::dec_rest).offset;
        const std::size_t decay_off = model.block_info(Block::dec_decay).offset;
        double dgamma = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            const double r = decay_.rest[j];
            const double s = r + (h_[j] - r) * e;
            grad[vb.offset + j] += g * s;
            dh[j] += g * v_[j] * e;
            grad[rest_off + j] += g * v_[j] * (1.0 - e) * r * (1.0 - r);
            dgamma += v_[j] * (h_[j] - r) * (-tau * e);
        }
        grad[decay_off] += g * dgamma * decay_.dgamma;
        grad[b_off] += g;
    }

    [[nodiscard]] double w() const { return w_; }
    [[nodiscard]] double base() const { return base_; }
    [[nodiscard]] double gamma() const { return decay_.gamma; }

private:
    const NeuralModel& model_;
    std::span<const double> h_;
    std::span<const double> v_;
    double b_{0.0};
    double w_{0.0};
    double base_{0.0};
    DecayParams decay_;
    double rest_dot_{0.0};
    double delta_dot_{0.0};
};

struct ClampedIntegral {
    double value{0.0};
    double d_base{0.0};  // d/d a
    double d_w{0.0};     // d/d w
};

/// Integral over tau in [tau0, tau1] of exp(clamp(a + w tau)), with derivatives in a and w.
/// Clamped stretches contribute exp(+-50) * length and no derivative.
ClampedIntegral clamped_exp_integral(double a, double w, double tau0, double tau1) {
    ClampedIntegral out;
    if (!(tau1 > tau0)) {
        return out;
    }
    const double hi = kExponentClamp;
    if (std::abs(w) < 1e-8) {
        const double len = tau1 - tau0;
        if (std::abs(a) > hi) {
            out.value = std::exp(std::clamp(a, -hi, hi)) * len;
            return out;
        }
        const double ea = std::exp(a);
        out.value = ea * len;
        out.d_base = out.value;
        out.d_w = ea * 0.5 * (tau1 * tau1 - tau0 * tau0);
        return out;
    }
    // tau range where -hi <= a + w tau <= hi
    double lo_tau = (-hi - a) / w;
    double hi_tau = (hi - a) / w;
    if (lo_tau > hi_tau) {
        std::swap(lo_tau, hi_tau);
    }
    const double p = std::clamp(lo_tau, tau0, tau1);
    const double q = std::clamp(hi_tau, tau0, tau1);
    auto clamped_part = [&](double from, double to) {
        if (to > from) {
            const double mid = a + w * 0.5 * (from + to);
            out.value += std::exp(mid > 0.0 ? hi : -hi) * (to - from);
        }
    };
    clamped_part(tau0, p);
    clamped_part(q, tau1);
    if (q > p) {
        const double start = a + w * p;
        const double integral = exp_linear_integral(start, w, q - p);
        out.value += integral;
        out.d_base += integral;
        out.d_w += p * integral + exp_linear_moment(start, w, q - p);
    }
    return out;
}

double numeric_compensator(const TimeHead& head, double tau0, double tau1) {
    if (!(tau1 > tau0)) {
        return 0.0;
    }
    auto f = [&](double tau) { return head.rate(tau).rate; };
    // Integrate in panels no wider than a few decay lengths so the kernel stays resolved.
    const double panel = std::max(1e-3, 4.0 / std::max(head.gamma(), 1e-6));
    double total = 0.0;
    double start = tau0;
    while (start < tau1) {
        const double end = std::min(tau1, start + panel);
        total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, start, end, 10,
                                                                               1e-10);
        start = end;
    }
    return total;
}

std::vector<double> mark_logits(const NeuralModel& model, std::span<const double> h) {
    const auto weights = model.block(Block::dec_mark_weight);
    const auto bias = model.block(Block::dec_mark_bias);
    const auto q = static_cast<std::size_t>(model.q());
    std::vector<double> logits(static_cast<std::size_t>(model.mark_count()));
    for (std::size_t m = 0; m < logits.size(); ++m) {
        logits[m] = bias[m] + dot(weights.subspan(m * q, q), h);
    }
    return logits;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) {
        v /= sum;
    }
    return p;
}

double log_softmax_at(const std::vector<double>& logits, int mark) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) {
        sum += std::exp(l - mx);
    }
    return logits[static_cast<std::size_t>(mark)] - mx - std::log(sum);
}

void check_inputs(const NeuralModel& model, const EventSequence& seq,
                  const HistoryTrajectory& traj, std::span<const double> weights) {
    if (traj.q() != model.q() || traj.size() != seq.events.size() + 1) {
        throw std::invalid_argument("trajectory is not aligned with the sequence");
    }
    if (!weights.empty() && weights.size() != seq.events.size()) {
        throw std::invalid_argument("weights must hold one value per event (got " +
                                    std::to_string(weights.size()) + " for " +
                                    std::to_string(seq.events.size()) + " events)");
    }
}

/// Iterates the grid points of the discretized compensator: callback(point_time, interval).
template <class Fn>
void for_each_grid_point(const EventSequence& seq, int sections, Fn&& fn) {
    const double dt = seq.horizon / sections;
    std::size_t k = 0;
    for (int j = 0; j <= sections; ++j) {
        const double t = j == sections ? seq.horizon : j * dt;
        while (k < seq.events.size() && seq.events[k].t < t) {
            ++k;
        }
        fn(t, k, dt);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Public decoder functions
// ---------------------------------------------------------------------------

std::vector<double> mark_probabilities(const NeuralModel& model, std::span<const double> h) {
    return softmax(mark_logits(model, h));
}

Intensity total_intensity(const NeuralModel& model, double tau, std::span<const double> h) {
    return TimeHead(model, h).rate(tau);
}

Intensity intensity(const NeuralModel& model, double t, int mark, double t_n,
                    std::span<const double> h) {
    if (mark < 0 || mark >= model.mark_count()) {
        throw std::invalid_argument("mark outside the model's mark space");
    }
    auto out = TimeHead(model, h).rate(t - t_n);
    out.rate *= mark_probabilities(model, h)[static_cast<std::size_t>(mark)];
    return out;
}

double time_compensator(const NeuralModel& model, double t0, double t1, double t_n,
                        std::span<const double> h) {
    if (!(t1 > t0)) {
        return 0.0;
    }
    const TimeHead head(model, h);
    if (head.exponential()) {
        return clamped_exp_integral(head.base(), head.w(), t0 - t_n, t1 - t_n).value;
    }
    return numeric_compensator(head, t0 - t_n, t1 - t_n);
}

double total_compensator(const NeuralModel& model, std::span<const double> h) {
    const TimeHead head(model, h);
    if (!head.exponential() || head.w() >= 0.0) {
        return kInf;
    }
    // Past the point where the exponent reaches the lower clamp the rate is treated as zero.
    const double floor_tau = std::max(0.0, (-kExponentClamp - head.base()) / head.w());
    return clamped_exp_integral(head.base(), head.w(), 0.0, floor_tau).value;
}

double conditional_pdf(const NeuralModel& model, double t, int mark, double t_n,
                       std::span<const double> h) {
    return intensity(model, t, mark, t_n, h).rate *
           std::exp(-time_compensator(model, t_n, t, t_n, h));
}

double sequence_log_likelihood(const NeuralModel& model, const EventSequence& seq,
                               const HistoryTrajectory& traj, std::span<const double> weights,
                               const IntegralMode& mode) {
    check_inputs(model, seq, traj, weights);
    if (mode.kind == IntegralMode::Kind::closed && model.decoder() == DecoderKind::decay_cell) {
        throw std::invalid_argument("the decay-cell decoder requires the grid integral mode");
    }
    const std::size_t n = seq.events.size();
    auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
    const double tail_weight = n == 0 ? 1.0 : weight(n - 1);
    const bool closed = mode.kind == IntegralMode::Kind::closed;

    double ll = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto h = traj[i];
        const TimeHead head(model, h);
        const Event& e = seq.events[i];
        const double tau = e.t - prev;
        const double log_rate = std::log(head.rate(tau).rate) + log_softmax_at(mark_logits(model, h), e.m);
        const double comp =
            closed ? clamped_exp_integral(head.base(), head.w(), 0.0, tau).value : 0.0;
        ll += weight(i) * (log_rate - comp);
        prev = e.t;
    }
    if (closed) {
        const TimeHead head(model, traj[n]);
        ll -= tail_weight * clamped_exp_integral(head.base(), head.w(), 0.0, seq.horizon - prev).value;
    } else {
        const double factor = mode.average_over_marks ? 1.0 / model.mark_count() : 1.0;
        double grid_sum = 0.0;
        for_each_grid_point(seq, mode.sections, [&](double t, std::size_t k, double dt) {
            const double start = k == 0 ? 0.0 : seq.events[k - 1].t;
            const double wt = k < n ? weight(k) : tail_weight;
            grid_sum += wt * TimeHead(model, traj[k]).rate(t - start).rate * dt;
        });
        ll -= factor * grid_sum;
    }
    if (!std::isfinite(ll)) {
        throw NonFiniteError("non-finite log-likelihood for sequence '" + seq.user_id + "'");
    }
    return ll;
}

double sequence_log_likelihood(const NeuralModel& model, const EventSequence& seq,
                               const HistoryTrajectory& traj, std::span<const double> weights) {
    return sequence_log_likelihood(model, seq, traj, weights, model.integral_mode());
}

LikelihoodGradient grad_log_likelihood(const NeuralModel& model, const EventSequence& seq,
                                       const HistoryTrajectory& traj,
                                       std::span<const double> weights, const IntegralMode& mode) {
    check_inputs(model, seq, traj, weights);
    if (mode.kind == IntegralMode::Kind::closed && model.decoder() == DecoderKind::decay_cell) {
        throw std::invalid_argument("the decay-cell decoder requires the grid integral mode");
    }
    const auto q = static_cast<std::size_t>(model.q());
    const std::size_t n = seq.events.size();
    auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
    const double tail_weight = n == 0 ? 1.0 : weight(n - 1);
    const bool closed = mode.kind == IntegralMode::Kind::closed;

    LikelihoodGradient out;
    out.gradient.assign(model.param_count(), 0.0);
    std::span<double> grad(out.gradient);
    std::vector<double> dh((n + 1) * q, 0.0);
    auto dh_at = [&](std::size_t i) { return std::span<double>(dh).subspan(i * q, q); };

    const auto& mw = model.block_info(Block::dec_mark_weight);
    const auto& mb = model.block_info(Block::dec_mark_bias);
    const auto mark_weights = model.block(Block::dec_mark_weight);

    // Event terms and closed-form compensators, one interval per event.
    double prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto h = traj[i];
        const TimeHead head(model, h);
        const Event& e = seq.events[i];
        const double tau = e.t - prev;
        const double wt = weight(i);
        const double z = head.exponent(tau);
        const auto logits = mark_logits(model, h);
        const double log_rate = std::log(head.rate_from_exponent(z)) + log_softmax_at(logits, e.m);
        head.exponent_grad(model, tau, wt * head.dlog_rate(z), grad, dh_at(i));

        const auto probs = softmax(logits);
        for (std::size_t m = 0; m < probs.size(); ++m) {
            const double dl = wt * ((static_cast<int>(m) == e.m ? 1.0 : 0.0) - probs[m]);
            grad[mb.offset + m] += dl;
            for (std::size_t j = 0; j < q; ++j) {
                grad[mw.offset + m * q + j] += dl * h[j];
                dh[i * q + j] += dl * mark_weights[m * q + j];
            }
        }

        double comp = 0.0;
        if (closed) {
            const auto ci = clamped_exp_integral(head.base(), head.w(), 0.0, tau);
            comp = ci.value;
            head.exponent_grad(model, 0.0, -wt * ci.d_base, grad, dh_at(i));
            grad[model.block_info(Block::dec_w).offset] += -wt * ci.d_w;
        }
        out.value += wt * (log_rate - comp);
        prev = e.t;
    }

    if (closed) {
        const TimeHead head(model, traj[n]);
        const auto ci = clamped_exp_integral(head.base(), head.w(), 0.0, seq.horizon - prev);
        out.value -= tail_weight * ci.value;
        head.exponent_grad(model, 0.0, -tail_weight * ci.d_base, grad, dh_at(n));
        grad[model.block_info(Block::dec_w).offset] += -tail_weight * ci.d_w;
    } else {
        const double factor = mode.average_over_marks ? 1.0 / model.mark_count() : 1.0;
        double grid_sum = 0.0;
        for_each_grid_point(seq, mode.sections, [&](double t, std::size_t k, double dt) {
            const double start = k == 0 ? 0.0 : seq.events[k - 1].t;
            const double wt = k < n ? weight(k) : tail_weight;
            const TimeHead head(model, traj[k]);
            const double tau = t - start;
            const double z = head.exponent(tau);
            grid_sum += wt * head.rate_from_exponent(z) * dt;
            head.exponent_grad(model, tau, -factor * wt * dt * head.drate(z), grad, dh_at(k));
        });
        out.value -= factor * grid_sum;
    }

    // Backpropagate through h_i = sigmoid(R h_{i-1} + u dt_i + E[m_i] + b).
    const auto& rec = model.block_info(Block::enc_recurrence);
    const auto& dtw = model.block_info(Block::enc_dt);
    const auto& emb = model.block_info(Block::enc_mark);
    const auto& eb = model.block_info(Block::enc_bias);
    const auto recurrence = model.block(Block::enc_recurrence);
    std::vector<double> da(q);
    for (std::size_t i = n; i >= 1; --i) {
        const auto h = traj[i];
        const auto h_prev = traj[i - 1];
        const double dt = seq.events[i - 1].t - (i >= 2 ? seq.events[i - 2].t : 0.0);
        const auto mark = static_cast<std::size_t>(seq.events[i - 1].m);
        for (std::size_t r = 0; r < q; ++r) {
            da[r] = dh[i * q + r] * h[r] * (1.0 - h[r]);
        }
        for (std::size_t r = 0; r < q; ++r) {
            grad[dtw.offset + r] += da[r] * dt;
            grad[emb.offset + mark * q + r] += da[r];
            grad[eb.offset + r] += da[r];
            for (std::size_t c = 0; c < q; ++c) {
                grad[rec.offset + r * q + c] += da[r] * h_prev[c];
                dh[(i - 1) * q + c] += recurrence[r * q + c] * da[r];
            }
        }
    }

    if (!std::isfinite(out.value)) {
        throw NonFiniteError("non-finite log-likelihood for sequence '" + seq.user_id + "'");
    }
    for (std::size_t i = 0; i < out.gradient.size(); ++i) {
        if (!std::isfinite(out.gradient[i])) {
            throw NonFiniteError("non-finite gradient for parameter " + model.param_name(i) +
                                 " in sequence '" + seq.user_id + "'");
        }
    }
    return out;
}

LikelihoodGradient grad_log_likelihood(const NeuralModel& model, const EventSequence& seq,
                                       const HistoryTrajectory& traj,
                                       std::span<const double> weights) {
    return grad_log_likelihood(model, seq, traj, weights, model.integral_mode());
}

// ---------------------------------------------------------------------------

NeuralIntensity::NeuralIntensity(std::shared_ptr<const NeuralModel> model)
    : model_(std::move(model)) {
    if (!model_) {
        throw std::invalid_argument("NeuralIntensity needs a model");
    }
}

double NeuralIntensity::intensity(double t, std::span<const Event> history) const {
    const auto enc = encode_history(*model_, history);
    return total_intensity(*model_, t - enc.last_time, enc.h).rate;
}

double NeuralIntensity::compensator(double t0, double t1, std::span<const Event> history) const {
    const auto enc = encode_history(*model_, history);
    return time_compensator(*model_, t0, t1, enc.last_time, enc.h);
}

double NeuralIntensity::upper_bound(double t0, double t1, std::span<const Event> history) const {
    const auto enc = encode_history(*model_, history);
    const TimeHead head(*model_, enc.h);
    const double at_start = head.rate(t0 - enc.last_time).rate;
    const double at_end =
        std::isfinite(t1) ? head.rate(t1 - enc.last_time).rate : head.limit_rate();
    return std::max(at_start, at_end);
}

double NeuralIntensity::bound_window(double, std::span<const Event> history) const {
    if (model_->decoder() == DecoderKind::exponential) {
        const double w = model_->block(Block::dec_w)[0];
        return w > 0.0 ? 1.0 / w : kInf;
    }
    (void)history;
    return kInf;
}

double NeuralIntensity::log_likelihood(const EventSequence& seq) const {
    const auto traj = encode_sequence(*model_, seq.events);
    return sequence_log_likelihood(*model_, seq, traj);
}

// ---------------------------------------------------------------------------

std::string checkpoint_to_json(const NeuralModel& model) {
    nlohmann::ordered_json j;
    j["format"] = "cfpp-checkpoint";
    j["version"] = kCheckpointVersion;
    j["q"] = model.q();
    j["mark_count"] = model.mark_count();
    j["decoder"] = to_string(model.decoder());
    const auto& mode = model.integral_mode();
    j["integral_mode"] = {
        {"kind", mode.kind == IntegralMode::Kind::closed ? "closed" : "grid"},
        {"sections", mode.sections},
        {"average_over_marks", mode.average_over_marks},
    };
    auto blocks = nlohmann::ordered_json::array();
    for (const auto& b : model.layout()) {
        const auto values = model.block(b.id);
        nlohmann::ordered_json jb;
        jb["name"] = b.name;
        jb["rows"] = b.rows;
        jb["cols"] = b.cols;
        jb["data"] = std::vector<double>(values.begin(), values.end());
        blocks.push_back(std::move(jb));
    }
    j["params"] = std::move(blocks);
    return j.dump(1) + "\n";
}

NeuralModel checkpoint_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("checkpoint: ") + e.what());
    }
    if (j.value("format", "") != "cfpp-checkpoint") {
        throw std::runtime_error("checkpoint: not a cfpp checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version");
    }
    ModelShape shape{j.at("q").get<int>(), j.at("mark_count").get<int>(),
                     parse_decoder(j.at("decoder").get<std::string>())};
    const auto& jm = j.at("integral_mode");
    IntegralMode mode;
    mode.kind = jm.at("kind").get<std::string>() == "grid" ? IntegralMode::Kind::grid
                                                           : IntegralMode::Kind::closed;
    mode.sections = jm.at("sections").get<int>();
    mode.average_over_marks = jm.at("average_over_marks").get<bool>();
    NeuralModel model(shape, mode);
    for (const auto& b : model.layout()) {
        const auto it = std::find_if(j.at("params").begin(), j.at("params").end(),
                                     [&](const auto& jb) { return jb.at("name") == b.name; });
        if (it == j.at("params").end()) {
            throw std::runtime_error("checkpoint: missing parameter block " + b.name);
        }
        const auto data = it->at("data").get<std::vector<double>>();
        if (it->at("rows").get<std::size_t>() != b.rows || it->at("cols").get<std::size_t>() != b.cols ||
            data.size() != b.size()) {
            throw std::runtime_error("checkpoint: shape mismatch in block " + b.name);
        }
        std::copy(data.begin(), data.end(), model.block(b.id).begin());
    }
    return model;
}

void save_checkpoint(const NeuralModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, checkpoint_to_json(model));
}

NeuralModel load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_mark_count) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    auto model = checkpoint_from_json(ss.str());
    if (expected_mark_count && *expected_mark_count != model.mark_count()) {
        throw std::runtime_error("checkpoint mark_count " + std::to_string(model.mark_count()) +
                                 " does not match dataset mark_count " +
                                 std::to_string(*expected_mark_count));
    }
    return model;
}

}  // namespace cfpp::neural
