#include "cfpp/trainer.hpp"

#include "cfpp/parallel.hpp"
#include "cfpp/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfpp {

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_count < 1) throw std::invalid_argument("batch_count must be >= 1");
    if (eta && *eta < 1) throw std::invalid_argument("eta must be >= 1 (or inf)");
    if (bins_per_axis < 1) throw std::invalid_argument("bins must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be > 0");
    if (!(cap >= 1.0)) throw std::invalid_argument("cap must be >= 1");
    if (steps_per_batch < 1) throw std::invalid_argument("steps_per_batch must be >= 1");
    if (integral_mode.kind == neural::IntegralMode::Kind::grid && integral_mode.sections < 1) {
        throw std::invalid_argument("grid sections must be >= 1");
    }
}

namespace {

std::span<const double> weights_of(std::span<const std::vector<double>> weights, std::size_t k) {
    return weights.empty() ? std::span<const double>{} : std::span<const double>(weights[k]);
}

void check_weights(std::span<const EventSequence> batch, std::span<const std::vector<double>> weights) {
    if (!weights.empty() && weights.size() != batch.size()) {
        throw std::invalid_argument("weights must hold one list per sequence");
    }
}

}  // namespace

double weighted_objective(const neural::NeuralModel& model, std::span<const EventSequence> batch,
                          std::span<const std::vector<double>> weights, int threads) {
    check_weights(batch, weights);
    if (batch.empty()) {
        throw std::invalid_argument("empty batch");
    }
    std::vector<double> values(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t k) {
        const auto traj = neural::encode_sequence(model, batch[k].events);
        values[k] = neural::sequence_log_likelihood(model, batch[k], traj, weights_of(weights, k));
    });
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    return sum / static_cast<double>(batch.size());
}

neural::LikelihoodGradient weighted_objective_gradient(const neural::NeuralModel& model,
                                                       std::span<const EventSequence> batch,
                                                       std::span<const std::vector<double>> weights,
                                                       int threads) {
    check_weights(batch, weights);
    if (batch.empty()) {
        throw std::invalid_argument("empty batch");
    }
    std::vector<neural::LikelihoodGradient> parts(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t k) {
        const auto traj = neural::encode_sequence(model, batch[k].events);
        parts[k] = neural::grad_log_likelihood(model, batch[k], traj, weights_of(weights, k));
    });
    neural::LikelihoodGradient out;
    out.gradient.assign(model.param_count(), 0.0);
    for (const auto& p : parts) {
        out.value += p.value;
        for (std::size_t i = 0; i < p.gradient.size(); ++i) {
            out.gradient[i] += p.gradient[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.value *= inv;
    for (double& g : out.gradient) {
        g *= inv;
    }
    return out;
}

WeightRefresh refresh_weights(const neural::NeuralModel& model, const Dataset& data,
                              const TrainConfig& config) {
    std::vector<neural::HistoryTrajectory> trajs(data.sequences.size());
    std::vector<int> categories(data.sequences.size());
    parallel_for(data.sequences.size(), config.threads, [&](std::size_t k) {
        trajs[k] = neural::encode_sequence(model, data.sequences[k].events);
    });
    int category_count = std::max(data.category_count, 1);
    for (std::size_t k = 0; k < data.sequences.size(); ++k) {
        const auto& c = data.sequences[k].category;
        if (!c) {
            throw std::invalid_argument("training sequence '" + data.sequences[k].user_id +
                                        "' has no category");
        }
        categories[k] = *c;
        category_count = std::max(category_count, *c + 1);
    }
    const BinGrid grid{config.bins_per_axis, model.q(), category_count};
    auto table = estimate_histogram(trajs, categories, grid, config.threads);
    WeightOptions opts;
    opts.cap = config.cap;
    opts.stabilized = config.stabilized;
    auto weights = compute_weight_table(trajs, categories, table, opts, config.threads);
    return {std::move(table), std::move(weights)};
}

TrainReport train(const Dataset& data, const ModelSpec& spec, const TrainConfig& config) {
    config.validate();
    if (data.sequences.empty()) {
        throw std::invalid_argument("training dataset is empty");
    }
    if (spec.shape.mark_count != data.mark_count) {
        throw std::invalid_argument("model mark_count does not match the dataset");
    }
    const bool refreshes = config.eta && *config.eta <= config.epochs;
    if (refreshes) {
        for (const auto& s : data.sequences) {
            if (!s.category) {
                throw std::invalid_argument("training sequence '" + s.user_id + "' has no category");
            }
        }
    }

    double base_rate = 1.0;
    if (spec.base_rate) {
        base_rate = *spec.base_rate;
    } else {
        double span = 0.0;
        for (const auto& s : data.sequences) {
            span += s.horizon;
        }
        base_rate = std::max(1e-3, static_cast<double>(data.event_count()) / span);
    }
    TrainReport report{
        {},
        neural::NeuralModel::initialize(spec.shape, config.integral_mode, mix64(config.seed ^ 0x1417),
                                        base_rate, spec.init_scale),
        unit_weights(data.sequences, config.cap),
        std::nullopt,
        0,
    };
    auto& model = report.model;
    const std::span<const EventSequence> all(data.sequences);
    const std::size_t n = data.sequences.size();
    const auto batches = static_cast<std::size_t>(std::min<std::size_t>(config.batch_count, n));

    std::vector<std::size_t> order(n);
    std::vector<EventSequence> batch;
    std::vector<std::vector<double>> batch_weights;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = stream_rng(config.seed, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t begin = b * n / batches;
            const std::size_t end = (b + 1) * n / batches;
            batch.clear();
            batch_weights.clear();
            for (std::size_t i = begin; i < end; ++i) {
                batch.push_back(data.sequences[order[i]]);
                batch_weights.push_back(report.weights.weights[order[i]]);
            }
            for (int step = 0; step < config.steps_per_batch; ++step) {
                neural::LikelihoodGradient g;
                try {
                    g = weighted_objective_gradient(model, batch, batch_weights, config.threads);
                } catch (const neural::NonFiniteError& e) {
                    throw TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(b) + ": " + e.what());
                }
                double norm = 0.0;
                for (double v : g.gradient) {
                    norm += v * v;
                }
                norm = std::sqrt(norm);
                const double scale =
                    config.learning_rate * (norm > config.grad_clip ? config.grad_clip / norm : 1.0);
                auto params = model.params();
                for (std::size_t i = 0; i < params.size(); ++i) {
                    params[i] += scale * g.gradient[i];
                }
            }
        }
        double objective = 0.0;
        try {
            objective = weighted_objective(model, all, report.weights.weights, config.threads);
        } catch (const neural::NonFiniteError& e) {
            throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(objective)) {
            throw TrainingError("epoch " + std::to_string(epoch) + ": non-finite objective");
        }
        report.trace.push_back(objective);
        if (config.eta && (epoch + 1) % *config.eta == 0) {
            auto refreshed = refresh_weights(model, data, config);
            report.table = std::move(refreshed.table);
            report.weights = std::move(refreshed.weights);
            ++report.refresh_count;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json mode_json(const neural::IntegralMode& m) {
    return {{"kind", m.kind == neural::IntegralMode::Kind::closed ? "closed" : "grid"},
            {"sections", m.sections},
            {"average_over_marks", m.average_over_marks}};
}

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["epochs"] = c.epochs;
    j["batch_count"] = c.batch_count;
    if (c.eta) {
        j["eta"] = *c.eta;
    } else {
        j["eta"] = "inf";
    }
    j["bins_per_axis"] = c.bins_per_axis;
    j["learning_rate"] = c.learning_rate;
    j["grad_clip"] = c.grad_clip;
    j["cap"] = c.cap;
    j["stabilized"] = c.stabilized;
    j["steps_per_batch"] = c.steps_per_batch;
    j["seed"] = c.seed;
    j["integral_mode"] = mode_json(c.integral_mode);
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig c) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    if (!j.is_object()) {
        throw std::invalid_argument("train config must be a JSON object");
    }
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "batch_count") c.batch_count = value.get<int>();
            else if (key == "eta") {
                if (value.is_string()) {
                    if (value.get<std::string>() != "inf") {
                        throw std::invalid_argument("eta must be an integer or \"inf\"");
                    }
                    c.eta.reset();
                } else if (value.is_null()) {
                    c.eta.reset();
                } else {
                    c.eta = value.get<int>();
                }
            }
            else if (key == "bins_per_axis" || key == "bins") c.bins_per_axis = value.get<int>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "grad_clip") c.grad_clip = value.get<double>();
            else if (key == "cap") c.cap = value.get<double>();
            else if (key == "stabilized") c.stabilized = value.get<bool>();
            else if (key == "steps_per_batch") c.steps_per_batch = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "threads") c.threads = value.get<int>();
            else if (key == "integral_mode") {
                if (value.contains("kind")) {
                    const auto kind = value.at("kind").get<std::string>();
                    if (kind != "closed" && kind != "grid") {
                        throw std::invalid_argument("integral_mode.kind must be closed or grid");
                    }
                    c.integral_mode.kind = kind == "grid" ? neural::IntegralMode::Kind::grid
                                                          : neural::IntegralMode::Kind::closed;
                }
                if (value.contains("sections")) c.integral_mode.sections = value.at("sections").get<int>();
                if (value.contains("average_over_marks")) {
                    c.integral_mode.average_over_marks = value.at("average_over_marks").get<bool>();
                }
            } else {
                throw std::invalid_argument("train config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string train_report_to_json(const TrainReport& r, const TrainConfig& config) {
    nlohmann::ordered_json j;
    j["config"] = nlohmann::ordered_json::parse(train_config_to_json(config));
    j["trace"] = r.trace;
    j["refresh_count"] = r.refresh_count;
    j["weights"] = {
        {"count", r.weights.weight_count()},
        {"max", r.weights.max_weight()},
        {"truncation_count", r.weights.truncation_count},
        {"fallback_count", r.weights.fallback_count},
        {"cap", r.weights.cap},
        {"stabilized", r.weights.stabilized},
    };
    j["param_count"] = r.model.param_count();
    return j.dump(2) + "\n";
}

}  // namespace cfpp
