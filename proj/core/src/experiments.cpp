#include "cfpp/experiments.hpp"

#include "cfpp/dataset_io.hpp"
#include "cfpp/parallel.hpp"
#include "cfpp/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace cfpp {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::c_rmtpp: return "C-RMTPP";
        case Method::rmtpp: return "RMTPP";
        case Method::r_rmtpp: return "R-RMTPP";
        case Method::c_nh: return "C-NH";
        case Method::nh: return "NH";
        case Method::r_nh: return "R-NH";
        case Method::exp_hawkes: return "exp-hawkes";
        case Method::self_correcting: return "self-correcting";
    }
    return "?";
}

Method parse_method(const std::string& raw) {
    const auto s = lower(raw);
    if (s == "c-rmtpp" || s == "counterfactual") return Method::c_rmtpp;
    if (s == "rmtpp" || s == "unweighted") return Method::rmtpp;
    if (s == "r-rmtpp" || s == "random-category") return Method::r_rmtpp;
    if (s == "c-nh") return Method::c_nh;
    if (s == "nh") return Method::nh;
    if (s == "r-nh") return Method::r_nh;
    if (s == "exp-hawkes" || s == "hawkes") return Method::exp_hawkes;
    if (s == "self-correcting" || s == "self-corr") return Method::self_correcting;
    throw std::invalid_argument("unknown method '" + raw +
                                "' (expected C-RMTPP, RMTPP, R-RMTPP, C-NH, NH, R-NH, exp-hawkes, "
                                "self-correcting, counterfactual, unweighted or random-category)");
}

std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        item = first == std::string::npos ? "" : item.substr(first, item.find_last_not_of(" \t") - first + 1);
        if (!item.empty()) {
            const auto m = parse_method(item);
            if (std::find(out.begin(), out.end(), m) == out.end()) {
                out.push_back(m);
            }
        }
    }
    if (out.empty()) {
        throw std::invalid_argument("empty method list");
    }
    return out;
}

bool is_classical(Method m) { return m == Method::exp_hawkes || m == Method::self_correcting; }

namespace {

bool is_nh(Method m) { return m == Method::c_nh || m == Method::nh || m == Method::r_nh; }
bool is_counterfactual(Method m) { return m == Method::c_rmtpp || m == Method::c_nh; }
bool is_random_category(Method m) { return m == Method::r_rmtpp || m == Method::r_nh; }

Method unweighted_counterpart(Method m) {
    return is_nh(m) ? Method::nh : Method::rmtpp;
}

}  // namespace

void ExperimentSpec::validate() const {
    if (generators.empty()) throw std::invalid_argument("experiment needs at least one generator");
    if (train_counts.size() != generators.size() || test_counts.size() != generators.size()) {
        throw std::invalid_argument("train/test counts must list one value per generator");
    }
    for (int n : train_counts) {
        if (n < 1) throw std::invalid_argument("train counts must be >= 1");
    }
    for (int n : test_counts) {
        if (n < 1) throw std::invalid_argument("test counts must be >= 1");
    }
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
    if (q < 1) throw std::invalid_argument("q must be >= 1");
    if (methods.empty()) throw std::invalid_argument("experiment needs at least one method");
    if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
    if (mae_grid < 1) throw std::invalid_argument("mae_grid must be >= 1");
    if (prediction_sections < 2) throw std::invalid_argument("prediction_sections must be >= 2");
    if (nh_sections < 1) throw std::invalid_argument("nh_sections must be >= 1");
    for (const auto& g : generators) {
        if (g.kind == GeneratorConfig::Kind::exp_hawkes) {
            g.hawkes.validate();
            if (g.beta_range && !(g.beta_range->first > 0.0 && g.beta_range->first <= g.beta_range->second)) {
                throw std::invalid_argument("beta range must satisfy 0 < low <= high");
            }
        } else if (marked) {
            throw std::invalid_argument("marked experiments support Hawkes generators only");
        }
    }
    train.validate();
}

ExperimentSpec experiment_spec(int exp_id, Scale scale, bool published_params) {
    if (exp_id < 1 || exp_id > 6) {
        throw std::invalid_argument("experiment id must be in 1..6");
    }
    const int unit = scale == Scale::full ? 10 : 1;
    ExperimentSpec spec;
    spec.id = "exp" + std::to_string(exp_id);
    const double alpha = published_params ? 1.0 : 0.5;
    const std::vector<double> betas =
        published_params ? std::vector<double>{0.5, 1.0, 1.5} : std::vector<double>{0.625, 1.0, 1.5};
    for (double beta : betas) {
        GeneratorConfig g;
        g.hawkes = {0.1, alpha, beta};
        spec.generators.push_back(g);
    }
    spec.train_counts = {40 * unit, 40 * unit, 40 * unit};
    spec.test_counts = {10 * unit, 10 * unit, 10 * unit};
    spec.methods = {Method::r_nh,  Method::nh,      Method::c_nh,       Method::r_rmtpp,
                    Method::rmtpp, Method::c_rmtpp, Method::exp_hawkes, Method::self_correcting};
    spec.train.epochs = 300;
    spec.train.batch_count = 4;
    spec.train.eta = 5;
    spec.train.bins_per_axis = 25;

    switch (exp_id) {
        case 2: spec.train_counts = {20 * unit, 40 * unit, 60 * unit}; break;
        case 3: spec.train_counts = {60 * unit, 40 * unit, 20 * unit}; break;
        case 4: {
            const std::vector<std::pair<double, double>> ranges =
                published_params ? std::vector<std::pair<double, double>>{{0.4, 0.6}, {0.9, 1.1}, {1.4, 1.6}}
                             : std::vector<std::pair<double, double>>{{0.525, 0.725}, {0.9, 1.1}, {1.4, 1.6}};
            for (std::size_t c = 0; c < 3; ++c) {
                spec.generators[c].beta_range = ranges[c];
            }
            break;
        }
        case 5: {
            spec.generators.pop_back();
            GeneratorConfig g;
            g.kind = GeneratorConfig::Kind::neural_decay_cell;
            spec.generators.push_back(g);
            spec.q = 3;
            spec.train.bins_per_axis = 5;
            break;
        }
        case 6:
            spec.marked = true;
            spec.q = 3;
            spec.train.bins_per_axis = 5;
            break;
        default: break;
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Spec JSON
// ---------------------------------------------------------------------------

namespace {

ordered_json generator_json(const GeneratorConfig& g) {
    ordered_json j;
    if (g.kind == GeneratorConfig::Kind::exp_hawkes) {
        j["family"] = "exp-hawkes";
        j["mu"] = g.hawkes.mu;
        j["alpha"] = g.hawkes.alpha;
        j["beta"] = g.hawkes.beta;
        if (g.beta_range) {
            j["beta_range"] = {g.beta_range->first, g.beta_range->second};
        }
    } else {
        j["family"] = "neural-decay-cell";
        j["q"] = g.neural_q;
        j["seed"] = g.neural_seed;
        j["base_rate"] = g.neural_base_rate;
        j["scale"] = g.neural_scale;
    }
    return j;
}

GeneratorConfig generator_from_json(const nlohmann::json& j) {
    GeneratorConfig g;
    const auto family = j.value("family", std::string("exp-hawkes"));
    if (family == "exp-hawkes") {
        g.hawkes.mu = j.value("mu", g.hawkes.mu);
        g.hawkes.alpha = j.value("alpha", g.hawkes.alpha);
        g.hawkes.beta = j.value("beta", g.hawkes.beta);
        if (j.contains("beta_range")) {
            const auto r = j.at("beta_range").get<std::vector<double>>();
            if (r.size() != 2) throw std::invalid_argument("beta_range must have two entries");
            g.beta_range = std::make_pair(r[0], r[1]);
        }
    } else if (family == "neural-decay-cell") {
        g.kind = GeneratorConfig::Kind::neural_decay_cell;
        g.neural_q = j.value("q", g.neural_q);
        g.neural_seed = j.value("seed", g.neural_seed);
        g.neural_base_rate = j.value("base_rate", g.neural_base_rate);
        g.neural_scale = j.value("scale", g.neural_scale);
    } else {
        throw std::invalid_argument("unknown generator family '" + family + "'");
    }
    return g;
}

}  // namespace

std::string experiment_spec_to_json(const ExperimentSpec& s) {
    ordered_json j;
    j["id"] = s.id;
    auto gens = ordered_json::array();
    for (const auto& g : s.generators) gens.push_back(generator_json(g));
    j["generators"] = gens;
    j["train_counts"] = s.train_counts;
    j["test_counts"] = s.test_counts;
    j["horizon"] = s.horizon;
    j["marked"] = s.marked;
    j["q"] = s.q;
    std::vector<std::string> methods;
    for (auto m : s.methods) methods.push_back(to_string(m));
    j["methods"] = methods;
    j["seeds"] = s.seeds;
    j["train"] = ordered_json::parse(train_config_to_json(s.train));
    j["nh_sections"] = s.nh_sections;
    j["mae_grid"] = s.mae_grid;
    j["prediction_sections"] = s.prediction_sections;
    j["max_events"] = s.max_events;
    return j.dump(2);
}

ExperimentSpec experiment_spec_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("experiment spec: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("experiment spec must be a JSON object");
    try {
        const Scale scale = j.value("scale", std::string("desk")) == "full" ? Scale::full : Scale::desk;
        const bool published_params = j.value("published_params", false);
        ExperimentSpec s;
        if (j.contains("experiment")) {
            s = experiment_spec(j.at("experiment").get<int>(), scale, published_params);
        } else {
            s = experiment_spec(1, scale, published_params);
            s.id = "custom";
        }
        for (const auto& [key, v] : j.items()) {
            if (key == "experiment" || key == "scale" || key == "published_params") continue;
            if (key == "id") s.id = v.get<std::string>();
            else if (key == "generators") {
                s.generators.clear();
                for (const auto& g : v) s.generators.push_back(generator_from_json(g));
            }
            else if (key == "train_counts") s.train_counts = v.get<std::vector<int>>();
            else if (key == "test_counts") s.test_counts = v.get<std::vector<int>>();
            else if (key == "horizon") s.horizon = v.get<double>();
            else if (key == "marked") s.marked = v.get<bool>();
            else if (key == "q") s.q = v.get<int>();
            else if (key == "methods") {
                s.methods.clear();
                for (const auto& m : v) {
                    const auto parsed = parse_method(m.get<std::string>());
                    if (std::find(s.methods.begin(), s.methods.end(), parsed) == s.methods.end()) {
                        s.methods.push_back(parsed);
                    }
                }
            }
            else if (key == "seeds") s.seeds = v.get<std::vector<std::uint64_t>>();
            else if (key == "train") s.train = train_config_from_json(v.dump(), s.train);
            else if (key == "nh_sections") s.nh_sections = v.get<int>();
            else if (key == "mae_grid") s.mae_grid = v.get<int>();
            else if (key == "prediction_sections") s.prediction_sections = v.get<int>();
            else if (key == "max_events") s.max_events = v.get<std::size_t>();
            else throw std::invalid_argument("experiment spec: unknown key '" + key + "'");
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("experiment spec: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

SyntheticData generate_synthetic(const ExperimentSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int categories = spec.category_count();
    const int marks = spec.marked ? 3 : 1;
    std::optional<MarkPmf> pmf;
    if (spec.marked) {
        pmf = MarkPmf::time_phased_three_marks(spec.horizon);
    }
    ThinningOptions opts;
    opts.max_events = spec.max_events;

    std::vector<std::shared_ptr<const IntensityModel>> fixed(static_cast<std::size_t>(categories));
    for (int c = 0; c < categories; ++c) {
        const auto& g = spec.generators[static_cast<std::size_t>(c)];
        if (g.kind == GeneratorConfig::Kind::neural_decay_cell) {
            auto model = std::make_shared<neural::NeuralModel>(neural::NeuralModel::initialize(
                {g.neural_q, 1, neural::DecoderKind::decay_cell}, neural::IntegralMode::grid(100),
                g.neural_seed, g.neural_base_rate, g.neural_scale));
            fixed[static_cast<std::size_t>(c)] = std::make_shared<neural::NeuralIntensity>(model);
        } else if (!g.beta_range) {
            fixed[static_cast<std::size_t>(c)] = std::make_shared<ExpHawkesModel>(g.hawkes);
        }
    }

    struct Job {
        int category;
        bool test;
        int index;
    };
    std::vector<Job> jobs;
    for (int split = 0; split < 2; ++split) {
        for (int c = 0; c < categories; ++c) {
            const int n = (split == 0 ? spec.train_counts : spec.test_counts)[static_cast<std::size_t>(c)];
            for (int i = 0; i < n; ++i) {
                jobs.push_back({c, split == 1, i});
            }
        }
    }
    std::vector<EventSequence> seqs(jobs.size());
    std::vector<std::shared_ptr<const IntensityModel>> truths(jobs.size());
    parallel_for(jobs.size(), spec.threads, [&](std::size_t k) {
        const auto& job = jobs[k];
        const std::uint64_t stream = (static_cast<std::uint64_t>(job.category) << 33) |
                                     (static_cast<std::uint64_t>(job.test) << 32) |
                                     static_cast<std::uint64_t>(job.index);
        Rng rng = stream_rng(seed, stream);
        auto model = fixed[static_cast<std::size_t>(job.category)];
        if (!model) {
            const auto& g = spec.generators[static_cast<std::size_t>(job.category)];
            ExpHawkesParams p = g.hawkes;
            p.beta = std::uniform_real_distribution<double>(g.beta_range->first, g.beta_range->second)(rng);
            model = std::make_shared<ExpHawkesModel>(p);
        }
        seqs[k] = thinning_simulate(*model, spec.horizon, pmf ? &*pmf : nullptr, rng, opts);
        seqs[k].user_id = (job.test ? "test-c" : "train-c") + std::to_string(job.category) + "-" +
                          std::to_string(job.index);
        seqs[k].category = job.category;
        truths[k] = std::move(model);
    });

    SyntheticData out;
    out.train.mark_count = out.test.mark_count = marks;
    out.train.category_count = out.test.category_count = categories;
    out.train.default_horizon = out.test.default_horizon = spec.horizon;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        if (jobs[k].test) {
            out.test_categories.push_back(jobs[k].category);
            out.test_truth.push_back(truths[k]);
            seqs[k].category.reset();
            seqs[k].user_id = "test-" + std::to_string(out.test.sequences.size());
            out.test.sequences.push_back(std::move(seqs[k]));
        } else {
            out.train.sequences.push_back(std::move(seqs[k]));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double sequence_intensity_error(const IntensityModel& fitted, const IntensityModel& truth,
                                const EventSequence& seq, int grid_points) {
    if (grid_points < 1) {
        throw std::invalid_argument("intensity error grid is empty");
    }
    double sum = 0.0;
    std::size_t seen = 0;
    for (int j = 0; j < grid_points; ++j) {
        const double t = j * seq.horizon / grid_points;
        while (seen < seq.events.size() && seq.events[seen].t < t) {
            ++seen;
        }
        const std::span<const Event> history(seq.events.data(), seen);
        sum += std::abs(fitted.intensity(t, history) - truth.intensity(t, history));
    }
    return sum;
}

double intensity_mae(const IntensityModel& fitted,
                     std::span<const std::shared_ptr<const IntensityModel>> truth,
                     std::span<const EventSequence> test, int grid_points) {
    if (truth.size() != test.size()) {
        throw std::invalid_argument("one true model per test sequence required");
    }
    if (test.empty()) {
        throw std::invalid_argument("no test sequences");
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < test.size(); ++k) {
        sum += sequence_intensity_error(fitted, *truth[k], test[k], grid_points);
    }
    return sum / static_cast<double>(test.size());
}

double time_mae(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size()) {
        throw std::invalid_argument("time_mae: length mismatch");
    }
    if (predicted.empty()) {
        throw std::invalid_argument("time_mae: no cases");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        sum += std::abs(predicted[i] - actual[i]);
    }
    return sum / static_cast<double>(predicted.size());
}

double topk_accuracy(std::span<const std::vector<double>> scores, std::span<const int> actual, int k) {
    if (scores.size() != actual.size()) {
        throw std::invalid_argument("topk_accuracy: length mismatch");
    }
    if (scores.empty()) {
        throw std::invalid_argument("topk_accuracy: no cases");
    }
    if (k < 1) {
        throw std::invalid_argument("topk_accuracy: k must be >= 1");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& s = scores[i];
        const int m = actual[i];
        if (m < 0 || m >= static_cast<int>(s.size())) {
            throw std::invalid_argument("topk_accuracy: mark outside the score vector");
        }
        // Rank = number of marks scoring strictly higher; ties resolve in favour of the true mark.
        const auto higher = std::count_if(s.begin(), s.end(), [&](double v) { return v > s[static_cast<std::size_t>(m)]; });
        hits += higher < k ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

namespace {

/// What a trained method exposes at test time, per test user.
struct Fitted {
    std::vector<std::shared_ptr<const neural::NeuralModel>> neural;  // per distinct model
    std::vector<std::shared_ptr<const IntensityModel>> intensity;    // per distinct model
    std::vector<std::size_t> assignment;                              // test user -> model
    std::vector<double> trace;
};

TrainConfig method_config(const ExperimentSpec& spec, Method m, std::uint64_t seed) {
    TrainConfig c = spec.train;
    c.seed = mix64(seed ^ 0x7a11ULL);
    c.threads = spec.threads;
    if (is_nh(m)) {
        c.integral_mode = neural::IntegralMode::grid(spec.nh_sections, spec.train.integral_mode.average_over_marks);
    } else {
        c.integral_mode = neural::IntegralMode::closed_form();
    }
    if (!is_counterfactual(m)) {
        c.eta.reset();
    }
    return c;
}

Fitted fit_method(const ExperimentSpec& spec, const SyntheticData& data, Method m, std::uint64_t seed) {
    Fitted f;
    const std::size_t n_test = data.test.sequences.size();
    if (is_classical(m)) {
        MleOptions opts;
        opts.seed = mix64(seed ^ 0xc1a55ULL);
        const auto family = m == Method::exp_hawkes ? ModelFamily::exp_hawkes : ModelFamily::self_correcting;
        f.intensity.push_back(make_model(classical_mle(data.train, family, opts).params));
        f.assignment.assign(n_test, 0);
        return f;
    }
    ModelSpec ms;
    ms.shape = {spec.q, data.train.mark_count,
                is_nh(m) ? neural::DecoderKind::decay_cell : neural::DecoderKind::exponential};
    const TrainConfig cfg = method_config(spec, m, seed);
    auto add_model = [&](const Dataset& d) {
        auto report = train(d, ms, cfg);
        auto model = std::make_shared<const neural::NeuralModel>(std::move(report.model));
        f.neural.push_back(model);
        f.intensity.push_back(std::make_shared<neural::NeuralIntensity>(model));
        if (f.trace.empty()) {
            f.trace = std::move(report.trace);
        }
    };
    if (is_random_category(m)) {
        for (int c = 0; c < spec.category_count(); ++c) {
            add_model(filter_category(data.train, c));
        }
        Rng rng = stream_rng(seed, 0x5a3d0c47ULL);
        std::uniform_int_distribution<std::size_t> pick(0, f.neural.size() - 1);
        for (std::size_t k = 0; k < n_test; ++k) {
            f.assignment.push_back(pick(rng));
        }
    } else {
        add_model(data.train);
        f.assignment.assign(n_test, 0);
    }
    return f;
}

MethodResult evaluate_method(const ExperimentSpec& spec, const SyntheticData& data, Method m,
                             std::uint64_t seed, const Fitted& f) {
    MethodResult r;
    r.method = m;
    r.seed = seed;
    r.trace = f.trace;
    const auto& test = data.test.sequences;
    const std::size_t n = test.size();
    const int categories = spec.category_count();

    std::vector<double> errors(n);
    parallel_for(n, spec.threads, [&](std::size_t k) {
        errors[k] = sequence_intensity_error(*f.intensity[f.assignment[k]], *data.test_truth[k], test[k],
                                             spec.mae_grid);
    });
    r.intensity_mae = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(n);
    r.category_mae.assign(static_cast<std::size_t>(categories), 0.0);
    r.category_counts.assign(static_cast<std::size_t>(categories), 0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto c = static_cast<std::size_t>(data.test_categories[k]);
        r.category_mae[c] += errors[k];
        ++r.category_counts[c];
    }
    for (std::size_t c = 0; c < r.category_mae.size(); ++c) {
        if (r.category_counts[c] > 0) {
            r.category_mae[c] /= r.category_counts[c];
        }
    }

    // Next-event prediction of each test sequence's last event from its prefix.
    GridQuadrature grid;
    grid.sections = spec.prediction_sections;
    grid.span = 20.0 * mean_interevent_time(data.train);
    std::vector<double> predicted(n, 0.0), actual(n, 0.0);
    std::vector<std::vector<double>> scores(n);
    std::vector<int> marks(n, 0);
    std::vector<char> usable(n, 0);
    parallel_for(n, spec.threads, [&](std::size_t k) {
        const auto& ev = test[k].events;
        if (ev.empty()) {
            return;
        }
        const std::span<const Event> prefix(ev.data(), ev.size() - 1);
        actual[k] = ev.back().t;
        marks[k] = ev.back().m;
        usable[k] = 1;
        if (is_classical(m)) {
            predicted[k] = expected_next_time(*f.intensity[f.assignment[k]], prefix, grid);
            scores[k].assign(static_cast<std::size_t>(data.test.mark_count), 1.0 / data.test.mark_count);
        } else {
            const auto& model = *f.neural[f.assignment[k]];
            const auto enc = neural::encode_history(model, prefix);
            auto p = predict_next(model, enc.h, enc.last_time, grid);
            predicted[k] = p.t_hat;
            scores[k] = std::move(p.mark_scores);
        }
    });
    std::vector<double> pred_used, actual_used;
    std::vector<std::vector<double>> scores_used;
    std::vector<int> marks_used;
    for (std::size_t k = 0; k < n; ++k) {
        if (usable[k]) {
            pred_used.push_back(predicted[k]);
            actual_used.push_back(actual[k]);
            scores_used.push_back(std::move(scores[k]));
            marks_used.push_back(marks[k]);
        }
    }
    if (!pred_used.empty()) {
        r.time_mae = time_mae(pred_used, actual_used);
        r.topk_accuracy = topk_accuracy(scores_used, marks_used, 5);
    }
    return r;
}

}  // namespace

std::vector<MethodResult> run_methods(const ExperimentSpec& spec, const SyntheticData& data,
                                      std::uint64_t seed) {
    std::vector<MethodResult> out;
    auto methods = spec.methods;
    std::sort(methods.begin(), methods.end());
    for (auto m : methods) {
        if (is_classical(m) && spec.marked) {
            MethodResult r;
            r.method = m;
            r.seed = seed;
            r.applicable = false;
            out.push_back(std::move(r));
            continue;
        }
        try {
            const auto fitted = fit_method(spec, data, m, seed);
            out.push_back(evaluate_method(spec, data, m, seed, fitted));
        } catch (const std::exception& e) {
            throw std::runtime_error(spec.id + ", method " + to_string(m) + ", seed " +
                                     std::to_string(seed) + ": " + e.what());
        }
    }
    return out;
}

MetricReport run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const auto start = std::chrono::steady_clock::now();
    MetricReport report;
    report.experiment = spec.id;
    report.mae_grid = spec.mae_grid;
    for (auto seed : spec.seeds) {
        const auto data = generate_synthetic(spec, seed);
        auto results = run_methods(spec, data, seed);
        for (auto& r : results) {
            report.results.push_back(std::move(r));
        }
    }
    std::stable_sort(report.results.begin(), report.results.end(), [](const auto& a, const auto& b) {
        return a.method != b.method ? a.method < b.method : a.seed < b.seed;
    });
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

void write_report_csv(std::ostream& out, const MetricReport& report) {
    out << "method,category,metric,value,seed\n";
    const std::string topk = "top" + std::to_string(report.topk) + "_accuracy";
    for (const auto& r : report.results) {
        const auto name = to_string(r.method);
        const auto seed = std::to_string(r.seed);
        if (!r.applicable) {
            for (const char* metric : {"intensity_mae", "time_mae"}) {
                out << name << ",all," << metric << ",n/a," << seed << '\n';
            }
            out << name << ",all," << topk << ",n/a," << seed << '\n';
            continue;
        }
        out << name << ",all,intensity_mae," << format_double(r.intensity_mae) << ',' << seed << '\n';
        for (std::size_t c = 0; c < r.category_mae.size(); ++c) {
            out << name << ',' << c << ",intensity_mae," << format_double(r.category_mae[c]) << ','
                << seed << '\n';
        }
        out << name << ",all,time_mae," << format_double(r.time_mae) << ',' << seed << '\n';
        out << name << ",all," << topk << ',' << format_double(r.topk_accuracy) << ',' << seed << '\n';
    }
}

std::string report_to_json(const MetricReport& report) {
    ordered_json j;
    j["experiment"] = report.experiment;
    auto results = ordered_json::array();
    for (const auto& r : report.results) {
        ordered_json jr;
        jr["method"] = to_string(r.method);
        jr["seed"] = r.seed;
        jr["applicable"] = r.applicable;
        if (r.applicable) {
            jr["intensity_mae"] = r.intensity_mae;
            jr["category_mae"] = r.category_mae;
            jr["category_counts"] = r.category_counts;
            jr["time_mae"] = r.time_mae;
            jr["top" + std::to_string(report.topk) + "_accuracy"] = r.topk_accuracy;
            jr["trace"] = r.trace;
        }
        results.push_back(std::move(jr));
    }
    j["results"] = std::move(results);
    j["metadata"] = {
        {"runtime_seconds", report.runtime_seconds},
        {"mae_grid", report.mae_grid},
        {"mae_compares", "total intensity summed over marks"},
        {"topk", report.topk},
    };
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

SweepResult sweep(const ExperimentSpec& spec, SweepAxis axis, std::span<const int> values) {
    spec.validate();
    if (values.empty()) {
        throw std::invalid_argument("sweep needs at least one value");
    }
    std::vector<Method> counterfactual;
    for (auto m : spec.methods) {
        if (is_counterfactual(m)) counterfactual.push_back(m);
    }
    if (counterfactual.empty()) {
        counterfactual.push_back(Method::c_rmtpp);
    }
    SweepResult result;
    result.axis = axis;
    for (int v : values) {
        ExperimentSpec s = spec;
        s.methods = counterfactual;
        SweepPoint point;
        if (axis == SweepAxis::bins) {
            if (v < 1) throw std::invalid_argument("bin counts must be >= 1");
            s.train.bins_per_axis = v;
            point.value = std::to_string(v);
        } else {
            if (v < 0) throw std::invalid_argument("refresh periods must be >= 1 (0 for infinity)");
            if (v == 0) {
                s.train.eta.reset();
                point.value = "inf";
            } else {
                s.train.eta = v;
                point.value = std::to_string(v);
            }
        }
        point.report = run_experiment(s);
        result.points.push_back(std::move(point));
    }
    ExperimentSpec ref = spec;
    ref.methods.clear();
    for (auto m : counterfactual) ref.methods.push_back(unweighted_counterpart(m));
    result.reference = run_experiment(ref);
    return result;
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
    out << (result.axis == SweepAxis::bins ? "bins" : "eta")
        << ",method,seed,intensity_mae,pct_vs_unweighted\n";
    for (const auto& p : result.points) {
        for (const auto& r : p.report.results) {
            double pct = 0.0;
            for (const auto& ref : result.reference.results) {
                if (ref.method == unweighted_counterpart(r.method) && ref.seed == r.seed) {
                    pct = 100.0 * (r.intensity_mae / ref.intensity_mae - 1.0);
                }
            }
            out << p.value << ',' << to_string(r.method) << ',' << r.seed << ','
                << format_double(r.intensity_mae) << ',' << format_double(pct) << '\n';
        }
    }
}

std::vector<std::filesystem::path> export_transition_histogram(const TransitionTable& table,
                                                               const std::filesystem::path& dir,
                                                               const std::string& prefix) {
    const auto& grid = table.grid();
    const auto bins = static_cast<std::size_t>(grid.bins_per_axis);
    const auto cells = grid.cells_per_embedding();
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (int r = 0; r < grid.category_count; ++r) {
        std::ostringstream out;
        out << "kind,axis,u_prev,u,value,fallback\n";
        // Per axis, counts of (previous bin, next bin) with the other axes summed out. For q = 1
        // this is the full transition table.
        for (int axis = 0; axis < grid.q; ++axis) {
            std::vector<std::uint64_t> pair(bins * bins, 0);
            std::vector<std::uint64_t> next(bins, 0);
            for (std::size_t up = 0; up < cells; ++up) {
                const auto bp = static_cast<std::size_t>(unflatten_bin(up, grid)[static_cast<std::size_t>(axis)]);
                for (std::size_t u = 0; u < cells; ++u) {
                    const auto c = table.count(u, up, r);
                    if (c == 0) continue;
                    const auto b = static_cast<std::size_t>(unflatten_bin(u, grid)[static_cast<std::size_t>(axis)]);
                    pair[bp * bins + b] += c;
                    next[b] += c;
                }
            }
            const char* kind = grid.q == 1 ? "transition" : "transition_axis";
            for (std::size_t bp = 0; bp < bins; ++bp) {
                std::uint64_t row = 0;
                for (std::size_t b = 0; b < bins; ++b) row += pair[bp * bins + b];
                for (std::size_t b = 0; b < bins; ++b) {
                    const double f = row == 0 ? 1.0 : static_cast<double>(pair[bp * bins + b]) / row;
                    out << kind << ',' << axis << ',' << bp << ',' << b << ',' << format_double(f) << ','
                        << (row == 0 ? 1 : 0) << '\n';
                }
            }
            std::uint64_t total = 0;
            for (auto v : next) total += v;
            for (std::size_t b = 0; b < bins; ++b) {
                const double p = total == 0 ? 0.0 : static_cast<double>(next[b]) / total;
                out << "marginal," << axis << ",," << b << ',' << format_double(p) << ','
                    << (total == 0 ? 1 : 0) << '\n';
            }
        }
        const auto path = dir / (prefix + "_c" + std::to_string(r) + ".csv");
        write_file_atomic(path, out.str());
        paths.push_back(path);
    }
    return paths;
}

}  // namespace cfpp
