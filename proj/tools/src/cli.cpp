#include "cli.hpp"

#include "cfpp/classical.hpp"
#include "cfpp/dataset_io.hpp"
#include "cfpp/experiments.hpp"
#include "cfpp/inference.hpp"
#include "cfpp/neural.hpp"
#include "cfpp/parallel.hpp"
#include "cfpp/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace cfpp::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

/// Bad input detected before any work starts.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) {
        throw UsageError(std::string("missing ") + what);
    }
    if (!fs::is_regular_file(path)) {
        throw UsageError(std::string(what) + " '" + path + "' does not exist");
    }
}

void require_parent(const fs::path& path) {
    const auto parent = path.parent_path();
    if (!parent.empty() && !fs::is_directory(parent)) {
        throw UsageError("output directory '" + parent.string() + "' does not exist");
    }
}

std::vector<int> parse_int_list(const std::string& text, bool allow_inf) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        if (allow_inf && (item == "inf" || item == "infinity")) {
            out.push_back(0);
            continue;
        }
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) {
            throw UsageError("'" + item + "' is not an integer");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw UsageError("empty value list");
    }
    return out;
}

std::optional<int> parse_eta(const std::string& text) {
    if (text == "inf" || text == "infinity") {
        return std::nullopt;
    }
    const auto v = parse_int_list(text, false);
    if (v.size() != 1) throw UsageError("--eta takes one value");
    return v.front();
}

/// Run header: one line per setting with where its value came from.
class Header {
public:
    void add(const std::string& key, const std::string& value, const char* source) {
        lines_.push_back("#   " + key + " = " + value + " (" + source + ")");
    }
    void print(std::ostream& out, const std::string& command) const {
        out << "# cfpp " << command << '\n';
        for (const auto& l : lines_) out << l << '\n';
    }

private:
    std::vector<std::string> lines_;
};

const char* threads_source(const CLI::App& cmd) {
    if (cmd.count("--threads")) return "flag";
    return std::getenv("CFPP_THREADS") != nullptr ? "env" : "default";
}

neural::DecoderKind parse_decoder_flag(const std::string& s) {
    try {
        return neural::parse_decoder(s);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string model{"exp-hawkes"};
    double mu{0.1};
    double alpha{0.5};
    double beta{1.0};
    double rate{1.0};
    int n{10};
    double horizon{kDefaultHorizon};
    std::uint64_t seed{0};
    bool marks{false};
    std::size_t max_events{10000};
    std::string out;
};

int do_simulate(const SimulateArgs& a, const CLI::App& cmd, int threads, std::ostream& out) {
    if (a.out.empty()) throw UsageError("missing --out");
    require_parent(a.out);
    if (a.n < 1) throw UsageError("--n must be >= 1");
    if (!(a.horizon > 0.0)) throw UsageError("--horizon must be > 0");
    Header header;
    auto src = [&](const char* flag) { return cmd.count(flag) ? "flag" : "default"; };
    header.add("model", a.model, src("--model"));
    header.add("n", std::to_string(a.n), src("--n"));
    header.add("horizon", format_double(a.horizon), src("--horizon"));
    header.add("seed", std::to_string(a.seed), src("--seed"));
    header.add("threads", std::to_string(threads), threads_source(cmd));
    header.print(out, "simulate");
    ClassicalParams params;
    switch (parse_model_family(a.model)) {
        case ModelFamily::poisson: params = PoissonParams{a.rate}; break;
        case ModelFamily::exp_hawkes: params = ExpHawkesParams{a.mu, a.alpha, a.beta}; break;
        case ModelFamily::self_correcting: params = SelfCorrectingParams{a.mu, a.alpha}; break;
    }
    std::visit([](const auto& p) { p.validate(); }, params);
    const auto model = make_model(params);
    std::optional<MarkPmf> pmf;
    if (a.marks) pmf = MarkPmf::time_phased_three_marks(a.horizon);
    ThinningOptions opts;
    opts.max_events = a.max_events;
    Dataset data;
    data.sequences = simulate_sequences(*model, static_cast<std::size_t>(a.n), a.horizon, pmf ? &*pmf : nullptr,
                                        a.seed, 0, "u", threads, opts);
    data.mark_count = a.marks ? 3 : 1;
    data.default_horizon = a.horizon;
    save_dataset(data, a.out);
    out << "wrote " << data.size() << " sequences (" << data.event_count() << " events) to " << a.out << '\n';
    return ok;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::string report;
    std::string histogram_dir;
    int q{1};
    std::string decoder{"exponential"};
    double init_scale{0.1};
    // Flag values; only applied when given.
    int epochs{0};
    int batches{0};
    std::string eta;
    int bins{0};
    double lr{0.0};
    double clip{0.0};
    double cap{0.0};
    bool stabilized{false};
    int steps{0};
    std::uint64_t seed{0};
    std::string integral;
    int sections{0};
    bool sum_marks{false};
};

TrainConfig resolve_train_config(const TrainArgs& a, const CLI::App& cmd, int threads, Header& header) {
    TrainConfig c;
    nlohmann::json file;
    if (!a.config.empty()) {
        require_file(a.config, "config file");
        const auto text = read_text(a.config);
        c = train_config_from_json(text, c);
        file = nlohmann::json::parse(text);
    }
    auto source = [&](const char* flag, std::initializer_list<const char*> keys) -> const char* {
        if (cmd.count(flag) > 0) return "flag";
        for (const char* k : keys) {
            if (file.is_object() && file.contains(k)) return "file";
        }
        return "default";
    };
    if (cmd.count("--epochs")) c.epochs = a.epochs;
    if (cmd.count("--batches")) c.batch_count = a.batches;
    if (cmd.count("--eta")) c.eta = parse_eta(a.eta);
    if (cmd.count("--bins")) c.bins_per_axis = a.bins;
    if (cmd.count("--lr")) c.learning_rate = a.lr;
    if (cmd.count("--grad-clip")) c.grad_clip = a.clip;
    if (cmd.count("--cap")) c.cap = a.cap;
    if (cmd.count("--stabilized")) c.stabilized = a.stabilized;
    if (cmd.count("--steps-per-batch")) c.steps_per_batch = a.steps;
    if (cmd.count("--seed")) c.seed = a.seed;
    if (cmd.count("--integral")) {
        if (a.integral != "closed" && a.integral != "grid") throw UsageError("--integral must be closed or grid");
        c.integral_mode.kind = a.integral == "grid" ? neural::IntegralMode::Kind::grid : neural::IntegralMode::Kind::closed;
    }
    if (cmd.count("--sections")) c.integral_mode.sections = a.sections;
    if (cmd.count("--sum-marks")) c.integral_mode.average_over_marks = !a.sum_marks;
    c.threads = threads;
    c.validate();

    header.add("epochs", std::to_string(c.epochs), source("--epochs", {"epochs"}));
    header.add("batch_count", std::to_string(c.batch_count), source("--batches", {"batch_count"}));
    header.add("eta", c.eta ? std::to_string(*c.eta) : "inf", source("--eta", {"eta"}));
    header.add("bins_per_axis", std::to_string(c.bins_per_axis), source("--bins", {"bins_per_axis", "bins"}));
    header.add("learning_rate", format_double(c.learning_rate), source("--lr", {"learning_rate"}));
    header.add("grad_clip", format_double(c.grad_clip), source("--grad-clip", {"grad_clip"}));
    header.add("cap", format_double(c.cap), source("--cap", {"cap"}));
    header.add("stabilized", c.stabilized ? "true" : "false", source("--stabilized", {"stabilized"}));
    header.add("steps_per_batch", std::to_string(c.steps_per_batch), source("--steps-per-batch", {"steps_per_batch"}));
    header.add("seed", std::to_string(c.seed), source("--seed", {"seed"}));
    header.add("integral_mode", c.integral_mode.kind == neural::IntegralMode::Kind::grid
                                    ? "grid/" + std::to_string(c.integral_mode.sections)
                                    : std::string("closed"),
               source("--integral", {"integral_mode"}));
    header.add("threads", std::to_string(c.threads), threads_source(cmd));
    return c;
}

/// Data with no category labels at all is one population: every sequence gets category 0.
void single_category_if_unlabelled(Dataset& data, std::ostream& out) {
    const bool unlabelled = std::none_of(data.sequences.begin(), data.sequences.end(),
                                         [](const EventSequence& s) { return s.category.has_value(); });
    if (!unlabelled) return;
    for (auto& s : data.sequences) s.category = 0;
    data.category_count = 1;
    out << "# no categories in the data; treating all sequences as one category\n";
}

int do_train(const TrainArgs& a, const CLI::App& cmd, int threads, std::ostream& out) {
    require_file(a.data, "--data");
    if (a.out.empty()) throw UsageError("missing --out");
    require_parent(a.out);
    if (!a.report.empty()) require_parent(a.report);
    Header header;
    const auto config = resolve_train_config(a, cmd, threads, header);
    ModelSpec spec;
    spec.shape.q = a.q;
    spec.shape.decoder = parse_decoder_flag(a.decoder);
    spec.init_scale = a.init_scale;
    header.add("q", std::to_string(a.q), cmd.count("--q") ? "flag" : "default");
    header.add("decoder", neural::to_string(spec.shape.decoder), cmd.count("--decoder") ? "flag" : "default");
    header.print(out, "train");

    auto data = load_dataset(a.data);
    if (config.eta) single_category_if_unlabelled(data, out);
    spec.shape.mark_count = data.mark_count;
    const auto report = train(data, spec, config);
    neural::save_checkpoint(report.model, a.out);
    if (!a.report.empty()) {
        write_file_atomic(a.report, train_report_to_json(report, config));
    }
    if (!a.histogram_dir.empty() && report.table) {
        for (const auto& p : export_transition_histogram(*report.table, a.histogram_dir)) {
            out << "wrote " << p.string() << '\n';
        }
    }
    out << "epochs " << report.trace.size() << ", final objective " << format_double(report.trace.back())
        << ", refreshes " << report.refresh_count << ", truncated weights " << report.weights.truncation_count
        << '\n';
    return ok;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string model;
    std::string data;
    std::string out;
    std::string quadrature{"grid"};
    int sections{10000};
    double span{0.0};
    int samples{1000};
    std::uint64_t seed{0};
    bool keep_samples{false};
};

Quadrature make_quadrature(const PredictArgs& a, const CLI::App& cmd) {
    GridQuadrature grid;
    grid.sections = a.sections;
    if (cmd.count("--span")) {
        if (!(a.span > 0.0)) throw UsageError("--span must be > 0");
        grid.span = a.span;
    }
    if (a.quadrature == "grid") return grid;
    if (a.quadrature == "mc") {
        McQuadrature mc;
        mc.samples = a.samples;
        mc.seed = a.seed;
        mc.window = grid;
        return mc;
    }
    throw UsageError("--quadrature must be grid or mc");
}

int do_predict(const PredictArgs& a, const CLI::App& cmd, std::ostream& out) {
    require_file(a.model, "--model");
    require_file(a.data, "--data");
    if (a.out.empty()) throw UsageError("missing --out");
    require_parent(a.out);
    const auto quad = make_quadrature(a, cmd);
    const auto model = neural::load_checkpoint(a.model);
    const auto data = load_dataset(a.data);
    std::ostringstream lines;
    for (const auto& seq : data.sequences) {
        const auto enc = neural::encode_history(model, seq.events);
        const auto p = predict_next(model, enc.h, enc.last_time, quad);
        ordered_json j;
        j["user_id"] = seq.user_id;
        j["t_hat"] = p.t_hat;
        j["m_hat"] = p.m_hat;
        j["mark_scores"] = p.mark_scores;
        j["deficit_mass"] = p.deficit_mass;
        if (std::holds_alternative<McQuadrature>(quad)) {
            j["std_error"] = p.std_error;
            if (a.keep_samples) j["sample_times"] = p.sample_times;
        }
        lines << j.dump() << '\n';
    }
    write_file_atomic(a.out, lines.str());
    out << "wrote " << data.size() << " predictions to " << a.out << '\n';
    return ok;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string model;
    std::string data;
    std::string out;
    int sections{10000};
    int k{5};
};

int do_evaluate(const EvaluateArgs& a, std::ostream& out) {
    require_file(a.model, "--model");
    require_file(a.data, "--data");
    if (!a.out.empty()) require_parent(a.out);
    const auto model = neural::load_checkpoint(a.model);
    const auto data = load_dataset(a.data);
    if (data.mark_count > model.mark_count()) {
        throw UsageError("data has more marks than the model");
    }
    GridQuadrature grid;
    grid.sections = a.sections;
    double ll = 0.0;
    std::vector<double> predicted, actual;
    std::vector<std::vector<double>> scores;
    std::vector<int> marks;
    for (const auto& seq : data.sequences) {
        ll += neural::sequence_log_likelihood(model, seq, neural::encode_sequence(model, seq.events));
        if (seq.events.empty()) continue;
        const std::span<const Event> prefix(seq.events.data(), seq.events.size() - 1);
        const auto enc = neural::encode_history(model, prefix);
        auto p = predict_next(model, enc.h, enc.last_time, grid);
        predicted.push_back(p.t_hat);
        actual.push_back(seq.events.back().t);
        scores.push_back(std::move(p.mark_scores));
        marks.push_back(seq.events.back().m);
    }
    ordered_json j;
    j["sequences"] = data.size();
    j["mean_log_likelihood"] = data.size() ? ll / static_cast<double>(data.size()) : 0.0;
    if (!predicted.empty()) {
        j["time_mae"] = time_mae(predicted, actual);
        j["top" + std::to_string(a.k) + "_accuracy"] = topk_accuracy(scores, marks, a.k);
    }
    const auto text = j.dump(2) + "\n";
    if (!a.out.empty()) {
        write_file_atomic(a.out, text);
    }
    out << text;
    return ok;
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
    std::string spec;
    int exp{1};
    std::string scale{"desk"};
    bool published_params{false};
    std::string methods;
    std::string seeds;
    std::uint64_t seed{0};
    int epochs{0};
    std::string eta;
    int bins{0};
    double lr{0.0};
    int batches{0};
    std::string out;
    // sweep only
    std::string axis;
    std::string values;
};

ExperimentSpec resolve_spec(const ExperimentArgs& a, const CLI::App& cmd, int threads, Header& header) {
    ExperimentSpec s;
    if (!a.spec.empty()) {
        require_file(a.spec, "--spec");
        s = experiment_spec_from_json(read_text(a.spec));
        header.add("spec", a.spec, "file");
    } else {
        if (a.scale != "desk" && a.scale != "full") throw UsageError("--scale must be desk or full");
        s = experiment_spec(a.exp, a.scale == "full" ? Scale::full : Scale::desk, a.published_params);
        header.add("spec", "experiment " + std::to_string(a.exp) + ", " + a.scale + " scale", "flag/default");
    }
    const char* src = a.spec.empty() ? "default" : "file";
    if (cmd.count("--methods")) s.methods = parse_methods(a.methods);
    if (cmd.count("--seeds")) {
        s.seeds.clear();
        for (int v : parse_int_list(a.seeds, false)) s.seeds.push_back(static_cast<std::uint64_t>(v));
    }
    if (cmd.count("--seed")) s.seeds = {a.seed};
    if (cmd.count("--epochs")) s.train.epochs = a.epochs;
    if (cmd.count("--eta")) s.train.eta = parse_eta(a.eta);
    if (cmd.count("--bins")) s.train.bins_per_axis = a.bins;
    if (cmd.count("--lr")) s.train.learning_rate = a.lr;
    if (cmd.count("--batches")) s.train.batch_count = a.batches;
    s.threads = threads;
    s.validate();

    std::string methods;
    for (auto m : s.methods) methods += (methods.empty() ? "" : ",") + to_string(m);
    std::string seeds;
    for (auto v : s.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(v);
    auto from = [&](std::initializer_list<const char*> flags) {
        for (const char* f : flags) {
            if (cmd.count(f)) return "flag";
        }
        return src;
    };
    header.add("id", s.id, src);
    header.add("methods", methods, from({"--methods"}));
    header.add("seeds", seeds, from({"--seeds", "--seed"}));
    header.add("epochs", std::to_string(s.train.epochs), from({"--epochs"}));
    header.add("batch_count", std::to_string(s.train.batch_count), from({"--batches"}));
    header.add("eta", s.train.eta ? std::to_string(*s.train.eta) : "inf", from({"--eta"}));
    header.add("bins_per_axis", std::to_string(s.train.bins_per_axis), from({"--bins"}));
    header.add("learning_rate", format_double(s.train.learning_rate), from({"--lr"}));
    header.add("threads", std::to_string(threads), threads_source(cmd));
    return s;
}

void prepare_out_dir(const std::string& dir) {
    if (dir.empty()) throw UsageError("missing --out");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + dir + "'");
}

int do_experiment(const ExperimentArgs& a, const CLI::App& cmd, int threads, std::ostream& out) {
    Header header;
    const auto spec = resolve_spec(a, cmd, threads, header);
    prepare_out_dir(a.out);
    header.print(out, "experiment");
    const auto report = run_experiment(spec);
    const fs::path dir(a.out);
    std::ostringstream csv;
    write_report_csv(csv, report);
    write_file_atomic(dir / (spec.id + "_metrics.csv"), csv.str());
    write_file_atomic(dir / (spec.id + "_report.json"), report_to_json(report));
    write_file_atomic(dir / (spec.id + "_spec.json"), experiment_spec_to_json(spec) + "\n");
    for (const auto& r : report.results) {
        out << to_string(r.method) << " seed " << r.seed << ": ";
        if (r.applicable) {
            out << "intensity MAE " << format_double(r.intensity_mae) << ", time MAE " << format_double(r.time_mae)
                << ", top-" << report.topk << ' ' << format_double(r.topk_accuracy) << '\n';
        } else {
            out << "n/a\n";
        }
    }
    out << "wrote " << (dir / (spec.id + "_metrics.csv")).string() << '\n';
    return ok;
}

int do_sweep(const ExperimentArgs& a, const CLI::App& cmd, int threads, std::ostream& out) {
    if (a.axis != "bins" && a.axis != "eta") throw UsageError("--axis must be bins or eta");
    const auto axis = a.axis == "bins" ? SweepAxis::bins : SweepAxis::eta;
    const auto values = parse_int_list(a.values, axis == SweepAxis::eta);
    Header header;
    const auto spec = resolve_spec(a, cmd, threads, header);
    header.add("axis", a.axis, "flag");
    header.add("values", a.values, "flag");
    prepare_out_dir(a.out);
    header.print(out, "sweep");
    const auto result = sweep(spec, axis, values);
    std::ostringstream csv;
    write_sweep_csv(csv, result);
    const auto path = fs::path(a.out) / (spec.id + "_sweep_" + a.axis + ".csv");
    write_file_atomic(path, csv.str());
    out << csv.str() << "wrote " << path.string() << '\n';
    return ok;
}

// ---------------------------------------------------------------------------

struct ExportArgs {
    std::string model;
    std::string data;
    std::string out;
    int bins{20};
    std::string prefix{"transition"};
};

int do_export(const ExportArgs& a, int threads, std::ostream& out) {
    require_file(a.model, "--model");
    require_file(a.data, "--data");
    prepare_out_dir(a.out);
    const auto model = neural::load_checkpoint(a.model);
    auto data = load_dataset(a.data);
    single_category_if_unlabelled(data, out);
    TrainConfig c;
    c.bins_per_axis = a.bins;
    c.threads = threads;
    c.validate();
    const auto refresh = refresh_weights(model, data, c);
    if (model.q() > 1) {
        out << "q = " << model.q() << ": writing per-axis marginal transitions\n";
    }
    for (const auto& p : export_transition_histogram(refresh.table, a.out, a.prefix)) {
        out << "wrote " << p.string() << '\n';
    }
    return ok;
}

std::vector<std::string> option_names(const CLI::App& app) {
    std::vector<std::string> names;
    for (const auto* opt : app.get_options()) {
        for (const auto& n : opt->get_lnames()) names.push_back("--" + n);
    }
    return names;
}

}  // namespace

std::string suggest(const std::string& word, const std::vector<std::string>& candidates) {
    std::string best;
    std::size_t best_d = std::string::npos;
    for (const auto& c : candidates) {
        std::vector<std::size_t> prev(c.size() + 1), cur(c.size() + 1);
        for (std::size_t j = 0; j <= c.size(); ++j) prev[j] = j;
        for (std::size_t i = 1; i <= word.size(); ++i) {
            cur[0] = i;
            for (std::size_t j = 1; j <= c.size(); ++j) {
                cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (word[i - 1] == c[j - 1] ? 0 : 1)});
            }
            std::swap(prev, cur);
        }
        if (prev[c.size()] < best_d) {
            best_d = prev[c.size()];
            best = c;
        }
    }
    return best_d <= std::max<std::size_t>(2, word.size() / 3) ? best : std::string();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Counterfactual temporal point processes"};
    app.name("cfpp");
    app.require_subcommand(1);
    int threads = threads_from_env();

    auto add_threads = [&](CLI::App* sub) {
        sub->add_option("--threads", threads, "Worker threads (default: CFPP_THREADS or 1)")->check(CLI::PositiveNumber);
    };

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Simulate a classical point process to JSONL");
    simulate->add_option("--model", sim.model, "poisson | exp-hawkes | self-correcting")->capture_default_str();
    simulate->add_option("--mu", sim.mu, "Base rate")->capture_default_str();
    simulate->add_option("--alpha", sim.alpha, "Excitation / correction strength")->capture_default_str();
    simulate->add_option("--beta", sim.beta, "Hawkes decay")->capture_default_str();
    simulate->add_option("--rate", sim.rate, "Poisson rate")->capture_default_str();
    simulate->add_option("--n", sim.n, "Number of sequences")->capture_default_str();
    simulate->add_option("--horizon", sim.horizon, "Observation window T")->capture_default_str();
    simulate->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
    simulate->add_flag("--marks", sim.marks, "Attach marks from the three-phase mark distribution");
    simulate->add_option("--max-events", sim.max_events, "Explosion cap per sequence")->capture_default_str();
    simulate->add_option("--out", sim.out, "Output JSONL")->required();
    add_threads(simulate);

    TrainArgs tr;
    auto* trainc = app.add_subcommand("train", "Train a neural model with counterfactual weights");
    trainc->add_option("--data", tr.data, "Training JSONL (categories required when weights refresh)")->required();
    trainc->add_option("--config", tr.config, "TrainConfig JSON; flags override it");
    trainc->add_option("--out", tr.out, "Checkpoint path")->required();
    trainc->add_option("--report", tr.report, "Training report JSON");
    trainc->add_option("--histogram-dir", tr.histogram_dir, "Export the final transition histogram here");
    trainc->add_option("--q", tr.q, "Embedding size")->capture_default_str();
    trainc->add_option("--decoder", tr.decoder, "exponential | decay-cell")->capture_default_str();
    trainc->add_option("--init-scale", tr.init_scale, "Initial weight scale")->capture_default_str();
    trainc->add_option("--epochs", tr.epochs, "Epochs");
    trainc->add_option("--batches", tr.batches, "Batches per epoch");
    trainc->add_option("--eta", tr.eta, "Weight refresh period in epochs, or inf");
    trainc->add_option("--bins", tr.bins, "Bins per embedding axis");
    trainc->add_option("--lr", tr.lr, "Learning rate");
    trainc->add_option("--grad-clip", tr.clip, "Global gradient norm clip");
    trainc->add_option("--cap", tr.cap, "Weight truncation");
    trainc->add_flag("--stabilized", tr.stabilized, "Use stabilized weights");
    trainc->add_option("--steps-per-batch", tr.steps, "Ascent steps per batch");
    trainc->add_option("--seed", tr.seed, "Seed");
    trainc->add_option("--integral", tr.integral, "closed | grid");
    trainc->add_option("--sections", tr.sections, "Grid sections");
    trainc->add_flag("--sum-marks", tr.sum_marks, "Grid mode: sum over marks instead of averaging");
    add_threads(trainc);

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "Predict the next event for each history");
    predict->add_option("--model", pr.model, "Checkpoint")->required();
    predict->add_option("--data", pr.data, "Histories JSONL (categories ignored)")->required();
    predict->add_option("--out", pr.out, "Predictions JSONL")->required();
    predict->add_option("--quadrature", pr.quadrature, "grid | mc")->capture_default_str();
    predict->add_option("--sections", pr.sections, "Grid cells")->capture_default_str();
    predict->add_option("--span", pr.span, "Initial integration window");
    predict->add_option("--samples", pr.samples, "Monte Carlo draws")->capture_default_str();
    predict->add_option("--seed", pr.seed, "Monte Carlo seed")->capture_default_str();
    predict->add_flag("--keep-samples", pr.keep_samples, "Include the raw sample times");

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Log-likelihood and next-event metrics on held-out data");
    evaluate->add_option("--model", ev.model, "Checkpoint")->required();
    evaluate->add_option("--data", ev.data, "Held-out JSONL")->required();
    evaluate->add_option("--out", ev.out, "Metrics JSON");
    evaluate->add_option("--sections", ev.sections, "Grid cells for time prediction")->capture_default_str();
    evaluate->add_option("--k", ev.k, "Top-k")->capture_default_str();

    ExperimentArgs ex;
    auto add_spec_options = [&](CLI::App* sub) {
        sub->add_option("--spec", ex.spec, "ExperimentSpec JSON");
        sub->add_option("--exp", ex.exp, "Built-in experiment 1..6 when no spec file")->capture_default_str();
        sub->add_option("--scale", ex.scale, "desk | full")->capture_default_str();
        sub->add_flag("--published-params", ex.published_params, "Published (supercritical) Hawkes parameters");
        sub->add_option("--methods", ex.methods, "Comma list, e.g. counterfactual,unweighted");
        sub->add_option("--seeds", ex.seeds, "Comma list of seeds");
        sub->add_option("--seed", ex.seed, "Single seed");
        sub->add_option("--epochs", ex.epochs, "Epochs");
        sub->add_option("--eta", ex.eta, "Refresh period or inf");
        sub->add_option("--bins", ex.bins, "Bins per axis");
        sub->add_option("--lr", ex.lr, "Learning rate");
        sub->add_option("--batches", ex.batches, "Batches per epoch");
        sub->add_option("--out", ex.out, "Output directory")->required();
        add_threads(sub);
    };
    auto* experiment = app.add_subcommand("experiment", "Run a synthetic experiment");
    add_spec_options(experiment);
    auto* sweepc = app.add_subcommand("sweep", "Sweep bins or refresh period");
    add_spec_options(sweepc);
    sweepc->add_option("--axis", ex.axis, "bins | eta")->required();
    sweepc->add_option("--values", ex.values, "Comma list; inf allowed for eta")->required();

    ExportArgs exa;
    auto* exportc = app.add_subcommand("export-histogram", "Export transition histograms of a trained model");
    exportc->add_option("--model", exa.model, "Checkpoint")->required();
    exportc->add_option("--data", exa.data, "Categorized JSONL")->required();
    exportc->add_option("--out", exa.out, "Output directory")->required();
    exportc->add_option("--bins", exa.bins, "Bins per axis")->capture_default_str();
    exportc->add_option("--prefix", exa.prefix, "File name prefix")->capture_default_str();
    add_threads(exportc);

    // Unknown names are reported, with a suggestion, before any missing-option complaint.
    if (!args.empty() && args.front().rfind("-", 0) != 0) {
        const CLI::App* sub = nullptr;
        std::vector<std::string> commands;
        for (const auto* s : app.get_subcommands({})) {
            commands.push_back(s->get_name());
            if (s->get_name() == args.front()) sub = s;
        }
        if (sub == nullptr) {
            err << "error: unknown subcommand '" << args.front() << "'\n";
            const auto hint = suggest(args.front(), commands);
            if (!hint.empty()) err << "  did you mean '" << hint << "'?\n";
            return validation_error;
        }
        auto names = option_names(*sub);
        names.push_back("--help");
        bool unknown = false;
        for (std::size_t i = 1; i < args.size(); ++i) {
            if (args[i].rfind("--", 0) != 0 || args[i] == "--") continue;
            const auto word = args[i].substr(0, args[i].find('='));
            if (std::find(names.begin(), names.end(), word) != names.end()) continue;
            unknown = true;
            err << "error: unknown option '" << word << "' for " << sub->get_name() << '\n';
            const auto hint = suggest(word, names);
            if (!hint.empty()) err << "  did you mean '" << hint << "'?\n";
        }
        if (unknown) return validation_error;
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ExtrasError& e) {
        err << "error: " << e.what() << '\n';
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::vector<std::string> names = option_names(*sub);
        if (sub == &app) {
            for (const auto* s : app.get_subcommands({})) names.push_back(s->get_name());
        }
        for (const auto& extra : (sub == &app ? app.remaining() : sub->remaining())) {
            const auto word = extra.substr(0, extra.find('='));
            const auto hint = suggest(word, names);
            if (!hint.empty()) err << "  unknown '" << word << "', did you mean '" << hint << "'?\n";
        }
        return validation_error;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return validation_error;
    }

    try {
        if (simulate->parsed()) return do_simulate(sim, *simulate, threads, out);
        if (trainc->parsed()) return do_train(tr, *trainc, threads, out);
        if (predict->parsed()) return do_predict(pr, *predict, out);
        if (evaluate->parsed()) return do_evaluate(ev, out);
        if (experiment->parsed()) return do_experiment(ex, *experiment, threads, out);
        if (sweepc->parsed()) return do_sweep(ex, *sweepc, threads, out);
        if (exportc->parsed()) return do_export(exa, threads, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return validation_error;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return validation_error;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << '\n';
        return validation_error;
    } catch (const std::exception& e) {
        err << "failed: " << e.what() << '\n';
        return runtime_error;
    }
    return validation_error;
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace cfpp::cli
