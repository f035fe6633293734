#include "cfpp/classical.hpp"
#include "cfpp/inference.hpp"
#include "cfpp/iptw.hpp"
#include "cfpp/neural.hpp"
#include "cfpp/trainer.hpp"

#include <benchmark/benchmark.h>

using namespace cfpp;

namespace {

std::vector<EventSequence> hawkes_sequences(int n) {
    const ExpHawkesModel model({0.1, 0.5, 1.0});
    return simulate_sequences(model, static_cast<std::size_t>(n), 100.0, nullptr, 1, 0, "b");
}

neural::NeuralModel model_for(int q, neural::DecoderKind decoder) {
    const auto mode = decoder == neural::DecoderKind::decay_cell ? neural::IntegralMode::grid(100)
                                                                 : neural::IntegralMode::closed_form();
    return neural::NeuralModel::initialize({q, 1, decoder}, mode, 3);
}

}  // namespace

static void BM_Thinning(benchmark::State& state) {
    const ExpHawkesModel model({0.1, 0.5, 1.0});
    Rng rng(7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(thinning_simulate(model, 100.0, nullptr, rng));
    }
}
BENCHMARK(BM_Thinning);

static void BM_HawkesMle(benchmark::State& state) {
    Dataset d;
    d.sequences = hawkes_sequences(static_cast<int>(state.range(0)));
    MleOptions o;
    o.restarts = 2;
    for (auto _ : state) {
        benchmark::DoNotOptimize(classical_mle(d, ModelFamily::exp_hawkes, o));
    }
}
BENCHMARK(BM_HawkesMle)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_Gradient(benchmark::State& state) {
    const auto decoder = static_cast<neural::DecoderKind>(state.range(1));
    const auto m = model_for(static_cast<int>(state.range(0)), decoder);
    const auto seqs = hawkes_sequences(1);
    const auto traj = neural::encode_sequence(m, seqs[0].events);
    for (auto _ : state) {
        benchmark::DoNotOptimize(neural::grad_log_likelihood(m, seqs[0], traj, {}, m.integral_mode()));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(seqs[0].size()));
}
BENCHMARK(BM_Gradient)->Args({1, 0})->Args({3, 0})->Args({8, 0})->Args({3, 1});

static void BM_Histogram(benchmark::State& state) {
    const auto m = model_for(static_cast<int>(state.range(0)), neural::DecoderKind::exponential);
    const auto seqs = hawkes_sequences(120);
    std::vector<neural::HistoryTrajectory> trajs;
    std::vector<int> cats;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        trajs.push_back(neural::encode_sequence(m, seqs[i].events));
        cats.push_back(static_cast<int>(i % 3));
    }
    const BinGrid grid{static_cast<int>(state.range(1)), m.q(), 3};
    for (auto _ : state) {
        const auto table = estimate_histogram(trajs, cats, grid);
        benchmark::DoNotOptimize(compute_weight_table(trajs, cats, table));
    }
}
BENCHMARK(BM_Histogram)->Args({1, 25})->Args({3, 5});

static void BM_TrainFiveEpochs(benchmark::State& state) {
    Dataset d;
    d.category_count = 3;
    d.sequences = hawkes_sequences(120);
    for (std::size_t i = 0; i < d.size(); ++i) d.sequences[i].category = static_cast<int>(i % 3);
    ModelSpec spec;
    TrainConfig c;
    c.epochs = 5;
    c.eta = 5;
    for (auto _ : state) {
        benchmark::DoNotOptimize(train(d, spec, c));
    }
}
BENCHMARK(BM_TrainFiveEpochs)->Unit(benchmark::kMillisecond);

static void BM_PredictGrid(benchmark::State& state) {
    const auto m = model_for(2, neural::DecoderKind::exponential);
    const std::vector<double> h{0.4, 0.6};
    GridQuadrature q;
    q.sections = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(predict_next(m, h, 0.0, q));
    }
}
BENCHMARK(BM_PredictGrid)->Arg(1000)->Arg(10000);
BENCHMARK_MAIN();
