#include <random>

#include <benchmark/benchmark.h>

#include "ape/discrepancy.hpp"
#include "ape/trainer.hpp"

namespace {

ape::Array random_rows(std::size_t m, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    ape::Array a({m, d});
    for (double& v : a.data()) v = n(rng);
    return a;
}

void BM_Extract(benchmark::State& state) {
    const auto model = ape::make_model({}, 1);
    const auto x = random_rows(static_cast<std::size_t>(state.range(0)), 2, 2);
    for (auto _ : state) benchmark::DoNotOptimize(ape::extract(model, x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Extract)->Arg(32)->Arg(256);

void BM_ClassificationGradient(benchmark::State& state) {
    const auto model = ape::make_model({}, 1);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto x = random_rows(n, 2, 3);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 3);
    for (auto _ : state) benchmark::DoNotOptimize(ape::classification_loss_with_gradient(model, x, y));
}
BENCHMARK(BM_ClassificationGradient)->Arg(32)->Arg(256);

void BM_MmdGradient(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_rows(n, 16, 4);
    const auto b = random_rows(2 * n, 16, 5);
    const auto spec = ape::median_heuristic(ape::vstack(a, b));
    for (auto _ : state) benchmark::DoNotOptimize(ape::mmd_sq_with_gradient(a, b, spec));
}
BENCHMARK(BM_MmdGradient)->Arg(16)->Arg(64);

void BM_ObjectiveStep(benchmark::State& state) {
    const auto task = ape::generate({});
    ape::TrainConfig cfg;
    cfg.batch = static_cast<std::size_t>(state.range(0));
    const auto model = ape::make_model(cfg.model_spec(task.input_dim, task.classes), 0);
    const ape::Objective objective(model, cfg.batch, cfg);
    std::mt19937_64 rng(6);
    const auto batch = ape::sample_batch(task, cfg.batch, rng);
    for (auto _ : state) benchmark::DoNotOptimize(objective.run(batch, model, true));
}
BENCHMARK(BM_ObjectiveStep)->Arg(16)->Arg(64);

void BM_Train100(benchmark::State& state) {
    const auto task = ape::generate({});
    ape::TrainConfig cfg;
    cfg.steps = 100;
    cfg.eval_interval = 100;
    for (auto _ : state) benchmark::DoNotOptimize(ape::train(task, cfg));
}
BENCHMARK(BM_Train100)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
