// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the training objective and frame selection.
#include <benchmark/benchmark.h>

#include "pasta/dpo_engine.hpp"
#include "pasta/pair_factory.hpp"

namespace {

pasta::SyntheticDataset dataset(std::size_t pairs_per_mode, std::size_t dim) {
    pasta::SyntheticSpec spec;
    spec.feature_dim = dim;
    spec.pairs_per_mode = {pairs_per_mode, pairs_per_mode, pairs_per_mode};
    return pasta::make_synthetic_dataset(spec);
}

void BM_Objective(benchmark::State& state) {
    const auto s = dataset(static_cast<std::size_t>(state.range(0)), 64);
    const pasta::PolicyParams theta(64);
    const pasta::DpoConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(pasta::objective(theta, s.data, cfg));
    state.SetItemsProcessed(state.iterations() * state.range(0) * 3);
}
BENCHMARK(BM_Objective)->Arg(100)->Arg(1000)->Arg(10000);

void BM_Gradient(benchmark::State& state) {
    const auto s = dataset(static_cast<std::size_t>(state.range(0)), 64);
    const pasta::PolicyParams theta(64);
    const pasta::DpoConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(pasta::gradient(theta, s.data, cfg));
    state.SetItemsProcessed(state.iterations() * state.range(0) * 3);
}
BENCHMARK(BM_Gradient)->Arg(100)->Arg(1000)->Arg(10000);

void BM_TrainStep(benchmark::State& state) {
    const auto s = dataset(1000, 64);
    pasta::DpoConfig cfg;
    cfg.steps = 1;
    for (auto _ : state) benchmark::DoNotOptimize(pasta::train(s.data, cfg, pasta::PolicyParams(64)));
}
BENCHMARK(BM_TrainStep);

void BM_SelectFrames(benchmark::State& state) {
    pasta::VideoRef v;
    v.video_id = "bench";
    v.native_fps = pasta::Rational{30, 1};
    v.duration_s = static_cast<double>(state.range(0)) / 30.0;
    v.frames.resize(static_cast<std::size_t>(state.range(0)), "f.jpg");
    for (auto _ : state) {
        benchmark::DoNotOptimize(pasta::select_frames(v, pasta::SamplingMode::Dense, 32.0));
        benchmark::DoNotOptimize(pasta::select_frames(v, pasta::SamplingMode::Sparse, 1.0, 32));
    }
}
BENCHMARK(BM_SelectFrames)->Arg(300)->Arg(9000)->Arg(108000);

}  // namespace
BENCHMARK_MAIN();
