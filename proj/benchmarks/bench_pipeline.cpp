#include <benchmark/benchmark.h>

#include "radiomap/autodiff.hpp"
#include "radiomap/features.hpp"
#include "radiomap/model.hpp"
#include "radiomap/oracle.hpp"
#include "radiomap/rng.hpp"

using namespace radiomap;

namespace {

Scene bench_scene(int size) {
    GeneratorParams params = default_generator_params();
    params.height = size;
    params.width = size;
    return generate_scene(params, 7);
}

Tensor random_tensor(std::vector<int> dims, std::uint64_t seed) {
    Tensor t(std::move(dims));
    Rng rng(seed);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

} // namespace

static void BM_TraverseCells(benchmark::State& state) {
    const int n = 64;
    Rng rng(11);
    for (auto _ : state) {
        const Point a{rng.uniform(0.0, n), rng.uniform(0.0, n)};
        const Point b{rng.uniform(0.0, n), rng.uniform(0.0, n)};
        benchmark::DoNotOptimize(traverse_cells(a, b, n, n, 0.25));
    }
}
BENCHMARK(BM_TraverseCells);

static void BM_AssembleFeatures(benchmark::State& state) {
    const Scene scene = bench_scene(static_cast<int>(state.range(0)));
    const FeatureConfig cfg;
    for (auto _ : state) {
        benchmark::DoNotOptimize(assemble_features(scene, cfg));
    }
}
BENCHMARK(BM_AssembleFeatures)->Arg(64)->Arg(128);

static void BM_TracePathloss(benchmark::State& state) {
    const Scene scene = bench_scene(64);
    TraceConfig cfg;
    cfg.max_bounces = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(trace_pathloss(scene, cfg));
    }
}
BENCHMARK(BM_TracePathloss)->Arg(0)->Arg(1)->Arg(2);

static void BM_Conv2dForward(benchmark::State& state) {
    const Tensor x = random_tensor({4, 32, 32, 32}, 1);
    const Tensor w = random_tensor({32, 32, 3, 3}, 2);
    const Tensor b = random_tensor({32}, 3);
    for (auto _ : state) {
        Tape tape;
        const int xi = tape.track(x, false);
        const int wi = tape.track(w, false);
        const int bi = tape.track(b, false);
        benchmark::DoNotOptimize(tape.conv2d(xi, wi, bi, 1, 1));
    }
    const double macs = 4.0 * 32 * 32 * 32 * 32 * 9;
    state.counters["mac/s"] =
        benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForward);

static void BM_ModelForward(benchmark::State& state) {
    FeatureConfig fcfg;
    ModelConfig mcfg;
    mcfg.in_channels = fcfg.channel_count(false);
    const ModelParams params = build_model(mcfg, 5);
    const Tensor x = random_tensor({1, mcfg.in_channels, 64, 64}, 4);
    for (auto _ : state) {
        Tape tape;
        const auto nodes = track_params(tape, params, false);
        const int input = tape.track(x, false);
        benchmark::DoNotOptimize(model_forward(tape, mcfg, nodes, params, input));
    }
}
BENCHMARK(BM_ModelForward);

static void BM_ModelTrainStep(benchmark::State& state) {
    FeatureConfig fcfg;
    ModelConfig mcfg;
    mcfg.in_channels = fcfg.channel_count(false);
    ModelParams params = build_model(mcfg, 5);
    const Tensor x = random_tensor({4, mcfg.in_channels, 64, 64}, 4);
    const Tensor target = random_tensor({4, 1, 64, 64}, 6);
    AdamState adam;
    for (auto _ : state) {
        Tape tape;
        const auto nodes = track_params(tape, params, true);
        const int input = tape.track(x, false);
        const int out = model_forward(tape, mcfg, nodes, params, input);
        tape.backward(tape.mse_loss(out, target));
        std::vector<Tensor*> ps;
        std::vector<const Tensor*> gs;
        for (std::size_t i = 0; i < params.size(); ++i) {
            ps.push_back(&params.tensors[i]);
            gs.push_back(&tape.grad(nodes[i]));
        }
        adam_step(ps, gs, adam);
    }
}
BENCHMARK(BM_ModelTrainStep);
