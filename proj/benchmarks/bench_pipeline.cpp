#include <benchmark/benchmark.h>

#include "dti/dataset.hpp"
#include "dti/model.hpp"
#include "dti/ops.hpp"
#include "dti/rng.hpp"
#include "dti/thermal.hpp"

using namespace dti;

namespace {

ThermalFrame random_frame(int w, int h, std::uint64_t seed) {
    ThermalFrame f;
    f.width = w;
    f.height = h;
    f.temps.resize(static_cast<std::size_t>(w) * h);
    Rng rng(seed);
    for (auto& t : f.temps) t = rng.uniform(10.0, 40.0);
    return f;
}

Tensor random_batch(int b, int side, std::uint64_t seed) {
    Tensor t({b, 1, side, side});
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform01());
    return t;
}

void BM_Quantize(benchmark::State& state) {
    const ThermalFrame frame = random_frame(160, 120, 1);
    const Roi roi = center_crop(frame, 75);
    for (auto _ : state) {
        QuantizedImage img = quantize(frame, roi, QuantizationRange{});
        benchmark::DoNotOptimize(img.pixels.data());
    }
}
BENCHMARK(BM_Quantize);

void BM_ResizeBilinear(benchmark::State& state) {
    const ThermalFrame frame = random_frame(160, 120, 2);
    const QuantizedImage img = quantize(frame, center_crop(frame, 75), QuantizationRange{});
    for (auto _ : state) {
        QuantizedImage r = resize_bilinear(img, 60);
        benchmark::DoNotOptimize(r.pixels.data());
    }
}
BENCHMARK(BM_ResizeBilinear);

void BM_Conv2dForward(benchmark::State& state) {
    // first conv of the table-2 net at batch 16
    Rng rng(3);
    Tensor in = random_batch(16, 30, 3);
    Tensor w({12, 1, 7, 7});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    Tensor b({12});
    for (auto _ : state) {
        Tensor out = ops::conv2d(in, w, b);
        benchmark::DoNotOptimize(out.ptr());
    }
}
BENCHMARK(BM_Conv2dForward);

void BM_ForwardEval(benchmark::State& state) {
    const Model m = init_parameters(build_study2_spec(5), 4);
    NetExec<float> exec(m.spec);
    const Tensor batch = random_batch(static_cast<int>(state.range(0)), 60, 5);
    for (auto _ : state) {
        Tensor probs = exec.probs(batch, m.params, Mode::eval);
        benchmark::DoNotOptimize(probs.ptr());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardEval)->Arg(1)->Arg(32);

void BM_TrainStep(benchmark::State& state) {
    const Model m = init_parameters(build_study2_spec(5), 6);
    NetExec<float> exec(m.spec);
    const int bsz = static_cast<int>(state.range(0));
    const Tensor batch = random_batch(bsz, 60, 7);
    std::vector<int> labels(bsz);
    for (int i = 0; i < bsz; ++i) labels[i] = i % 5;
    std::vector<Tensor> params = m.params;
    std::vector<Tensor> grads;
    for (const auto& p : params) grads.emplace_back(p.shape);
    Rng rng(8);
    for (auto _ : state) {
        for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0f);
        const float loss = exec.forward_backward(batch, labels, params, grads, Mode::train, &rng);
        benchmark::DoNotOptimize(loss);
    }
    state.SetItemsProcessed(state.iterations() * bsz);
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(256);

} // namespace

BENCHMARK_MAIN();
