// Microbenchmarks for the kernels that dominate training and inference.

#include <benchmark/benchmark.h>

#include "htk/hotspot.hpp"
#include "htk/metrics.hpp"
#include "htk/net.hpp"
#include "htk/rng.hpp"
#include "htk/tensor.hpp"
#include "htk/train.hpp"

namespace {

using namespace htk;

Tensor<float> random_tensor(Rng& rng, Shape shape, float stdev = 1.0f) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<float>(rng.normal()) * stdev;
    return Tensor<float>(std::move(shape), std::move(v));
}

void BM_conv2d_forward(benchmark::State& state) {
    Rng rng(7);
    const int c = static_cast<int>(state.range(0));
    Tensor<float> x = random_tensor(rng, {c, 16, 16});
    Tensor<float> w = random_tensor(rng, {c, c, 3, 3}, 0.1f);
    Tensor<float> b = Tensor<float>::zeros({c});
    for (auto _ : state) {
        Tensor<float> y = conv2d<float>(nullptr, x, w, b, 1, 1, 1);
        benchmark::DoNotOptimize(y.value().data());
    }
}
BENCHMARK(BM_conv2d_forward)->Arg(16)->Arg(32);

void BM_conv2d_train_step(benchmark::State& state) {
    Rng rng(7);
    const int c = static_cast<int>(state.range(0));
    Tensor<float> x = random_tensor(rng, {c, 16, 16});
    Tensor<float> w = random_tensor(rng, {c, c, 3, 3}, 0.1f);
    w.set_requires_grad(true);
    Tensor<float> b = Tensor<float>::zeros({c}, true);
    for (auto _ : state) {
        Tape<float> tape;
        Tensor<float> y = conv2d(&tape, x, w, b, 1, 1, 1);
        Tensor<float> loss = sum_all(&tape, y);
        tape.backward(loss);
        w.zero_grad();
        b.zero_grad();
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_conv2d_train_step)->Arg(16)->Arg(32);

void BM_lstm_step(benchmark::State& state) {
    Rng rng(7);
    const int d = static_cast<int>(state.range(0));
    Tensor<float> x = random_tensor(rng, {d});
    Tensor<float> h = Tensor<float>::zeros({d});
    Tensor<float> c = Tensor<float>::zeros({d});
    Tensor<float> Wx = random_tensor(rng, {4 * d, d}, 0.1f);
    Tensor<float> Wh = random_tensor(rng, {4 * d, d}, 0.1f);
    Tensor<float> b = Tensor<float>::zeros({4 * d});
    for (auto _ : state) {
        auto out = lstm_step<float>(nullptr, x, h, c, Wx, Wh, b);
        benchmark::DoNotOptimize(out.h.value().data());
    }
}
BENCHMARK(BM_lstm_step)->Arg(32)->Arg(128);

void BM_batchnorm_train(benchmark::State& state) {
    Rng rng(7);
    Tensor<float> x = random_tensor(rng, {1, 32, 8, 8});
    Tensor<float> gamma = Tensor<float>::full({32}, 1.0f);
    Tensor<float> beta = Tensor<float>::zeros({32});
    BatchNormStats<float> stats(32);
    for (auto _ : state) {
        Tensor<float> y = batchnorm2d<float>(nullptr, x, gamma, beta, stats, true);
        benchmark::DoNotOptimize(y.value().data());
    }
}
BENCHMARK(BM_batchnorm_train);

void BM_bilinear_upsample(benchmark::State& state) {
    Rng rng(7);
    Tensor<float> x = random_tensor(rng, {1, 8, 8});
    for (auto _ : state) {
        Tensor<float> y = bilinear_upsample<float>(nullptr, x, 64, 64);
        benchmark::DoNotOptimize(y.value().data());
    }
}
BENCHMARK(BM_bilinear_upsample);

void BM_video_forward(benchmark::State& state) {
    Rng rng(7);
    HotspotModel<float> model(default_encoder(32, true), {"a", "b", "c"}, {"o1", "o2"}, true, rng);
    std::vector<Tensor<float>> frames;
    for (int t = 0; t < 8; ++t) frames.push_back(random_tensor(rng, {3, 64, 64}, 0.5f));
    for (auto _ : state) {
        auto out = model.forward_video(nullptr, frames);
        benchmark::DoNotOptimize(out.y.back().value().data());
    }
}
BENCHMARK(BM_video_forward);

void BM_train_item(benchmark::State& state) {
    Rng rng(7);
    HotspotModel<float> model(default_encoder(32, true), {"a", "b", "c"}, {"o1", "o2"}, true, rng);
    TrainItem<float> item;
    for (int t = 0; t < 8; ++t) item.frames.push_back(random_tensor(rng, {3, 64, 64}, 0.5f));
    item.inactive = random_tensor(rng, {3, 64, 64}, 0.5f);
    item.action = 1;
    LossWeights w;
    Rng trng(11);
    for (auto _ : state) {
        model.zero_grad();
        auto bd = train_batch(model, {&item}, w, AntMode::L2, 0.5f, trng);
        benchmark::DoNotOptimize(bd.total);
    }
}
BENCHMARK(BM_train_item);

void BM_hotspot_map(benchmark::State& state) {
    Rng rng(7);
    HotspotModel<float> model(default_encoder(32, true), {"a", "b", "c"}, {"o1", "o2"}, true, rng);
    Tensor<float> img = random_tensor(rng, {3, 64, 64}, 0.5f);
    Tensor<float> x_I = model.encode_frame(nullptr, img);
    for (auto _ : state) {
        Heatmap m = hotspot_map(model, x_I, 0);
        benchmark::DoNotOptimize(m.v.data());
    }
}
BENCHMARK(BM_hotspot_map);

void BM_metrics_pair(benchmark::State& state) {
    Rng rng(7);
    Heatmap p(64, 64), g(64, 64);
    for (auto& v : p.v) v = rng.uniform();
    for (auto& v : g.v) v = rng.uniform();
    p = normalize_sum(p);
    g = normalize_sum(g);
    for (auto _ : state) {
        benchmark::DoNotOptimize(kld(p, g));
        benchmark::DoNotOptimize(similarity(p, g));
        benchmark::DoNotOptimize(auc_judd(p, g));
    }
}
BENCHMARK(BM_metrics_pair);

}  // namespace

BENCHMARK_MAIN();
