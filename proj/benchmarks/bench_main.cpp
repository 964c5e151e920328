#include <benchmark/benchmark.h>

#include <opencv2/core.hpp>

#include "vrfuse/balance.hpp"
#include "vrfuse/enhance.hpp"
#include "vrfuse/nn/layers.hpp"
#include "vrfuse/random.hpp"
#include "vrfuse/synth.hpp"

using namespace vrfuse;

static void BM_ClaheChannel(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  cv::Mat gray(size, size, CV_8U);
  cv::randu(gray, 0, 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(enhance::clahe_channel(gray, {8, 8}, enhance::ClipSpec::normalized(2.0)));
  }
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_ClaheChannel)->Arg(128)->Arg(512);

static void BM_ClaheColor(benchmark::State& state) {
  const cv::Mat img = synth::draw_fundus(Grade::Moderate, 3, 128);
  for (auto _ : state) benchmark::DoNotOptimize(enhance::clahe(img));
}
BENCHMARK(BM_ClaheColor);

static void BM_Knn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  std::vector<balance::FeatureVector> pool(n);
  for (auto& v : pool) {
    v.values.resize(128 * 128 * 3);
    for (double& x : v.values) x = rng.uniform(0, 255);
  }
  for (auto _ : state) benchmark::DoNotOptimize(balance::knn(pool[0].values, pool, 5, 0));
}
BENCHMARK(BM_Knn)->Arg(64)->Arg(256);

static void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(2);
  nn::Conv2d conv("conv", {c, c, 3, 1, 1, 1, true, nn::Activation::ReLU}, rng);
  nn::Tensor x({8, c, 32, 32});
  for (auto& v : x.values()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, nn::Mode::Eval));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64);
BENCHMARK_MAIN();
