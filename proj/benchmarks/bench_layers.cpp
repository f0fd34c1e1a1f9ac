#include <benchmark/benchmark.h>

#include "ldct/layers.hpp"
#include "ldct/models.hpp"
#include "ldct/optim.hpp"
#include "ldct/rng.hpp"

namespace {

ldct::TensorF random_tensor(const ldct::Shape4& shape, ldct::Rng& rng) {
  ldct::TensorF t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  const auto edge = static_cast<std::size_t>(state.range(2));
  ldct::Rng rng(7);
  const ldct::TensorF input = random_tensor({batch, channels, edge, edge}, rng);
  const ldct::TensorF kernels = random_tensor({channels, channels, 3, 3}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ldct::conv2d_forward(input, kernels));
  }
  const double macs = static_cast<double>(batch) * channels * channels * 9 *
                      edge * edge;
  state.counters["GMAC/s"] = benchmark::Counter(
      macs * static_cast<double>(state.iterations()) * 1e-9,
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 64, 16})->Args({1, 64, 64})->Args({100, 64, 40});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  const auto edge = static_cast<std::size_t>(state.range(2));
  ldct::Rng rng(7);
  const ldct::TensorF input = random_tensor({batch, channels, edge, edge}, rng);
  const ldct::TensorF kernels = random_tensor({channels, channels, 3, 3}, rng);
  const ldct::TensorF upstream = random_tensor({batch, channels, edge, edge}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ldct::conv2d_backward(upstream, input, kernels, false));
  }
  const double macs = 2.0 * static_cast<double>(batch) * channels * channels *
                      9 * edge * edge;
  state.counters["GMAC/s"] = benchmark::Counter(
      macs * static_cast<double>(state.iterations()) * 1e-9,
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 64, 16})->Args({100, 64, 40});

void BM_TrainingIteration(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto edge = static_cast<std::size_t>(state.range(1));
  ldct::Rng rng(7);
  ldct::Network net =
      ldct::build_network<float>(ldct::dncnn_spec(3, 1), rng);
  const ldct::TensorF input = random_tensor({batch, 1, edge, edge}, rng);
  const ldct::TensorF target = random_tensor({batch, 1, edge, edge}, rng);
  ldct::TrainConfig config;
  config.total_iterations = 1;
  std::vector<ldct::Parameter<float>*> params = net.parameters();
  ldct::AdamState<float> adam;
  for (auto _ : state) {
    const ldct::TensorF out = net.forward(input);
    ldct::LossResult<float> loss = ldct::l2_loss(out, target);
    net.backward(loss.prediction_grad);
    ldct::adam_step(params, adam, config);
    benchmark::DoNotOptimize(loss.loss);
  }
}
BENCHMARK(BM_TrainingIteration)->Args({16, 16})->Args({20, 20})->Unit(benchmark::kMillisecond);

void BM_BatchNormForward(benchmark::State& state) {
  ldct::Rng rng(7);
  const ldct::TensorF input = random_tensor({16, 64, 16, 16}, rng);
  ldct::BatchNormState<float> bn(64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ldct::batchnorm_forward(input, bn, ldct::Mode::training));
  }
}
BENCHMARK(BM_BatchNormForward);

}  // namespace
