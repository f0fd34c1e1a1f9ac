#include <benchmark/benchmark.h>

#include "ldct/ctsim.hpp"
#include "ldct/metrics.hpp"
#include "ldct/rng.hpp"

namespace {

void BM_Radon(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const ldct::TensorF phantom = ldct::shepp_logan(size);
  const auto n_det = static_cast<std::size_t>(size * 1.5) | 1u;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ldct::radon(phantom, 180, n_det));
  }
}
BENCHMARK(BM_Radon)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Fbp(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const ldct::TensorF phantom = ldct::shepp_logan(size);
  const auto n_det = static_cast<std::size_t>(size * 1.5) | 1u;
  const ldct::Sinogram sino = ldct::radon(phantom, 180, n_det);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ldct::fbp(sino, size));
  }
}
BENCHMARK(BM_Fbp)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_PoissonDose(benchmark::State& state) {
  const ldct::TensorF phantom = ldct::shepp_logan(128);
  const ldct::Sinogram sino = ldct::radon(phantom, 180, 193);
  const ldct::DoseModel dose{1e5, 0.25};
  ldct::Rng rng(11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ldct::apply_poisson_dose(sino, dose, rng));
  }
}
BENCHMARK(BM_PoissonDose)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  ldct::Rng rng(3);
  ldct::TensorF a(1, 1, size, size);
  ldct::TensorF b(1, 1, size, size);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = static_cast<float>(rng.uniform(-200.0, 300.0));
    b[i] = a[i] + static_cast<float>(rng.uniform(-20.0, 20.0));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(ldct::ssim_hu(a, b));
  }
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
