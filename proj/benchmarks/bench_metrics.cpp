// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "wnprobe/metrics.hpp"

namespace {

std::vector<double> gaussian(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<double> x(n);
  for (auto& e : x) e = normal(rng);
  return x;
}

void BM_Normalize(benchmark::State& state) {
  const auto x = gaussian(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(wnprobe::normalize(x).values.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Normalize)->RangeMultiplier(10)->Range(1000, 1000000);

void BM_WassersteinToGaussian(benchmark::State& state) {
  const auto ns = wnprobe::normalize(gaussian(static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(wnprobe::wd_to_gaussian(ns));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_WassersteinToGaussian)->RangeMultiplier(10)->Range(1000, 1000000);

void BM_MappingDifficulty(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto in = gaussian(n), out = gaussian(n);
  for (auto& e : in) e = std::fabs(e) + 0.01;
  for (auto& e : out) e = std::fabs(e);
  for (auto _ : state) benchmark::DoNotOptimize(wnprobe::mapping_difficulty(in, out).md);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MappingDifficulty)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
