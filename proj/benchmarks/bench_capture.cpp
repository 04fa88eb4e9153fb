// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <filesystem>

#include "wnprobe/capture.hpp"
#include "wnprobe/model.hpp"
#include "wnprobe/report.hpp"
#include "wnprobe/weights.hpp"

namespace {

const std::filesystem::path kDesk = std::filesystem::path(WNPROBE_FIXTURES_DIR) / "desk";

struct Desk {
  wnprobe::WeightSet weights = wnprobe::load_model(wnprobe::read_model_manifest(kDesk / "model.json"));
  wnprobe::Corpus corpus = wnprobe::load_corpus(kDesk / "valid.json");
  wnprobe::Model model{weights};
};

Desk& desk() {
  static Desk d;
  return d;
}

// Every row of one layer over the whole corpus; range(0) is the reservoir size, 0 for all tokens.
void BM_CaptureLayer(benchmark::State& state) {
  wnprobe::CaptureSpec spec;
  spec.wildcard_layers = {1};
  if (state.range(0) > 0) spec.reservoir_limit = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto traces = wnprobe::capture(desk().model, desk().corpus, spec, 1);
    benchmark::DoNotOptimize(traces.layers.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(desk().corpus.ids.size()));
}
BENCHMARK(BM_CaptureLayer)->Arg(0)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_ScanWd(benchmark::State& state) {
  wnprobe::ScanOptions o;
  for (auto _ : state) {
    auto report = wnprobe::scan(desk().model, desk().corpus, "bench", o);
    benchmark::DoNotOptimize(report.neurons.data());
  }
}
BENCHMARK(BM_ScanWd)->Unit(benchmark::kMillisecond);

void BM_ScanMd(benchmark::State& state) {
  wnprobe::ScanOptions o;
  o.wd = false;
  o.md = true;
  for (auto _ : state) {
    auto report = wnprobe::scan(desk().model, desk().corpus, "bench", o);
    benchmark::DoNotOptimize(report.neurons.data());
  }
}
BENCHMARK(BM_ScanMd)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
