// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <filesystem>

#include "wnprobe/eval.hpp"
#include "wnprobe/hooks.hpp"
#include "wnprobe/model.hpp"
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

wnprobe::TokenSequence window(std::size_t n) {
  wnprobe::TokenSequence seq;
  seq.ids.assign(desk().corpus.ids.begin(), desk().corpus.ids.begin() + static_cast<std::ptrdiff_t>(n));
  return seq;
}

void BM_ForwardWindow(benchmark::State& state) {
  const auto seq = window(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(desk().model.forward(seq).logits.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardWindow)->Arg(16)->Arg(64);

// Same window with a 1%-per-layer negative clamp installed.
void BM_ForwardAblated(benchmark::State& state) {
  const auto seq = window(64);
  wnprobe::AblationSpec spec;
  const auto& c = desk().model.config();
  for (std::uint32_t l = 0; l < c.n_layers; ++l) {
    for (std::uint32_t r = 0; r < 5; ++r) spec.neurons.insert({l, wnprobe::Projection::up, r * 97});
  }
  wnprobe::HookSet hooks;
  hooks.ablation = &spec;
  for (auto _ : state) benchmark::DoNotOptimize(desk().model.forward(seq, hooks).logits.data());
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ForwardAblated);

void BM_CorpusPerplexity(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(wnprobe::perplexity(desk().model, desk().corpus, nullptr, 1));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(desk().corpus.ids.size()));
}
BENCHMARK(BM_CorpusPerplexity)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
