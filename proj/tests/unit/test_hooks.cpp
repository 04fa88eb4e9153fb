// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <mutex>
#include <random>

#include "support.hpp"
#include "wnprobe/capture.hpp"
#include "wnprobe/error.hpp"
#include "wnprobe/model.hpp"

using namespace wnprobe;
using namespace wnprobe::test;

namespace {

NeuronId up(std::uint32_t layer, std::uint32_t row) { return {layer, Projection::up, row}; }

struct PostDump : ActivationObserver {
  std::map<std::size_t, std::vector<float>> post;
  void observe(const PreactivationSite&) override {}
  void observe_post(std::size_t layer, const TokenSequence&, std::span<const float> values) override {
    post[layer].assign(values.begin(), values.end());
  }
};

struct PreDump : ActivationObserver {
  std::map<std::size_t, std::vector<float>> pre;
  void observe(const PreactivationSite& site) override { pre[site.layer].assign(site.preact.begin(), site.preact.end()); }
};

AblationSpec all_rows(const ModelConfig& c) {
  AblationSpec spec;
  for (std::uint32_t l = 0; l < c.n_layers; ++l) {
    for (std::uint32_t r = 0; r < c.d_mlp; ++r) spec.neurons.insert(up(l, r));
  }
  return spec;
}

TokenSequence seq_of(std::vector<TokenId> ids) {
  TokenSequence s;
  s.ids = std::move(ids);
  return s;
}

}  // namespace

TEST_CASE("apply_ablation examples") {
  AblationSpec s;
  s.neurons = {up(0, 1)};
  std::vector<float> a{0.5f, -0.3f};
  apply_ablation(a, 0, s);
  CHECK(a == std::vector<float>{0.5f, 0.0f});

  std::vector<float> b{0.5f, -0.3f};
  apply_ablation(b, 0, AblationSpec{});
  CHECK(b == std::vector<float>{0.5f, -0.3f});

  AblationSpec every;
  every.neurons = {up(2, 0), up(2, 1), up(2, 2)};
  std::vector<float> c{-1, -2, -3};
  apply_ablation(c, 2, every);
  CHECK(c == std::vector<float>{0, 0, 0});

  // other layers and masked-out layers are untouched
  std::vector<float> d{-1, -2, -3};
  apply_ablation(d, 1, every);
  CHECK(d == std::vector<float>{-1, -2, -3});
  every.layer_mask = std::set<std::size_t>{0};
  apply_ablation(d, 2, every);
  CHECK(d == std::vector<float>{-1, -2, -3});

  // zero and negative zero stay as they are
  std::vector<float> z{0.0f, -0.0f};
  AblationSpec both;
  both.neurons = {up(0, 0), up(0, 1)};
  apply_ablation(z, 0, both);
  CHECK(std::signbit(z[1]));
}

TEST_CASE("ablation properties over random vectors") {
  std::mt19937_64 rng(17);
  std::normal_distribution<float> normal(0.0f, 2.0f);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<float> a(n);
    for (auto& v : a) v = normal(rng);
    if (trial % 7 == 0) a[rng() % n] = 0.0f;
    AblationSpec s;
    for (std::uint32_t r = 0; r < n; ++r) {
      if (rng() % 3 == 0) s.neurons.insert(up(0, r));
    }
    auto once = a;
    apply_ablation(once, 0, s);
    auto twice = once;
    apply_ablation(twice, 0, s);
    CHECK(std::memcmp(once.data(), twice.data(), n * sizeof(float)) == 0);
    for (std::uint32_t r = 0; r < n; ++r) {
      if (s.neurons.count(up(0, r))) {
        CHECK(once[r] == std::max(a[r], 0.0f));
      } else {
        CHECK(std::memcmp(&once[r], &a[r], sizeof(float)) == 0);
      }
      if (a[r] >= 0.0f) CHECK(once[r] >= 0.0f);
    }
  }
}

TEST_CASE("ablation spec validation") {
  const ModelConfig c = tiny_config();
  AblationSpec s;
  s.neurons = {up(2, 0)};
  CHECK_THROWS_AS(s.validate(c), Error);
  s.neurons = {up(0, 32)};
  CHECK_THROWS_AS(s.validate(c), Error);
  s.neurons = {{0, Projection::gate, 1}};
  CHECK_THROWS_AS(s.validate(c), Error);
  s.neurons = {up(1, 31)};
  s.layer_mask = std::set<std::size_t>{0, 2};
  CHECK_THROWS_AS(s.validate(c), Error);
  s.layer_mask = std::set<std::size_t>{0, 1};
  CHECK_NOTHROW(s.validate(c));
}

TEST_CASE("empty ablation is bit-exact on the micro fixtures") {
  for (const char* dir : {"micro_neox", "micro_llama", "micro_gpt2"}) {
    const auto manifest = read_model_manifest(fixture(std::string(dir) + "/model.json"));
    const WeightSet w = load_model(manifest);
    const Model model(w);
    const auto oracle = read_json(fixture(std::string(dir) + "/oracle.json"));
    TokenSequence seq;
    for (const auto& v : oracle["fixed_input"]) seq.ids.push_back(v.get<TokenId>());
    const AblationSpec empty;
    HookSet hooks;
    hooks.ablation = &empty;
    const auto a = model.forward(seq);
    const auto b = model.forward(seq, hooks);
    CHECK(std::memcmp(a.logits.data(), b.logits.data(), a.logits.size() * sizeof(float)) == 0);

    // a non-empty set does change something on these smooth-activation models
    AblationSpec full;
    for (const auto& n : all_rows(w.config()).neurons) {
      full.neurons.insert({n.layer, preactivation_projection(w.config()), n.row});
    }
    hooks.ablation = &full;
    CHECK(model.forward(seq, hooks).logits != a.logits);
  }
}

TEST_CASE("negative clamp is a no-op through ReLU") {
  ModelConfig c = tiny_config(Activation::relu);
  const WeightSet w = random_weights(c, 31, 0.5f);
  const Model model(w);
  const auto seq = seq_of({1, 5, 9, 2, 30, 17, 8, 8, 3, 11, 26, 4});
  PostDump plain_post;
  HookSet plain;
  plain.observers.push_back(&plain_post);
  const auto ref = model.forward(seq, plain);

  PreDump pre;
  HookSet probe;
  probe.observers.push_back(&pre);
  model.forward(seq, probe);
  std::size_t negatives = 0;
  for (const auto& [l, v] : pre.pre) negatives += static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](float x) { return x < 0; }));
  REQUIRE(negatives > 0);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    AblationSpec s = trial == 0 ? all_rows(c) : AblationSpec{};
    if (trial > 0) {
      for (std::uint32_t l = 0; l < c.n_layers; ++l) {
        for (std::uint32_t r = 0; r < c.d_mlp; ++r) {
          if (rng() % 2) s.neurons.insert(up(l, r));
        }
      }
    }
    PostDump post;
    HookSet hooks;
    hooks.ablation = &s;
    hooks.observers.push_back(&post);
    const auto out = model.forward(seq, hooks);
    for (const auto& [l, v] : plain_post.post) {
      CHECK(std::memcmp(v.data(), post.post[l].data(), v.size() * sizeof(float)) == 0);
    }
    CHECK(std::memcmp(out.logits.data(), ref.logits.data(), ref.logits.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("capture records pre-ablation values") {
  const WeightSet w = bimodal_negative_model();
  const Model model(w);
  const auto seq = seq_of({2, 3, 4, 5, 6, 7});
  const AblationSpec total = all_rows(w.config());
  HookSet hooks;
  hooks.ablation = &total;
  hooks.capture = {up(0, kBimodalRow)};
  const auto out = model.forward(seq, hooks);
  const auto& values = out.captured->at(up(0, kBimodalRow));
  REQUIRE(values.size() == seq.ids.size());
  for (float v : values) CHECK(v < -5.0f);
}

TEST_CASE("capture over a small corpus") {
  const WeightSet w = random_weights(tiny_config(), 8);
  const Model model(w);
  const Corpus corpus = make_corpus(random_tokens(10, 32, 1), {0}, 32);

  CaptureSpec spec;
  spec.neurons = {up(1, 4)};
  spec.reservoir_limit = 10;
  const TraceSet full = capture(model, corpus, spec);
  CHECK(full.corpus_checksum == corpus.checksum);
  const auto trace = full.trace(up(1, 4));
  REQUIRE(trace.size() == 10);
  for (std::size_t s = 0; s < 10; ++s) {
    CHECK(trace.layer->index[s] == s);
    CHECK(trace.layer->token[s] == corpus.ids[s]);
  }
  CHECK_THROWS_AS(full.trace(up(0, 4)), Error);

  // direct forward agrees with the streamed values
  HookSet hooks;
  hooks.capture = {up(1, 4)};
  TokenSequence seq;
  seq.ids = corpus.ids;
  const auto direct = model.forward(seq, hooks).captured->at(up(1, 4));
  CHECK(std::equal(direct.begin(), direct.end(), trace.values.begin()));

  spec.reservoir_limit = 5;
  const TraceSet a = capture(model, corpus, spec);
  const TraceSet b = capture(model, corpus, spec, 3);
  REQUIRE(a.layers[0].samples() == 5);
  CHECK(a.layers[0].index == b.layers[0].index);
  CHECK(a.layers[0].values == b.layers[0].values);
  CHECK(std::is_sorted(a.layers[0].index.begin(), a.layers[0].index.end()));

  // the kept indices are the five smallest seeded keys
  std::vector<std::pair<std::uint64_t, std::uint64_t>> keys;
  for (std::uint64_t g = 0; g < 10; ++g) keys.emplace_back(sample_key(spec.seed, g), g);
  std::sort(keys.begin(), keys.end());
  std::vector<std::uint64_t> expect;
  for (std::size_t i = 0; i < 5; ++i) expect.push_back(keys[i].second);
  std::sort(expect.begin(), expect.end());
  CHECK(a.layers[0].index == expect);

  spec.seed = 99;
  const TraceSet c = capture(model, corpus, spec);
  CHECK(c.layers[0].samples() == 5);
}

TEST_CASE("reservoir does not depend on window arrival order") {
  const WeightSet w = random_weights(tiny_config(), 8);
  const Model model(w);
  const Corpus corpus = make_corpus(random_tokens(300, 32, 4), {0, 40, 41, 170}, 32);
  CaptureSpec spec;
  spec.wildcard_layers = {0};
  spec.reservoir_limit = 37;
  spec.seed = 5;
  const WindowPlan plan = coverage_plan(corpus, 16);
  std::size_t covered = 0;
  for (const auto& win : plan.windows) covered += win.size();
  CHECK(covered == corpus.size());

  auto run = [&](std::vector<std::size_t> order) {
    TraceCollector collector(spec, model.config());
    HookSet hooks;
    hooks.observers.push_back(&collector);
    for (auto wi : order) model.forward(plan.sequence(corpus, wi), hooks);
    return collector.drain(corpus.checksum);
  };
  std::vector<std::size_t> order(plan.windows.size());
  std::iota(order.begin(), order.end(), 0);
  const TraceSet forward = run(order);
  std::reverse(order.begin(), order.end());
  const TraceSet backward = run(order);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(2));
  const TraceSet shuffled = run(order);
  CHECK(forward.layers[0].index == backward.layers[0].index);
  CHECK(forward.layers[0].values == backward.layers[0].values);
  CHECK(forward.layers[0].index == shuffled.layers[0].index);
  CHECK(forward.layers[0].doc == shuffled.layers[0].doc);
  CHECK(forward.layers[0].rows.size() == 32);
}

TEST_CASE("capture spec errors") {
  const ModelConfig c = tiny_config();
  CaptureSpec spec;
  spec.neurons = {up(0, 1)};
  spec.reservoir_limit = 0;
  CHECK_THROWS_AS(spec.validate(c), Error);
  spec.reservoir_limit = 10;
  spec.wildcard_layers = {1};
  spec.what = CaptureWhat::input_vector_and_scalar;
  CHECK_THROWS_AS(spec.validate(c), Error);
  spec.wildcard_layers.clear();
  CHECK_NOTHROW(spec.validate(c));
  spec.wildcard_layers = {2};
  spec.what = CaptureWhat::preactivation_scalar;
  CHECK_THROWS_AS(spec.validate(c), Error);
  CHECK_THROWS_AS(CaptureSpec{}.validate(c), Error);
}

TEST_CASE("captured scalar equals the projection of the captured input") {
  for (const char* dir : {"micro_gpt2", "micro_llama"}) {
    const auto manifest = read_model_manifest(fixture(std::string(dir) + "/model.json"));
    const WeightSet w = load_model(manifest);
    const Model model(w);
    const Corpus corpus = load_corpus(fixture(std::string(dir) + "/corpus.json"));
    const Projection proj = preactivation_projection(w.config());
    CaptureSpec spec;
    spec.what = CaptureWhat::input_vector_and_scalar;
    spec.neurons = {{0, proj, 3}, {1, proj, 17}, {1, proj, 40}};
    const TraceSet traces = capture(model, corpus, spec);
    for (const auto& n : spec.neurons) {
      const auto tr = traces.trace(n);
      const std::string name = "layer." + std::to_string(n.layer) + ".mlp." + std::string(to_string(proj));
      const auto row = w.at(name).row(n.row);
      const Tensor* bias = w.find(name + ".bias");
      REQUIRE(tr.layer->has_inputs());
      for (std::size_t s = 0; s < tr.size(); ++s) {
        const auto x = tr.layer->input_at(s);
        double dot = bias ? bias->data[n.row] : 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) dot += static_cast<double>(row[i]) * x[i];
        CHECK(std::fabs(dot - tr.values[s]) <= 1e-5);
      }
    }
  }
}

TEST_CASE("point capture keeps whole rows at the requested indices") {
  const WeightSet w = random_weights(tiny_config(), 12);
  const Model model(w);
  const Corpus corpus = make_corpus(random_tokens(60, 32, 6), {0, 25}, 32);
  PointCollector points({0, 1}, {59, 3, 26, 3}, model.config());
  HookSet hooks;
  hooks.observers.push_back(&points);
  run_windows(model, corpus, coverage_plan(corpus, 16), hooks, 1);
  const TraceSet t = points.drain();
  REQUIRE(t.layers.size() == 2);
  CHECK(t.layers[1].index == std::vector<std::uint64_t>{3, 26, 59});
  CHECK(t.layers[1].doc == std::vector<std::uint32_t>{0, 1, 1});
  CHECK(t.layers[1].token[2] == corpus.ids[59]);
  CHECK(t.layers[0].values.size() == 32 * 3);

  PointCollector missing({0}, {1000}, model.config());
  CHECK_THROWS_AS(missing.drain(), Error);
}

TEST_CASE("trace and side files round trip") {
  TempDir dir;
  const WeightSet w = random_weights(tiny_config(), 8);
  const Model model(w);
  const Corpus corpus = make_corpus(random_tokens(40, 32, 2), {0}, 32);
  CaptureSpec spec;
  spec.what = CaptureWhat::input_vector_and_scalar;
  spec.neurons = {up(0, 2), up(0, 9), up(1, 0)};
  spec.reservoir_limit = 30;
  const TraceSet traces = capture(model, corpus, spec);

  write_trace_file(dir / "t.bin", traces);
  const auto records = read_trace_file(dir / "t.bin");
  REQUIRE(records.size() == 3);
  for (const auto& rec : records) {
    const auto tr = traces.trace(rec.neuron);
    CHECK(rec.corpus_checksum == corpus.checksum);
    CHECK(rec.index == tr.layer->index);
    CHECK(std::equal(rec.values.begin(), rec.values.end(), tr.values.begin(), tr.values.end()));
  }

  write_input_side_file(dir / "x.bin", traces.layers[0]);
  const LayerTrace back = read_input_side_file(dir / "x.bin");
  CHECK(back.index == traces.layers[0].index);
  CHECK(back.inputs == traces.layers[0].inputs);
  CHECK(back.input_dim == 16);

  std::ofstream(dir / "bad.bin") << "NOTATRACEFILE";
  CHECK_THROWS_AS(read_trace_file(dir / "bad.bin"), Error);
  CHECK_THROWS_AS(read_input_side_file(dir / "bad.bin"), Error);
}
