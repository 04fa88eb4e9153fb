// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>

#include "support.hpp"
#include "wnprobe/activation.hpp"
#include "wnprobe/error.hpp"
#include "wnprobe/eval.hpp"
#include "wnprobe/model.hpp"
#include "wnprobe/safetensors.hpp"

using namespace wnprobe;
using namespace wnprobe::test;

namespace {

// Keeps the raw pre-activation and input buffers of each layer for one pass.
struct SiteDump : ActivationObserver {
  std::map<std::size_t, std::vector<float>> preact, input;
  void observe(const PreactivationSite& site) override {
    preact[site.layer].assign(site.preact.begin(), site.preact.end());
    input[site.layer].assign(site.input.begin(), site.input.end());
  }
};

TokenSequence sequence_of(const nlohmann::json& ids) {
  TokenSequence seq;
  for (const auto& v : ids) seq.ids.push_back(v.get<TokenId>());
  return seq;
}

std::vector<float> flatten(const std::map<std::size_t, std::vector<float>>& per_layer) {
  std::vector<float> out;
  for (const auto& [layer, values] : per_layer) out.insert(out.end(), values.begin(), values.end());
  return out;
}

struct Loaded {
  ModelManifest manifest;
  WeightSet weights;
  explicit Loaded(const std::filesystem::path& path)
      : manifest(read_model_manifest(path)), weights(load_model(manifest)) {}
};

void check_parity(const std::string& dir) {
  CAPTURE(dir);
  const auto oracle = read_json(fixture(dir + "/oracle.json"));
  Loaded loaded(fixture(dir + "/model.json"));
  const Model model(loaded.weights);

  SiteDump dump;
  HookSet hooks;
  hooks.observers.push_back(&dump);
  const auto result = model.forward(sequence_of(oracle["fixed_input"]), hooks);

  const auto logits = read_f32(fixture(dir + "/" + oracle["logits"]["file"].get<std::string>()));
  REQUIRE(result.logits.size() == logits.size());
  CHECK(max_relative_error(result.logits, logits) <= 1e-4);

  const auto preact = read_f32(fixture(dir + "/" + oracle["preact"]["file"].get<std::string>()));
  const auto ours_pre = flatten(dump.preact);
  REQUIRE(ours_pre.size() == preact.size());
  CHECK(max_relative_error(ours_pre, preact) <= 1e-4);

  const auto mlp_input = read_f32(fixture(dir + "/" + oracle["mlp_input"]["file"].get<std::string>()));
  const auto ours_in = flatten(dump.input);
  REQUIRE(ours_in.size() == mlp_input.size());
  CHECK(max_relative_error(ours_in, mlp_input) <= 1e-4);

  const Corpus corpus = load_corpus(fixture(dir + "/" + oracle["corpus"].get<std::string>()));
  const auto stream = token_nll(model, corpus, plan_windows(corpus, model.config().context_length));
  const auto nll = read_f64(fixture(dir + "/" + oracle["nll"]["file"].get<std::string>()));
  REQUIRE(stream.nll.size() == oracle["nll"]["count"].get<std::size_t>());
  REQUIRE(stream.nll.size() == nll.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < nll.size(); ++i) worst = std::max(worst, std::fabs(stream.nll[i] - nll[i]) / std::fabs(nll[i]));
  CHECK(worst <= 1e-4);
  const double mean = oracle["nll"]["mean"].get<double>();
  CHECK(std::fabs(stream.mean() - mean) / mean <= 1e-4);

  std::vector<TokenId> sentence;
  for (const auto& v : oracle["sentence"]["ids"]) sentence.push_back(v.get<TokenId>());
  const double lp = oracle["sentence"]["logprob"].get<double>();
  CHECK(std::fabs(sentence_logprob(model, sentence) - lp) / std::fabs(lp) <= 1e-4);
}

std::map<std::string, Tensor> tensors_of(const ModelConfig& c) { return random_weights(c, 3).tensors(); }

}  // namespace

TEST_CASE("activation functions") {
  CHECK(activation(Activation::gelu_exact, 0.0) == 0.0);
  CHECK(activation(Activation::relu, -3.2) == 0.0);
  CHECK(activation(Activation::relu, 2.5) == 2.5);
  CHECK(activation(Activation::silu, -1.0) == doctest::Approx(-1.0 / (1.0 + std::exp(1.0))).epsilon(1e-12));
  CHECK(activation(Activation::silu, -1.0) == doctest::Approx(-0.26894).epsilon(1e-4));
  // a * Phi(a) with Phi from the complementary error function
  for (double a : {-3.0, -0.7, 0.4, 2.2}) {
    CHECK(activation(Activation::gelu_exact, a) == doctest::Approx(a * 0.5 * std::erfc(-a / std::sqrt(2.0))));
    CHECK(std::fabs(activation(Activation::gelu_tanh, a) - activation(Activation::gelu_exact, a)) < 1e-3);
  }
}

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());

  auto bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.d_mlp = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.position_encoding = PositionEncoding::rotary;
  bad.rotary_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.rotary_fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);

  // rotary_fraction is only read for rotary models
  bad = c;
  bad.rotary_fraction = 7.0;
  CHECK_NOTHROW(bad.validate());

  const auto round = config_from_json(config_to_json(c));
  CHECK(config_to_json(round) == config_to_json(c));
  CHECK_THROWS_AS(parse_activation("swish"), Error);
}

TEST_CASE("safetensors round trip and half precision") {
  TempDir dir;
  std::map<std::string, Tensor> tensors;
  tensors.emplace("a", Tensor({2, 3}, {1, 2, 3, 4, 5, -6.5f}));
  tensors.emplace("b", Tensor({4}, {0.25f, -1e-3f, 7, 0}));
  write_safetensors(dir / "t.safetensors", tensors);
  const auto back = read_safetensors(dir / "t.safetensors");
  REQUIRE(back.size() == 2);
  CHECK(back.at("a").shape == tensors.at("a").shape);
  CHECK(back.at("a").data == tensors.at("a").data);
  CHECK(back.at("b").data == tensors.at("b").data);

  // F16: 1.0 = 0x3C00, -2.0 = 0xC000, 0.5 = 0x3800, smallest subnormal = 0x0001
  const std::string header = R"({"h":{"dtype":"F16","shape":[4],"data_offsets":[0,8]}})";
  const std::uint64_t len = header.size();
  const std::uint16_t halves[4] = {0x3C00, 0xC000, 0x3800, 0x0001};
  {
    std::ofstream out(dir / "h.safetensors", std::ios::binary);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(halves), sizeof(halves));
  }
  const auto h = read_safetensors(dir / "h.safetensors");
  CHECK(h.at("h").data == std::vector<float>{1.0f, -2.0f, 0.5f, std::ldexp(1.0f, -24)});
  CHECK(half_to_float(0x7BFF) == 65504.0f);
  CHECK(bfloat16_to_float(0x3F80) == 1.0f);

  std::ofstream(dir / "junk.safetensors") << "xx";
  CHECK_THROWS_AS(read_safetensors(dir / "junk.safetensors"), Error);
}

TEST_CASE("weight validation names the offending tensor") {
  const ModelConfig c = tiny_config();
  CHECK_NOTHROW(validate_tensors(c, tensors_of(c)));

  auto missing = tensors_of(c);
  missing.erase("layer.0.mlp.up");
  try {
    validate_tensors(c, missing);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 2);
    CHECK(std::string(e.what()).find("layer.0.mlp.up") != std::string::npos);
  }

  auto shape = tensors_of(c);
  shape["layer.1.mlp.down"] = Tensor({3, 3}, std::vector<float>(9, 0.0f));
  try {
    validate_tensors(c, shape);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layer.1.mlp.down") != std::string::npos);
    CHECK(msg.find("expected") != std::string::npos);
  }

  auto nan = tensors_of(c);
  nan["final_norm"].data[2] = std::nanf("");
  CHECK_THROWS_WITH_AS(validate_tensors(c, nan), doctest::Contains("final_norm"), Error);

  const ModelConfig glu = tiny_config(Activation::silu, MlpStyle::glu);
  auto no_gate = tensors_of(glu);
  no_gate.erase("layer.1.mlp.gate");
  CHECK_THROWS_WITH_AS(validate_tensors(glu, no_gate), doctest::Contains("layer.1.mlp.gate"), Error);
}

TEST_CASE("manifest loading verifies the container checksum") {
  TempDir dir;
  const WeightSet w = random_weights(tiny_config(), 5);
  save_model(w, dir / "model.json", "test");
  const auto manifest = read_model_manifest(dir / "model.json");
  const WeightSet loaded = load_model(manifest);
  CHECK(loaded.config().d_mlp == 32);
  CHECK(loaded.at("layer.1.mlp.up").data == w.at("layer.1.mlp.up").data);

  auto bytes = read_text(manifest.weights);
  bytes[bytes.size() - 1] ^= 0x01;
  std::ofstream(manifest.weights, std::ios::binary) << bytes;
  CHECK_THROWS_WITH_AS(load_model(read_model_manifest(dir / "model.json")), doctest::Contains("checksum"), Error);
}

TEST_CASE("desk export matches its manifest") {
  const auto manifest = read_model_manifest(fixture("desk/model.json"));
  const WeightSet w = load_model(manifest);
  const auto j = read_json(fixture("desk/model.json"));
  CHECK(w.config().n_layers == j["config"]["n_layers"].get<std::size_t>());
  CHECK(w.config().d_mlp == j["config"]["d_mlp"].get<std::size_t>());
  CHECK(w.config().activation == Activation::gelu_exact);
}

TEST_CASE("forward parity against exported oracles") {
  for (const char* dir : {"micro_neox", "micro_llama", "micro_gpt2"}) check_parity(dir);
}

TEST_CASE("forward parity on the desk model") { check_parity("desk"); }

TEST_CASE("forward rejects bad sequences") {
  const WeightSet w = random_weights(tiny_config(), 1);
  const Model model(w);
  TokenSequence seq;
  CHECK_THROWS_AS(model.forward(seq), Error);
  seq.ids = {1, 2, 32};
  CHECK_THROWS_WITH_AS(model.forward(seq), doctest::Contains("outside the vocabulary"), Error);
  seq.ids.assign(17, 1);
  CHECK_THROWS_WITH_AS(model.forward(seq), doctest::Contains("context length"), Error);
}

TEST_CASE("causality: future tokens never change past logits") {
  for (auto style : {MlpStyle::plain, MlpStyle::glu}) {
    ModelConfig c = tiny_config(style == MlpStyle::glu ? Activation::silu : Activation::gelu_exact, style);
    c.position_encoding = style == MlpStyle::glu ? PositionEncoding::rotary : PositionEncoding::learned;
    c.norm_style = style == MlpStyle::glu ? NormStyle::pre_rmsnorm : NormStyle::pre_layernorm;
    c.linear_bias = style != MlpStyle::glu;
    const WeightSet w = random_weights(c, 21);
    const Model model(w);
    TokenSequence base;
    base.ids = {3, 9, 1, 27, 14, 5};
    const auto ref = model.forward(base);
    for (std::size_t t = 0; t < base.ids.size(); ++t) {
      for (TokenId v = 0; v < c.vocab_size; v += 5) {
        TokenSequence changed = base;
        changed.ids[t] = v;
        const auto out = model.forward(changed);
        for (std::size_t p = 0; p < t; ++p) {
          CHECK(std::memcmp(out.logits_at(p).data(), ref.logits_at(p).data(), c.vocab_size * sizeof(float)) == 0);
        }
      }
    }
  }
}

TEST_CASE("hooks are transparent and forward is deterministic") {
  const WeightSet w = random_weights(tiny_config(), 2);
  const Model model(w);
  TokenSequence seq;
  seq.ids = {4, 8, 15, 16, 23, 2};
  const auto plain = model.forward(seq);
  CHECK_FALSE(plain.captured.has_value());
  CHECK(plain.logits.size() == seq.ids.size() * 32);

  const AblationSpec empty;
  SiteDump dump;
  HookSet hooks;
  hooks.ablation = &empty;
  hooks.observers.push_back(&dump);
  hooks.capture = {{0, Projection::up, 5}, {1, Projection::up, 31}};
  const auto hooked = model.forward(seq, hooks);
  CHECK(hooked.logits == plain.logits);
  REQUIRE(hooked.captured.has_value());
  CHECK(hooked.captured->size() == 2);
  const auto& row5 = hooked.captured->at({0, Projection::up, 5});
  for (std::size_t t = 0; t < seq.ids.size(); ++t) CHECK(row5[t] == dump.preact[0][t * 32 + 5]);

  CHECK(model.forward(seq).logits == plain.logits);
}

TEST_CASE("uniform logits give perplexity equal to the vocabulary size") {
  ModelConfig c = tiny_config();
  auto t = random_weights(c, 4).tensors();
  std::fill(t["unembed"].data.begin(), t["unembed"].data.end(), 0.0f);
  const WeightSet w(c, std::move(t));
  const Model model(w);
  const Corpus corpus = make_corpus(random_tokens(50, 32, 9), {0, 20}, 32);
  CHECK(perplexity(model, corpus) == doctest::Approx(32.0).epsilon(1e-9));
}
