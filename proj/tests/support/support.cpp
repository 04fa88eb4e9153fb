// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "wnprobe/checksum.hpp"
#include "wnprobe/error.hpp"

namespace wnprobe::test {

std::filesystem::path fixtures_dir() { return WNPROBE_FIXTURES_DIR; }

std::filesystem::path fixture(const std::string& relative) { return fixtures_dir() / relative; }

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("wnprobe-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

ModelConfig tiny_config(Activation act, MlpStyle style) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.d_mlp = 32;
  c.n_heads = 2;
  c.vocab_size = 32;
  c.activation = act;
  c.mlp_style = style;
  c.residual_topology = ResidualTopology::serial;
  c.position_encoding = PositionEncoding::learned;
  c.norm_style = NormStyle::pre_layernorm;
  c.context_length = 16;
  c.linear_bias = true;
  c.bos_token_id = 0;
  return c;
}

WeightSet random_weights(const ModelConfig& config, std::uint64_t seed, float scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::map<std::string, Tensor> tensors;
  for (const auto& spec : required_tensors(config)) {
    Tensor t;
    t.shape = spec.shape;
    t.data.resize(t.numel());
    const bool norm_gain = spec.name.find("norm") != std::string::npos && spec.name.find(".bias") == std::string::npos;
    for (auto& v : t.data) v = norm_gain ? 1.0f + 0.1f * normal(rng) : scale * normal(rng);
    tensors.emplace(spec.name, std::move(t));
  }
  return WeightSet(config, std::move(tensors));
}

Corpus make_corpus(std::vector<TokenId> ids, std::vector<std::uint64_t> doc_starts, std::size_t vocab,
                   const std::string& name) {
  Corpus c;
  c.name = name;
  c.split = "test";
  c.vocab_size = vocab;
  c.ids = std::move(ids);
  c.doc_starts = std::move(doc_starts);
  c.checksum = sha256_bytes(std::string_view(reinterpret_cast<const char*>(c.ids.data()), c.ids.size() * sizeof(TokenId)));
  c.validate();
  return c;
}

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(1 + rng() % (vocab - 1));
  return ids;
}

WeightSet bimodal_negative_model() {
  const ModelConfig c = tiny_config();
  WeightSet base = random_weights(c, 7);
  std::map<std::string, Tensor> t = base.tensors();
  const std::size_t d = c.d_model;
  std::mt19937_64 rng(11);
  std::normal_distribution<float> normal(0.0f, 0.1f);
  for (std::size_t tok = 0; tok < c.vocab_size; ++tok) {
    for (std::size_t i = 0; i < d; ++i) t["embed.tokens"].data[tok * d + i] = normal(rng);
    t["embed.tokens"].data[tok * d] = tok % 2 == 0 ? 2.0f : -2.0f;
  }
  std::fill(t["embed.positions"].data.begin(), t["embed.positions"].data.end(), 0.0f);
  // Attention adds nothing in layer 0, so the MLP sees LayerNorm(embedding).
  std::fill(t["layer.0.attn.o"].data.begin(), t["layer.0.attn.o"].data.end(), 0.0f);
  std::fill(t["layer.0.attn.o.bias"].data.begin(), t["layer.0.attn.o.bias"].data.end(), 0.0f);
  std::fill(t["layer.0.mlp_norm"].data.begin(), t["layer.0.mlp_norm"].data.end(), 1.0f);
  std::fill(t["layer.0.mlp_norm.bias"].data.begin(), t["layer.0.mlp_norm.bias"].data.end(), 0.0f);
  auto& up = t["layer.0.mlp.up"].data;
  std::fill(up.begin() + kBimodalRow * d, up.begin() + (kBimodalRow + 1) * d, 0.0f);
  up[kBimodalRow * d] = 0.8f;
  t["layer.0.mlp.up.bias"].data[kBimodalRow] = -10.0f;
  return WeightSet(c, std::move(t));
}

std::vector<float> read_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open " + path.string());
  std::vector<float> v(std::filesystem::file_size(path) / sizeof(float));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  return v;
}

std::vector<double> read_f64(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open " + path.string());
  std::vector<double> v(std::filesystem::file_size(path) / sizeof(double));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  return v;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double max_relative_error(std::span<const float> a, std::span<const float> b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::fabs(static_cast<double>(a[i]) - b[i]));
    scale = std::max(scale, std::fabs(static_cast<double>(b[i])));
  }
  return diff / scale;
}

}  // namespace wnprobe::test
