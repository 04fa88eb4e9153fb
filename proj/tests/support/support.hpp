// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the test binaries: fixture paths, synthetic models, oracle files.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wnprobe/corpus.hpp"
#include "wnprobe/weights.hpp"

namespace wnprobe::test {

std::filesystem::path fixtures_dir();
std::filesystem::path fixture(const std::string& relative);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Small plain-MLP decoder (learned positions, LayerNorm, biases).
ModelConfig tiny_config(Activation act = Activation::gelu_exact, MlpStyle style = MlpStyle::plain);

// Gaussian weights for every required tensor; norm gains near 1.
WeightSet random_weights(const ModelConfig& config, std::uint64_t seed, float scale = 0.2f);

Corpus make_corpus(std::vector<TokenId> ids, std::vector<std::uint64_t> doc_starts, std::size_t vocab,
                   const std::string& name = "synthetic");

// Pseudo-random token stream in [1, vocab).
std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed);

// Layer-0 neuron `kBimodalRow` of this model sits at one of two strictly
// negative levels (about -7 and -13) depending on the parity of the token.
inline constexpr std::uint32_t kBimodalRow = 3;
WeightSet bimodal_negative_model();

std::vector<float> read_f32(const std::filesystem::path& path);
std::vector<double> read_f64(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// max |a - b| / max |b|
double max_relative_error(std::span<const float> a, std::span<const float> b);

}  // namespace wnprobe::test
