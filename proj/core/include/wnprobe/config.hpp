// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace wnprobe {

enum class Activation { gelu_exact, gelu_tanh, silu, relu };
enum class MlpStyle { plain, glu };
enum class ResidualTopology { serial, parallel };
enum class PositionEncoding { learned, rotary };
enum class NormStyle { pre_layernorm, pre_rmsnorm };

std::string_view to_string(Activation v);
std::string_view to_string(MlpStyle v);
std::string_view to_string(ResidualTopology v);
std::string_view to_string(PositionEncoding v);
std::string_view to_string(NormStyle v);

Activation parse_activation(std::string_view s);
MlpStyle parse_mlp_style(std::string_view s);
ResidualTopology parse_residual_topology(std::string_view s);
PositionEncoding parse_position_encoding(std::string_view s);
NormStyle parse_norm_style(std::string_view s);

// Architecture descriptor of a decoder-only transformer.
struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 1;
  std::size_t d_mlp = 1;
  std::size_t n_heads = 1;
  std::size_t n_kv_heads = 0;  // 0 means n_heads
  std::size_t vocab_size = 1;
  Activation activation = Activation::gelu_exact;
  MlpStyle mlp_style = MlpStyle::plain;
  ResidualTopology residual_topology = ResidualTopology::serial;
  PositionEncoding position_encoding = PositionEncoding::learned;
  double rotary_fraction = 1.0;
  double rope_theta = 10000.0;
  NormStyle norm_style = NormStyle::pre_layernorm;
  double norm_eps = 1e-5;
  std::size_t context_length = 1;
  bool linear_bias = false;
  bool tie_embeddings = false;
  std::uint32_t bos_token_id = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t kv_heads() const { return n_kv_heads == 0 ? n_heads : n_kv_heads; }
  std::size_t rotary_dim() const;

  // Throws input_error on any violated invariant.
  void validate() const;
};

ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ModelConfig& c);

}  // namespace wnprobe
