// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/config.hpp"

#include <array>
#include <utility>

#include <nlohmann/json.hpp>

#include "wnprobe/error.hpp"

namespace wnprobe {
namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table,
             std::string_view what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  throw input_error("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<std::string_view, Activation>, 4> kActivations{{
    {"gelu_exact", Activation::gelu_exact},
    {"gelu_tanh", Activation::gelu_tanh},
    {"silu", Activation::silu},
    {"relu", Activation::relu},
}};
constexpr std::array<std::pair<std::string_view, MlpStyle>, 2> kMlpStyles{{
    {"plain", MlpStyle::plain},
    {"glu", MlpStyle::glu},
}};
constexpr std::array<std::pair<std::string_view, ResidualTopology>, 2> kTopologies{{
    {"serial", ResidualTopology::serial},
    {"parallel", ResidualTopology::parallel},
}};
constexpr std::array<std::pair<std::string_view, PositionEncoding>, 2> kPositions{{
    {"learned", PositionEncoding::learned},
    {"rotary", PositionEncoding::rotary},
}};
constexpr std::array<std::pair<std::string_view, NormStyle>, 2> kNorms{{
    {"pre_layernorm", NormStyle::pre_layernorm},
    {"pre_rmsnorm", NormStyle::pre_rmsnorm},
}};

std::size_t count_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw input_error(std::string("model config is missing '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw input_error(std::string("model config field '") + key + "' must be a count >= 1");
  }
  return v.get<std::size_t>();
}

}  // namespace

std::string_view to_string(Activation v) { return enum_name(v, kActivations); }
std::string_view to_string(MlpStyle v) { return enum_name(v, kMlpStyles); }
std::string_view to_string(ResidualTopology v) { return enum_name(v, kTopologies); }
std::string_view to_string(PositionEncoding v) { return enum_name(v, kPositions); }
std::string_view to_string(NormStyle v) { return enum_name(v, kNorms); }

Activation parse_activation(std::string_view s) { return parse_enum(s, kActivations, "activation"); }
MlpStyle parse_mlp_style(std::string_view s) { return parse_enum(s, kMlpStyles, "mlp_style"); }
ResidualTopology parse_residual_topology(std::string_view s) {
  return parse_enum(s, kTopologies, "residual_topology");
}
PositionEncoding parse_position_encoding(std::string_view s) {
  return parse_enum(s, kPositions, "position_encoding");
}
NormStyle parse_norm_style(std::string_view s) { return parse_enum(s, kNorms, "norm_style"); }

std::size_t ModelConfig::rotary_dim() const {
  if (position_encoding != PositionEncoding::rotary) return 0;
  auto dim = static_cast<std::size_t>(static_cast<double>(head_dim()) * rotary_fraction);
  return dim - dim % 2;
}

void ModelConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || d_mlp < 1 || n_heads < 1 || vocab_size < 1 || context_length < 1) {
    throw input_error("model config counts must all be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw input_error("d_model (" + std::to_string(d_model) + ") is not divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (n_heads % kv_heads() != 0) throw input_error("n_heads must be a multiple of n_kv_heads");
  if (position_encoding == PositionEncoding::rotary) {
    if (!(rotary_fraction > 0.0 && rotary_fraction <= 1.0)) {
      throw input_error("rotary_fraction must lie in (0, 1]");
    }
    if (rotary_dim() == 0) throw input_error("rotary_fraction leaves no rotary dimensions");
    if (!(rope_theta > 0.0)) throw input_error("rope_theta must be positive");
  }
  if (!(norm_eps > 0.0)) throw input_error("norm_eps must be positive");
  if (bos_token_id >= vocab_size) throw input_error("bos_token_id is outside the vocabulary");
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = count_field(j, "n_layers");
  c.d_model = count_field(j, "d_model");
  c.d_mlp = count_field(j, "d_mlp");
  c.n_heads = count_field(j, "n_heads");
  c.n_kv_heads = j.contains("n_kv_heads") ? count_field(j, "n_kv_heads") : 0;
  c.vocab_size = count_field(j, "vocab_size");
  c.context_length = count_field(j, "context_length");
  c.activation = parse_activation(j.value("activation", "gelu_exact"));
  c.mlp_style = parse_mlp_style(j.value("mlp_style", "plain"));
  c.residual_topology = parse_residual_topology(j.value("residual_topology", "serial"));
  c.position_encoding = parse_position_encoding(j.value("position_encoding", "learned"));
  c.rotary_fraction = j.value("rotary_fraction", 1.0);
  c.rope_theta = j.value("rope_theta", 10000.0);
  c.norm_style = parse_norm_style(j.value("norm_style", "pre_layernorm"));
  c.norm_eps = j.value("norm_eps", 1e-5);
  c.linear_bias = j.value("linear_bias", false);
  c.tie_embeddings = j.value("tie_embeddings", false);
  c.bos_token_id = j.value("bos_token_id", 0u);
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {
      {"n_layers", c.n_layers},
      {"d_model", c.d_model},
      {"d_mlp", c.d_mlp},
      {"n_heads", c.n_heads},
      {"n_kv_heads", c.kv_heads()},
      {"vocab_size", c.vocab_size},
      {"activation", to_string(c.activation)},
      {"mlp_style", to_string(c.mlp_style)},
      {"residual_topology", to_string(c.residual_topology)},
      {"position_encoding", to_string(c.position_encoding)},
      {"rotary_fraction", c.rotary_fraction},
      {"rope_theta", c.rope_theta},
      {"norm_style", to_string(c.norm_style)},
      {"norm_eps", c.norm_eps},
      {"context_length", c.context_length},
      {"linear_bias", c.linear_bias},
      {"tie_embeddings", c.tie_embeddings},
      {"bos_token_id", c.bos_token_id},
  };
}

}  // namespace wnprobe
