// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/weights.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "wnprobe/checksum.hpp"
#include "wnprobe/error.hpp"
#include "wnprobe/safetensors.hpp"

namespace wnprobe {

std::vector<TensorSpec> required_tensors(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t kv = c.kv_heads() * c.head_dim();
  const bool norm_bias = c.norm_style == NormStyle::pre_layernorm;
  std::vector<TensorSpec> out;
  auto norm = [&](const std::string& name) {
    out.push_back({name, {d}});
    if (norm_bias) out.push_back({name + ".bias", {d}});
  };
  auto linear = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    out.push_back({name, {rows, cols}});
    if (c.linear_bias) out.push_back({name + ".bias", {rows}});
  };

  out.push_back({"embed.tokens", {c.vocab_size, d}});
  if (c.position_encoding == PositionEncoding::learned) out.push_back({"embed.positions", {c.context_length, d}});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    norm(p + "attn_norm");
    linear(p + "attn.q", d, d);
    linear(p + "attn.k", kv, d);
    linear(p + "attn.v", kv, d);
    linear(p + "attn.o", d, d);
    norm(p + "mlp_norm");
    linear(p + "mlp.up", c.d_mlp, d);
    if (c.mlp_style == MlpStyle::glu) linear(p + "mlp.gate", c.d_mlp, d);
    linear(p + "mlp.down", d, c.d_mlp);
  }
  norm("final_norm");
  if (!c.tie_embeddings) out.push_back({"unembed", {c.vocab_size, d}});
  return out;
}

void validate_tensors(const ModelConfig& config, const std::map<std::string, Tensor>& tensors) {
  config.validate();
  for (const auto& spec : required_tensors(config)) {
    auto it = tensors.find(spec.name);
    if (it == tensors.end()) throw input_error("missing tensor '" + spec.name + "'");
    const Tensor& t = it->second;
    if (t.shape != spec.shape) {
      throw input_error("shape mismatch for tensor '" + spec.name + "': expected " + shape_string(spec.shape) +
                        ", found " + shape_string(t.shape));
    }
    if (t.data.size() != t.numel()) throw input_error("tensor '" + spec.name + "' has inconsistent storage");
    for (float v : t.data) {
      if (!std::isfinite(v)) throw input_error("tensor '" + spec.name + "' contains non-finite values");
    }
  }
}

WeightSet::WeightSet(ModelConfig config, std::map<std::string, Tensor> tensors)
    : config_(std::move(config)), tensors_(std::move(tensors)) {
  validate_tensors(config_, tensors_);
}

const Tensor& WeightSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw input_error("missing tensor '" + name + "'");
  return it->second;
}

const Tensor* WeightSet::find(const std::string& name) const {
  auto it = tensors_.find(name);
  return it == tensors_.end() ? nullptr : &it->second;
}

WeightSet load_weights(const std::filesystem::path& container, const ModelConfig& config,
                       const std::map<std::string, std::string>& tensor_map) {
  auto stored = read_safetensors(container);
  std::map<std::string, Tensor> canonical;
  for (const auto& spec : required_tensors(config)) {
    auto mapped = tensor_map.find(spec.name);
    const std::string& source = mapped == tensor_map.end() ? spec.name : mapped->second;
    auto it = stored.find(source);
    if (it == stored.end()) {
      std::string msg = "missing tensor '" + spec.name + "'";
      if (source != spec.name) msg += " (container name '" + source + "')";
      throw input_error(msg + " in " + container.string());
    }
    canonical.emplace(spec.name, std::move(it->second));
  }
  return WeightSet(config, std::move(canonical));
}

ModelManifest read_model_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open model manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw input_error(path.string() + ": " + e.what());
  }
  ModelManifest m;
  m.path = path;
  m.family = j.value("family", "unknown");
  if (!j.contains("config")) throw input_error(path.string() + ": manifest has no 'config'");
  m.config = config_from_json(j.at("config"));
  if (!j.contains("weights")) throw input_error(path.string() + ": manifest has no 'weights'");
  m.weights = path.parent_path() / j.at("weights").get<std::string>();
  if (j.contains("tensor_map")) m.tensor_map = j.at("tensor_map").get<std::map<std::string, std::string>>();
  m.activation_variant = j.value("activation_variant", std::string(to_string(m.config.activation)));
  m.checksum = j.value("checksum", "");
  m.manifest_checksum = sha256_file(path);
  return m;
}

WeightSet load_model(const ModelManifest& manifest) {
  if (!manifest.checksum.empty()) {
    const auto actual = sha256_file(manifest.weights);
    if (actual != manifest.checksum) {
      throw input_error("checksum mismatch for " + manifest.weights.string() + ": manifest says " +
                        manifest.checksum + ", file is " + actual);
    }
  }
  return load_weights(manifest.weights, manifest.config, manifest.tensor_map);
}

void save_model(const WeightSet& weights, const std::filesystem::path& manifest_path, const std::string& family) {
  auto container = manifest_path;
  container.replace_extension(".safetensors");
  write_safetensors(container, weights.tensors());
  nlohmann::json j = {
      {"format", "wnprobe-model/1"},
      {"family", family},
      {"config", config_to_json(weights.config())},
      {"weights", container.filename().string()},
      {"activation_variant", to_string(weights.config().activation)},
      {"checksum", sha256_file(container)},
  };
  std::ofstream out(manifest_path);
  if (!out) throw input_error("cannot write " + manifest_path.string());
  out << j.dump(2) << '\n';
}

}  // namespace wnprobe
