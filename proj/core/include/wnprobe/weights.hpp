// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wnprobe/config.hpp"
#include "wnprobe/tensor.hpp"

namespace wnprobe {

// Canonical tensor names. Weights are [out, in] row-major; biases carry a
// ".bias" suffix on the owning weight name.
//
//   embed.tokens            [vocab, d_model]
//   embed.positions         [context, d_model]        learned positions only
//   layer.N.attn_norm       [d_model]                 (+ .bias for layernorm)
//   layer.N.attn.{q,k,v,o}  q,o [d_model, d_model]; k,v [kv_heads*head_dim, d_model]
//   layer.N.mlp_norm        [d_model]                 (+ .bias for layernorm)
//   layer.N.mlp.up          [d_mlp, d_model]
//   layer.N.mlp.gate        [d_mlp, d_model]          glu only
//   layer.N.mlp.down        [d_model, d_mlp]
//   final_norm              [d_model]                 (+ .bias for layernorm)
//   unembed                 [vocab, d_model]          absent when tie_embeddings
//
// Linear biases (attn.*, mlp.*) are required iff config.linear_bias.
struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

std::vector<TensorSpec> required_tensors(const ModelConfig& config);

// Immutable after construction; safe to share across threads.
class WeightSet {
 public:
  WeightSet(ModelConfig config, std::map<std::string, Tensor> tensors);

  const ModelConfig& config() const { return config_; }
  const Tensor& at(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

 private:
  ModelConfig config_;
  std::map<std::string, Tensor> tensors_;
};

// Checks every required name, shape and value. The exception message names the
// offending canonical tensor.
void validate_tensors(const ModelConfig& config, const std::map<std::string, Tensor>& tensors);

// tensor_map: canonical name -> container name; unmapped names are looked up verbatim.
WeightSet load_weights(const std::filesystem::path& container, const ModelConfig& config,
                       const std::map<std::string, std::string>& tensor_map = {});

struct ModelManifest {
  std::filesystem::path path;
  std::string family;
  ModelConfig config;
  std::filesystem::path weights;
  std::map<std::string, std::string> tensor_map;
  std::string activation_variant;
  std::string checksum;           // declared container checksum, may be empty
  std::string manifest_checksum;  // sha256 of the manifest file itself
};

ModelManifest read_model_manifest(const std::filesystem::path& path);

// Reads the manifest, verifies the container checksum when declared, loads weights.
WeightSet load_model(const ModelManifest& manifest);

// Writes container + manifest for a WeightSet (used for derived fixtures).
void save_model(const WeightSet& weights, const std::filesystem::path& manifest_path, const std::string& family);

}  // namespace wnprobe
