// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/hooks.hpp"

#include "wnprobe/error.hpp"

namespace wnprobe {

std::string_view to_string(Projection p) { return p == Projection::up ? "up" : "gate"; }

Projection parse_projection(std::string_view s) {
  if (s == "up") return Projection::up;
  if (s == "gate") return Projection::gate;
  throw input_error("unknown projection '" + std::string(s) + "'");
}

Projection preactivation_projection(const ModelConfig& config) {
  return config.mlp_style == MlpStyle::glu ? Projection::gate : Projection::up;
}

std::string to_string(const NeuronId& n) {
  return "L" + std::to_string(n.layer) + "." + std::string(to_string(n.projection)) + "." + std::to_string(n.row);
}

void validate_neuron(const NeuronId& n, const ModelConfig& config) {
  if (n.layer >= config.n_layers) throw input_error("neuron " + to_string(n) + ": layer out of range");
  if (n.row >= config.d_mlp) throw input_error("neuron " + to_string(n) + ": row out of range");
  if (n.projection != preactivation_projection(config)) {
    throw input_error("neuron " + to_string(n) + ": projection does not precede the nonlinearity in a " +
                      std::string(to_string(config.mlp_style)) + " MLP");
  }
}

std::vector<std::uint32_t> AblationSpec::rows_in_layer(std::size_t layer) const {
  std::vector<std::uint32_t> rows;
  if (!applies_to_layer(layer)) return rows;
  auto it = neurons.lower_bound(NeuronId{static_cast<std::uint32_t>(layer), Projection::up, 0});
  for (; it != neurons.end() && it->layer == layer; ++it) rows.push_back(it->row);
  return rows;
}

void AblationSpec::validate(const ModelConfig& config) const {
  for (const auto& n : neurons) validate_neuron(n, config);
  if (layer_mask) {
    for (auto l : *layer_mask) {
      if (l >= config.n_layers) throw input_error("layer mask entry " + std::to_string(l) + " out of range");
    }
  }
}

void apply_ablation(std::span<float> preact, std::size_t layer, const AblationSpec& spec) {
  if (!spec.applies_to_layer(layer)) return;
  auto it = spec.neurons.lower_bound(NeuronId{static_cast<std::uint32_t>(layer), Projection::up, 0});
  for (; it != spec.neurons.end() && it->layer == layer; ++it) {
    if (it->row >= preact.size()) continue;
    float& a = preact[it->row];
    if (a < 0.0f) a = 0.0f;
  }
}

}  // namespace wnprobe
