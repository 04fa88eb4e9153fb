// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "wnprobe/corpus.hpp"
#include "wnprobe/neuron.hpp"

namespace wnprobe {

enum class AblationPolicy { clamp_negative };

// Sign-specific intervention: for every neuron k in `neurons`, a'_k = max(a_k, 0)
// right before the nonlinearity. Zero is left untouched.
struct AblationSpec {
  NeuronSet neurons;
  AblationPolicy policy = AblationPolicy::clamp_negative;
  std::optional<std::set<std::size_t>> layer_mask;

  bool applies_to_layer(std::size_t layer) const { return !layer_mask || layer_mask->count(layer) != 0; }
  std::vector<std::uint32_t> rows_in_layer(std::size_t layer) const;
  void validate(const ModelConfig& config) const;
};

// Clamps the selected rows of one position's pre-activation vector in place.
// Neurons of other layers (or masked-out layers) are ignored.
void apply_ablation(std::span<float> preact, std::size_t layer, const AblationSpec& spec);

// One layer of one forward pass at the pre-nonlinearity site. `preact` is
// positions x d_mlp and holds the values BEFORE any ablation; `input` is
// positions x d_model, the normalized vector the projection multiplies.
struct PreactivationSite {
  std::size_t layer = 0;
  const TokenSequence* sequence = nullptr;
  std::size_t positions = 0;
  std::size_t width = 0;
  std::size_t input_width = 0;
  std::span<const float> preact;
  std::span<const float> input;

  std::span<const float> preact_at(std::size_t t) const { return preact.subspan(t * width, width); }
  std::span<const float> input_at(std::size_t t) const { return input.subspan(t * input_width, input_width); }
};

// Observers run before ablation and may be shared by concurrent forward passes;
// implementations synchronise internally.
class ActivationObserver {
 public:
  virtual ~ActivationObserver() = default;
  virtual void observe(const PreactivationSite& site) = 0;
  // Values after ablation and nonlinearity (positions x d_mlp). Default: ignored.
  virtual void observe_post(std::size_t /*layer*/, const TokenSequence& /*seq*/, std::span<const float> /*post*/) {}
};

struct HookSet {
  const AblationSpec* ablation = nullptr;
  std::vector<ActivationObserver*> observers;
  // Neurons whose per-position pre-activations are returned in ForwardResult::captured.
  std::vector<NeuronId> capture;

  bool empty() const { return ablation == nullptr && observers.empty() && capture.empty(); }
};

}  // namespace wnprobe
