// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "wnprobe/corpus.hpp"
#include "wnprobe/hooks.hpp"
#include "wnprobe/weights.hpp"

namespace wnprobe {

struct ForwardResult {
  std::size_t positions = 0;
  std::size_t vocab = 0;
  std::vector<float> logits;  // positions x vocab
  // Pre-ablation scalars per position; present iff HookSet::capture was non-empty.
  std::optional<std::map<NeuronId, std::vector<float>>> captured;

  std::span<const float> logits_at(std::size_t t) const { return {logits.data() + t * vocab, vocab}; }
};

// Causal decoder over a borrowed WeightSet (which must outlive the model).
// forward() is const and allocates its own scratch, so one Model can serve
// concurrent passes over different sequences.
class Model {
 public:
  explicit Model(const WeightSet& weights);

  const ModelConfig& config() const { return weights_->config(); }
  const WeightSet& weights() const { return *weights_; }

  ForwardResult forward(const TokenSequence& sequence, const HookSet& hooks = {}) const;

 private:
  struct Linear {
    const Tensor* weight = nullptr;
    const Tensor* bias = nullptr;
  };
  struct Norm {
    const Tensor* weight = nullptr;
    const Tensor* bias = nullptr;
  };
  struct Layer {
    Norm attn_norm, mlp_norm;
    Linear q, k, v, o;
    Linear up, gate, down;
  };

  void norm(const Norm& n, std::span<const float> in, std::size_t positions, std::span<float> out) const;
  void attention(const Layer& layer, std::span<const float> in, std::size_t positions, std::span<float> out) const;
  void mlp(std::size_t index, const Layer& layer, std::span<const float> in, const TokenSequence& seq,
           const HookSet& hooks, ForwardResult& result, std::span<float> out) const;

  const WeightSet* weights_;
  std::vector<Layer> layers_;
  Norm final_norm_;
  const Tensor* embed_ = nullptr;
  const Tensor* positions_ = nullptr;
  const Tensor* unembed_ = nullptr;
  std::vector<double> inv_freq_;
};

// out[t, r] = bias[r] + <W[r], in[t]>. Exposed for benchmarks and tests.
void linear_forward(std::span<const float> in, std::size_t positions, const Tensor& weight, const Tensor* bias,
                    std::span<float> out);

}  // namespace wnprobe
