// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wnprobe/activation.hpp"
#include "wnprobe/error.hpp"

namespace wnprobe {
namespace {

// Eight independent lanes, summed in a fixed order: vectorizes without
// reassociation flags and stays bit-reproducible.
inline float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[k + j] * b[k + j];
  }
  float tail = 0.0f;
  for (; k < n; ++k) tail += a[k] * b[k];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

}  // namespace

void apply_activation(Activation kind, std::span<float> values) {
  for (float& v : values) v = static_cast<float>(activation(kind, v));
}

void linear_forward(std::span<const float> in, std::size_t positions, const Tensor& weight, const Tensor* bias,
                    std::span<float> out) {
  const std::size_t n_out = weight.rows();
  const std::size_t n_in = weight.cols();
  constexpr std::size_t kBlock = 4;
  for (std::size_t t0 = 0; t0 < positions; t0 += kBlock) {
    const std::size_t t1 = std::min(positions, t0 + kBlock);
    for (std::size_t r = 0; r < n_out; ++r) {
      const float* w = weight.data.data() + r * n_in;
      const float b = bias ? bias->data[r] : 0.0f;
      for (std::size_t t = t0; t < t1; ++t) out[t * n_out + r] = dot(w, in.data() + t * n_in, n_in) + b;
    }
  }
}

Model::Model(const WeightSet& weights) : weights_(&weights) {
  const auto& c = weights.config();
  auto bias = [&](const std::string& name) { return weights.find(name + ".bias"); };
  auto linear = [&](const std::string& name) { return Linear{&weights.at(name), bias(name)}; };
  auto norm = [&](const std::string& name) { return Norm{&weights.at(name), bias(name)}; };

  embed_ = &weights.at("embed.tokens");
  if (c.position_encoding == PositionEncoding::learned) positions_ = &weights.at("embed.positions");
  unembed_ = c.tie_embeddings ? embed_ : &weights.at("unembed");
  final_norm_ = norm("final_norm");
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    Layer layer;
    layer.attn_norm = norm(p + "attn_norm");
    layer.mlp_norm = norm(p + "mlp_norm");
    layer.q = linear(p + "attn.q");
    layer.k = linear(p + "attn.k");
    layer.v = linear(p + "attn.v");
    layer.o = linear(p + "attn.o");
    layer.up = linear(p + "mlp.up");
    if (c.mlp_style == MlpStyle::glu) layer.gate = linear(p + "mlp.gate");
    layer.down = linear(p + "mlp.down");
    layers_.push_back(layer);
  }
  const std::size_t rot = c.rotary_dim();
  for (std::size_t i = 0; i < rot / 2; ++i) {
    inv_freq_.push_back(1.0 / std::pow(c.rope_theta, static_cast<double>(2 * i) / static_cast<double>(rot)));
  }
}

void Model::norm(const Norm& n, std::span<const float> in, std::size_t positions, std::span<float> out) const {
  const auto& c = config();
  const std::size_t d = c.d_model;
  for (std::size_t t = 0; t < positions; ++t) {
    const float* x = in.data() + t * d;
    float* y = out.data() + t * d;
    if (c.norm_style == NormStyle::pre_layernorm) {
      double mean = 0.0;
      for (std::size_t i = 0; i < d; ++i) mean += x[i];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + c.norm_eps);
      for (std::size_t i = 0; i < d; ++i) {
        const double b = n.bias ? n.bias->data[i] : 0.0;
        y[i] = static_cast<float>((x[i] - mean) * inv * n.weight->data[i] + b);
      }
    } else {
      double ms = 0.0;
      for (std::size_t i = 0; i < d; ++i) ms += static_cast<double>(x[i]) * x[i];
      ms /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(ms + c.norm_eps);
      for (std::size_t i = 0; i < d; ++i) y[i] = static_cast<float>(x[i] * inv) * n.weight->data[i];
    }
  }
}

void Model::attention(const Layer& layer, std::span<const float> in, std::size_t T, std::span<float> out) const {
  const auto& c = config();
  const std::size_t d = c.d_model;
  const std::size_t hd = c.head_dim();
  const std::size_t kv_width = c.kv_heads() * hd;
  const std::size_t group = c.n_heads / c.kv_heads();
  std::vector<float> q(T * d), k(T * kv_width), v(T * kv_width), ctx(T * d);
  linear_forward(in, T, *layer.q.weight, layer.q.bias, q);
  linear_forward(in, T, *layer.k.weight, layer.k.bias, k);
  linear_forward(in, T, *layer.v.weight, layer.v.bias, v);

  if (c.position_encoding == PositionEncoding::rotary) {
    const std::size_t half = inv_freq_.size();
    auto rotate = [&](float* vec, std::size_t pos) {
      for (std::size_t i = 0; i < half; ++i) {
        const auto angle = static_cast<float>(static_cast<double>(pos) * inv_freq_[i]);
        const float cs = std::cos(angle);
        const float sn = std::sin(angle);
        const float x0 = vec[i];
        const float x1 = vec[i + half];
        vec[i] = x0 * cs - x1 * sn;
        vec[i + half] = x1 * cs + x0 * sn;
      }
    };
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t h = 0; h < c.n_heads; ++h) rotate(q.data() + t * d + h * hd, t);
      for (std::size_t h = 0; h < c.kv_heads(); ++h) rotate(k.data() + t * kv_width + h * hd, t);
    }
  }

  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::vector<float> scores(T);
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const std::size_t kh = h / group;
    for (std::size_t i = 0; i < T; ++i) {
      const float* qi = q.data() + i * d + h * hd;
      float max_score = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = dot(qi, k.data() + j * kv_width + kh * hd, hd) * scale;
        max_score = std::max(max_score, scores[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - max_score);
        total += scores[j];
      }
      const auto inv_total = static_cast<float>(1.0 / total);
      float* out_i = ctx.data() + i * d + h * hd;
      std::fill(out_i, out_i + hd, 0.0f);
      for (std::size_t j = 0; j <= i; ++j) {
        const float p = scores[j] * inv_total;
        const float* vj = v.data() + j * kv_width + kh * hd;
        for (std::size_t e = 0; e < hd; ++e) out_i[e] += p * vj[e];
      }
    }
  }
  linear_forward(ctx, T, *layer.o.weight, layer.o.bias, out);
}

void Model::mlp(std::size_t index, const Layer& layer, std::span<const float> in, const TokenSequence& seq,
                const HookSet& hooks, ForwardResult& result, std::span<float> out) const {
  const auto& c = config();
  const std::size_t T = seq.ids.size();
  const std::size_t F = c.d_mlp;
  const bool glu = c.mlp_style == MlpStyle::glu;
  const Linear& site = glu ? layer.gate : layer.up;

  std::vector<float> pre(T * F);
  linear_forward(in, T, *site.weight, site.bias, pre);

  if (!hooks.observers.empty()) {
    PreactivationSite view{index, &seq, T, F, c.d_model, pre, in};
    for (auto* obs : hooks.observers) obs->observe(view);
  }
  if (result.captured) {
    for (const auto& n : hooks.capture) {
      if (n.layer != index) continue;
      auto& values = (*result.captured)[n];
      values.resize(T);
      for (std::size_t t = 0; t < T; ++t) values[t] = pre[t * F + n.row];
    }
  }
  if (hooks.ablation) {
    for (std::size_t t = 0; t < T; ++t) apply_ablation(std::span<float>(pre).subspan(t * F, F), index, *hooks.ablation);
  }

  apply_activation(c.activation, pre);
  if (glu) {
    std::vector<float> up(T * F);
    linear_forward(in, T, *layer.up.weight, layer.up.bias, up);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] *= up[i];
  }
  for (auto* obs : hooks.observers) obs->observe_post(index, seq, pre);
  linear_forward(pre, T, *layer.down.weight, layer.down.bias, out);
}

ForwardResult Model::forward(const TokenSequence& seq, const HookSet& hooks) const {
  const auto& c = config();
  const std::size_t T = seq.ids.size();
  const std::size_t d = c.d_model;
  if (T == 0) throw input_error("cannot run a forward pass over an empty sequence");
  if (T > c.context_length) {
    throw input_error("sequence of " + std::to_string(T) + " tokens exceeds the context length " +
                      std::to_string(c.context_length));
  }
  for (auto id : seq.ids) {
    if (id >= c.vocab_size) throw input_error("token id " + std::to_string(id) + " is outside the vocabulary");
  }
  if (hooks.ablation) hooks.ablation->validate(c);
  for (const auto& n : hooks.capture) validate_neuron(n, c);

  ForwardResult result;
  result.positions = T;
  result.vocab = c.vocab_size;
  if (!hooks.capture.empty()) result.captured.emplace();

  std::vector<float> x(T * d), h1(T * d), h2(T * d), attn_out(T * d), mlp_out(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    auto e = embed_->row(seq.ids[t]);
    std::copy(e.begin(), e.end(), x.begin() + static_cast<std::ptrdiff_t>(t * d));
    if (positions_) {
      auto p = positions_->row(t);
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] += p[i];
    }
  }

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    norm(layer.attn_norm, x, T, h1);
    attention(layer, h1, T, attn_out);
    if (c.residual_topology == ResidualTopology::parallel) {
      norm(layer.mlp_norm, x, T, h2);
      mlp(l, layer, h2, seq, hooks, result, mlp_out);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = mlp_out[i] + attn_out[i] + x[i];
    } else {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];
      norm(layer.mlp_norm, x, T, h2);
      mlp(l, layer, h2, seq, hooks, result, mlp_out);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp_out[i];
    }
  }

  norm(final_norm_, x, T, h1);
  result.logits.resize(T * c.vocab_size);
  linear_forward(h1, T, *unembed_, nullptr, result.logits);
  return result;
}

}  // namespace wnprobe
