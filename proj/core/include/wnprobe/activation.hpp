// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>

#include "wnprobe/config.hpp"

namespace wnprobe {

inline double gelu_exact(double a) { return 0.5 * a * std::erfc(-a / std::sqrt(2.0)); }

inline double gelu_tanh(double a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * a * (1.0 + std::tanh(k * (a + 0.044715 * a * a * a)));
}

inline double silu(double a) { return a / (1.0 + std::exp(-a)); }

inline double relu(double a) { return a > 0.0 ? a : 0.0; }

inline double activation(Activation kind, double a) {
  switch (kind) {
    case Activation::gelu_exact: return gelu_exact(a);
    case Activation::gelu_tanh: return gelu_tanh(a);
    case Activation::silu: return silu(a);
    case Activation::relu: return relu(a);
  }
  return a;
}

// In-place over a buffer; float in, float out.
void apply_activation(Activation kind, std::span<float> values);

}  // namespace wnprobe
