// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>

#include "wnprobe/config.hpp"

namespace wnprobe {

// The projection feeding the MLP nonlinearity: up in plain MLPs, gate in GLUs.
enum class Projection : std::uint8_t { up = 0, gate = 1 };

std::string_view to_string(Projection p);
Projection parse_projection(std::string_view s);
Projection preactivation_projection(const ModelConfig& config);

// A row of the pre-nonlinearity projection matrix.
struct NeuronId {
  std::uint32_t layer = 0;
  Projection projection = Projection::up;
  std::uint32_t row = 0;

  auto operator<=>(const NeuronId&) const = default;
};

using NeuronSet = std::set<NeuronId>;

std::string to_string(const NeuronId& n);

// Throws input_error when the neuron does not exist in (or does not match) the model.
void validate_neuron(const NeuronId& n, const ModelConfig& config);

}  // namespace wnprobe
