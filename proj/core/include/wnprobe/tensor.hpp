// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace wnprobe {

// Dense row-major float tensor. Rank 1 or 2 in practice.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {}

  std::size_t numel() const;
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const { return shape.size() < 2 ? numel() : numel() / shape.front(); }

  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace wnprobe
