// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "wnprobe/tensor.hpp"

namespace wnprobe {

// Reader/writer for the safetensors container: an 8-byte little-endian header
// length, a JSON header mapping names to {dtype, shape, data_offsets}, then the
// raw tensor bytes. F32, F16, BF16 and F64 payloads are read and up/down
// converted to float.
std::map<std::string, Tensor> read_safetensors(const std::filesystem::path& path);

// Writes F32 tensors; names are emitted in sorted order.
void write_safetensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors);

float half_to_float(std::uint16_t h);
float bfloat16_to_float(std::uint16_t h);

}  // namespace wnprobe
