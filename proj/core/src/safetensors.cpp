// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/safetensors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wnprobe/error.hpp"

namespace wnprobe {

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      // subnormal: renormalize
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

float bfloat16_to_float(std::uint16_t h) { return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16); }

namespace {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  if (dtype == "F64") return 8;
  return 0;
}

}  // namespace

std::map<std::string, Tensor> read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open weight container " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  std::uint64_t header_len = 0;
  if (file_size < 8 || !in.read(reinterpret_cast<char*>(&header_len), 8) || header_len > file_size - 8) {
    throw input_error(path.string() + ": not a safetensors container (bad header length)");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw input_error(path.string() + ": malformed safetensors header: " + e.what());
  }
  const std::uint64_t data_start = 8 + header_len;
  const std::uint64_t data_size = file_size - data_start;

  std::map<std::string, Tensor> out;
  std::vector<char> raw;
  for (const auto& [name, info] : meta.items()) {
    if (name == "__metadata__") continue;
    const auto dtype = info.at("dtype").get<std::string>();
    const auto width = dtype_size(dtype);
    if (width == 0) throw input_error(path.string() + ": tensor '" + name + "' has unsupported dtype " + dtype);
    Tensor t;
    t.shape = info.at("shape").get<std::vector<std::size_t>>();
    const auto begin = info.at("data_offsets").at(0).get<std::uint64_t>();
    const auto end = info.at("data_offsets").at(1).get<std::uint64_t>();
    const std::size_t n = t.numel();
    if (end < begin || end > data_size || end - begin != n * width) {
      throw input_error(path.string() + ": tensor '" + name + "' has inconsistent data offsets");
    }
    raw.resize(end - begin);
    in.seekg(static_cast<std::streamoff>(data_start + begin));
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
      throw input_error(path.string() + ": truncated payload for tensor '" + name + "'");
    }
    t.data.resize(n);
    if (dtype == "F32") {
      std::memcpy(t.data.data(), raw.data(), n * 4);
    } else if (dtype == "F64") {
      for (std::size_t i = 0; i < n; ++i) {
        double v;
        std::memcpy(&v, raw.data() + 8 * i, 8);
        t.data[i] = static_cast<float>(v);
      }
    } else {
      const bool is_half = dtype == "F16";
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t h;
        std::memcpy(&h, raw.data() + 2 * i, 2);
        t.data[i] = is_half ? half_to_float(h) : bfloat16_to_float(h);
      }
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

void write_safetensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors) {
  nlohmann::json meta = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t.data.size() * 4;
    meta[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string header = meta.dump();
  while ((header.size() + 8) % 8 != 0) header.push_back(' ');
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write " + path.string());
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  }
  if (!out) throw input_error("failed writing " + path.string());
}

}  // namespace wnprobe
