// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "wnprobe/corpus.hpp"
#include "wnprobe/hooks.hpp"
#include "wnprobe/model.hpp"

namespace wnprobe {

enum class CaptureWhat { preactivation_scalar, input_vector_and_scalar };

struct CaptureSpec {
  std::vector<NeuronId> neurons;
  std::vector<std::size_t> wildcard_layers;  // every row of these layers
  CaptureWhat what = CaptureWhat::preactivation_scalar;
  std::size_t reservoir_limit = std::numeric_limits<std::size_t>::max();
  std::uint64_t seed = 0;

  // Rejects reservoir_limit == 0 and input-vector capture combined with a wildcard.
  void validate(const ModelConfig& config) const;
};

// Samples of one layer. Neurons captured in the same layer share the sampled
// token set, so metadata and input vectors are stored once per layer.
struct LayerTrace {
  std::uint32_t layer = 0;
  Projection projection = Projection::up;
  std::vector<std::uint32_t> rows;
  std::vector<std::uint64_t> index;  // global token index, ascending
  std::vector<TokenId> token;
  std::vector<std::uint32_t> doc;
  std::vector<float> values;  // rows.size() x samples, neuron-major
  std::vector<float> inputs;  // samples x input_dim, empty unless requested
  std::size_t input_dim = 0;

  std::size_t samples() const { return index.size(); }
  bool has_inputs() const { return input_dim != 0; }
  std::span<const float> values_of(std::size_t k) const { return {values.data() + k * samples(), samples()}; }
  std::span<const float> input_at(std::size_t s) const { return {inputs.data() + s * input_dim, input_dim}; }
  // Position of `row` in rows, or npos.
  std::size_t find_row(std::uint32_t row) const;
};

// Per-neuron view into a LayerTrace.
struct ActivationTrace {
  NeuronId neuron;
  const LayerTrace* layer = nullptr;
  std::span<const float> values;

  std::size_t size() const { return values.size(); }
};

struct TraceSet {
  std::string corpus_checksum;
  std::vector<LayerTrace> layers;

  const LayerTrace* find_layer(std::size_t layer) const;
  ActivationTrace trace(const NeuronId& n) const;  // throws when not captured
};

// Streaming collector. Keeps the `reservoir_limit` samples with the smallest
// seeded hash of their global token index: a uniform sample without
// replacement that does not depend on the order windows arrive in.
class TraceCollector : public ActivationObserver {
 public:
  TraceCollector(const CaptureSpec& spec, const ModelConfig& config);
  ~TraceCollector() override;

  void observe(const PreactivationSite& site) override;
  TraceSet drain(std::string corpus_checksum = {});

 private:
  struct LayerState;
  std::vector<std::unique_ptr<LayerState>> layers_;
  std::vector<std::int32_t> layer_slot_;
  CaptureSpec spec_;
};

// Records full pre-activation rows and input vectors at a fixed set of global
// token indices (the explicit-index path for input-vector capture).
class PointCollector : public ActivationObserver {
 public:
  PointCollector(std::vector<std::size_t> layers, std::vector<std::uint64_t> indices, const ModelConfig& config);

  void observe(const PreactivationSite& site) override;
  TraceSet drain(std::string corpus_checksum = {});

 private:
  std::vector<std::size_t> layers_;
  std::vector<std::uint64_t> indices_;  // sorted
  std::vector<LayerTrace> traces_;
  std::vector<std::vector<bool>> seen_;
  std::mutex mutex_;
};

std::uint64_t sample_key(std::uint64_t seed, std::uint64_t index);

// Runs every window of the plan with the given hooks; results are discarded
// (observers keep what they need).
void run_windows(const Model& model, const Corpus& corpus, const WindowPlan& plan, const HookSet& hooks,
                 std::size_t threads);

// Windows covering every corpus position once, single-token documents included.
WindowPlan coverage_plan(const Corpus& corpus, std::size_t context);

TraceSet capture(const Model& model, const Corpus& corpus, const CaptureSpec& spec, std::size_t threads = 1);

// Trace file: "WNTRACE1", u32 record count, then per neuron
// {u32 layer, u8 projection, u32 row, u16 checksum length, checksum bytes, u64 count}
// followed by count x (u64 global token index, f32 scalar). Little-endian, packed.
// Side file: "WNINPUT1", u64 count, u32 dim, then count x (u64 index, dim x f32).
struct TraceRecord {
  NeuronId neuron;
  std::string corpus_checksum;
  std::vector<std::uint64_t> index;
  std::vector<float> values;
};

void write_trace_file(const std::filesystem::path& path, const TraceSet& traces);
std::vector<TraceRecord> read_trace_file(const std::filesystem::path& path);
void write_input_side_file(const std::filesystem::path& path, const LayerTrace& layer);
LayerTrace read_input_side_file(const std::filesystem::path& path);

}  // namespace wnprobe
