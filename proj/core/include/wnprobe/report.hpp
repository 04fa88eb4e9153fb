// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wnprobe/metrics.hpp"
#include "wnprobe/model.hpp"

namespace wnprobe {

enum NeuronFlag : std::uint32_t {
  flag_degenerate_variance = 1u << 0,
  flag_degenerate_median = 1u << 1,
};

struct NeuronRecord {
  NeuronId neuron;
  std::optional<double> wd;
  std::optional<double> md;
  // NN/PN/PP proportions among the neuron's top-k differentiated pairs.
  std::optional<std::array<double, 3>> signs;
  std::uint32_t flags = 0;
  std::size_t samples = 0;
};

struct LayerSummary {
  std::size_t layer = 0;
  std::size_t neurons = 0;
  std::size_t degenerate = 0;
  std::optional<double> mean_wd, max_wd;
  std::optional<std::uint32_t> max_wd_row;
  std::optional<double> mean_md;
};

struct EntanglementReport {
  std::string model_checksum;
  std::string corpus_name;
  std::string corpus_checksum;
  bool has_wd = false;
  bool has_md = false;
  std::uint64_t seed = 0;
  std::size_t tokens = 0;  // pair analysis draw
  std::size_t pairs = 0;
  std::size_t top_k = 0;
  std::size_t reservoir_limit = 0;  // 0 = every corpus token
  std::size_t d_mlp = 0;
  std::vector<NeuronRecord> neurons;  // sorted by (layer, row)

  std::vector<std::size_t> layers() const;
  const NeuronRecord* find(const NeuronId& n) const;
  std::vector<LayerSummary> summary() const;
};

nlohmann::json to_json(const EntanglementReport& report);
EntanglementReport report_from_json(const nlohmann::json& j);
EntanglementReport read_report(const std::filesystem::path& path);
// Flat table: layer,row,wd,md,nn,pn,pp,flags.
std::string report_csv(const EntanglementReport& report);
std::string summary_csv(const EntanglementReport& report);

struct ScanOptions {
  bool wd = true;
  bool md = false;
  std::size_t tokens = 2000;
  std::size_t pairs = 1000;
  std::size_t top_k = 100;
  std::uint64_t seed = 0;
  std::optional<std::vector<std::size_t>> layers;  // default: all
  std::size_t reservoir_limit = 0;                 // 0 = keep every token
  std::size_t threads = 1;
};

// Per-layer pair material shared by every neuron of the layer.
struct LayerPairs {
  LayerTrace trace;  // full rows plus input vectors at the sampled points
  PairSampling sampling;
};

// Captures input vectors at a seeded token sample and matches them into pairs.
std::vector<LayerPairs> collect_pairs(const Model& model, const Corpus& corpus, const std::vector<std::size_t>& layers,
                                      std::size_t tokens, std::size_t pairs, std::uint64_t seed, std::size_t threads);

// What a scan captured along the way, for callers that persist it.
struct ScanArtifacts {
  TraceSet traces;
  std::vector<LayerPairs> pairs;
};

EntanglementReport scan(const Model& model, const Corpus& corpus, const std::string& model_checksum,
                        const ScanOptions& options, ScanArtifacts* artifacts = nullptr);

}  // namespace wnprobe
