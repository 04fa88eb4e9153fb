// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wnprobe_cli/run_manifest.hpp"

namespace wnprobe::cli {

struct Common {
  std::string out_dir;
  std::size_t threads = 1;
};

struct ScanArgs {
  std::string model, corpus;
  std::string metric = "wd";
  std::size_t tokens = 2000, pairs = 1000, top_k = 100;
  std::uint64_t seed = 0;
  std::vector<std::size_t> limit_layers;
  std::size_t reservoir = 0;
  bool save_traces = false;
};

struct AblateArgs {
  std::string model, corpus, benchmark, report, cohort, pos, pos_against = "top_wd";
  std::optional<double> top_wd, bottom_wd;
  std::optional<std::size_t> random;
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  std::vector<std::size_t> layers;
  std::string sweep = "none";
  std::string groups;
};

struct MatchArgs {
  std::string model, corpus, report, target_from, benchmark;
  std::optional<double> target_ppl;
  double tolerance = 0.02;
  std::size_t max_iters = 12;
};

struct PairsArgs {
  std::string model, corpus;
  double top_md = 0.01;
  std::size_t tokens = 2000, pairs = 1000, top_k = 100;
  bool per_layer = false;
  std::uint64_t seed = 0;
  std::vector<std::size_t> limit_layers;
};

struct CohortArgs {
  std::vector<std::string> checkpoints, labels;
  std::string cohort_from, cohort, corpus, benchmark;
  double top_wd = 0.01;
};

int cmd_scan(const ScanArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_ablate(const AblateArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_match(const MatchArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_pairs(const PairsArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream& err);
int cmd_cohort(const CohortArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream& err);

}  // namespace wnprobe::cli
