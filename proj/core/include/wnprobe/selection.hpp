// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wnprobe/hooks.hpp"
#include "wnprobe/report.hpp"
#include "wnprobe/weights.hpp"

namespace wnprobe {

enum class SelectionRule { top_wd_fraction, top_md_fraction, random, bottom_wd_fraction };
std::string_view to_string(SelectionRule r);
SelectionRule parse_selection_rule(std::string_view s);

enum class Metric { wd, md };

struct Cohort {
  NeuronSet neurons;
  SelectionRule rule = SelectionRule::top_wd_fraction;
  double fraction = 0.0;  // for random: count per layer / d_mlp
  std::optional<std::uint64_t> seed;
  std::string source_report;  // checksum of the report the cohort was ranked from
  std::vector<std::size_t> layers;

  std::vector<std::uint32_t> rows_in_layer(std::size_t layer) const;
  AblationSpec ablation(std::optional<std::set<std::size_t>> layer_mask = std::nullopt) const;
};

nlohmann::json to_json(const Cohort& cohort);
Cohort cohort_from_json(const nlohmann::json& j);
Cohort read_cohort(const std::filesystem::path& path);

// round-half-up(fraction * d_mlp), at least 1. fraction must lie in (0, 1].
std::size_t per_layer_count(double fraction, std::size_t d_mlp);

// Degenerate-flagged neurons are excluded before ranking; ties go to the lower row.
Cohort select_top_fraction(const EntanglementReport& report, Metric metric, double fraction,
                           const std::string& report_checksum);
Cohort select_bottom_fraction(const EntanglementReport& report, double fraction, const std::string& report_checksum);

// Seeded uniform choice of `count` rows per layer, never touching `exclusions`.
Cohort select_random_control(const std::vector<std::size_t>& layers, std::size_t d_mlp, Projection projection,
                             std::size_t count, std::uint64_t seed, const NeuronSet& exclusions);

struct MatchStep {
  std::string phase;  // baseline, expand, bisect
  double m = 0.0;
  double perplexity = 0.0;
};

struct MatchResult {
  double m = 0.0;
  double perplexity = 0.0;
  bool converged = false;
  bool bracket_failed = false;
  std::size_t bisection_steps = 0;
  std::vector<MatchStep> log;
  std::vector<std::string> warnings;
};

// Finds m in [0, 1] with |eval(m) - target| / target <= tolerance. The upper
// bracket starts at 1/16 and doubles until eval(hi) >= target; bisection then
// runs for at most max_iters steps. When eval(1) < target the result is m = 1
// with bracket_failed set. Throws search_error if eval(0) already exceeds the
// target by more than the tolerance.
MatchResult match_perplexity(double target, const std::function<double(double)>& eval, double tolerance = 0.02,
                             std::size_t max_iters = 12);

struct DissimilarityStep {
  std::string from, to;
  std::vector<std::optional<double>> normalized;  // per cohort neuron, cohort order; empty when degenerate
  std::vector<double> raw;                        // per cohort neuron
  std::vector<std::size_t> degenerate_layers;     // layer mean was 0
  std::optional<double> mean, sem;                // over defined cohort values
};

struct CohortTimeSeries {
  std::vector<std::string> labels;
  std::vector<NeuronId> neurons;  // cohort order
  std::vector<DissimilarityStep> steps;
  // Filled by callers that rescan each checkpoint.
  std::vector<std::optional<double>> cohort_wd_mean, cohort_wd_sem;
};

// 1 - cos between successive checkpoints of each neuron's pre-activation
// weight row, divided by the mean over every neuron of its layer.
CohortTimeSeries cohort_dissimilarity(const std::vector<const WeightSet*>& checkpoints,
                                      const std::vector<std::string>& labels, const Cohort& cohort);

nlohmann::json to_json(const CohortTimeSeries& series);

}  // namespace wnprobe
