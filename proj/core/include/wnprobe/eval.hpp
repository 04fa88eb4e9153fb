// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wnprobe/corpus.hpp"
#include "wnprobe/hooks.hpp"
#include "wnprobe/model.hpp"

namespace wnprobe {

// Negative log-likelihood (nats) of every predicted token of a window plan.
struct NllStream {
  std::vector<std::uint64_t> index;  // global corpus index of each predicted token
  std::vector<double> nll;
  std::string policy;

  double mean() const;
  double perplexity() const;
};

// log-softmax(logits)[target] in double.
double token_logprob(std::span<const float> logits, TokenId target);

NllStream token_nll(const Model& model, const Corpus& corpus, const WindowPlan& plan,
                    const AblationSpec* ablation = nullptr, std::size_t threads = 1);

// exp(mean NLL) over non-overlapping context-length windows.
double perplexity(const Model& model, const Corpus& corpus, const AblationSpec* ablation = nullptr,
                  std::size_t threads = 1);

// BOS is prepended; the sum runs over the sentence tokens only.
double sentence_logprob(const Model& model, std::span<const TokenId> tokens, const AblationSpec* ablation = nullptr);

struct MinimalPair {
  std::string pair_id;
  std::string category;
  std::string phenomenon;
  std::vector<TokenId> good;
  std::vector<TokenId> bad;
};

using MinimalPairSet = std::vector<MinimalPair>;

MinimalPairSet load_minimal_pairs(const std::filesystem::path& path);

struct AccuracyCell {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double sem = 0.0;
};

struct PairAccuracy {
  AccuracyCell overall;
  std::map<std::string, AccuracyCell> by_category;
  std::vector<double> good_logprob, bad_logprob;
  std::vector<bool> correct;
};

AccuracyCell accuracy_cell(std::size_t correct, std::size_t n);

// Correct iff logprob(good) > logprob(bad); ties count as incorrect.
PairAccuracy minimal_pair_accuracy(const Model& model, const MinimalPairSet& pairs,
                                   const AblationSpec* ablation = nullptr, std::size_t threads = 1);

struct NllDiff {
  std::vector<std::uint64_t> index;
  std::vector<double> diff;  // nll_a - nll_b
  double global_mean = 0.0;
};

// Throws if the two streams were not produced from the same window plan.
NllDiff nll_diff(const NllStream& a, const NllStream& b);

NllDiff token_nll_diff(const Model& model, const Corpus& corpus, const WindowPlan& plan, const AblationSpec* a,
                       const AblationSpec* b, std::size_t threads = 1);

struct PosRow {
  std::string tag;
  double mean = 0.0;
  double sem = 0.0;
  std::size_t count = 0;
};

struct PosSurprisalTable {
  double global_mean = 0.0;
  std::vector<PosRow> rows;  // sorted by tag
};

// Subtracts the global mean difference, then groups by tag.
PosSurprisalTable pos_stratified(const NllDiff& diff, std::span<const std::string> tags);

// JSON Lines {"index", "tag"}; returns index -> tag.
std::map<std::uint64_t, std::string> load_pos_annotations(const std::filesystem::path& path);
std::vector<std::string> align_tags(const std::map<std::uint64_t, std::string>& annotations,
                                    std::span<const std::uint64_t> index);

enum class SweepMode { single, cumulative };
SweepMode parse_sweep_mode(std::string_view s);
std::string_view to_string(SweepMode m);

using LayerGroups = std::vector<std::vector<std::size_t>>;

// "0-3,4-7,8": comma-separated groups, each one layer or an inclusive range.
LayerGroups parse_layer_groups(std::string_view text);
void validate_partition(const LayerGroups& groups, std::size_t n_layers);
std::vector<std::set<std::size_t>> sweep_masks(const LayerGroups& groups, SweepMode mode);

struct SweepEntry {
  std::size_t group = 0;
  std::set<std::size_t> mask;
  double perplexity = 0.0;
  std::optional<PairAccuracy> accuracy;
};

// One ablation per group mask with the fixed neuron set.
std::vector<SweepEntry> layer_group_sweep(const Model& model, const Corpus& corpus, const MinimalPairSet* pairs,
                                          const NeuronSet& neurons, const LayerGroups& groups, SweepMode mode,
                                          std::size_t threads = 1);

nlohmann::json to_json(const AccuracyCell& cell);
nlohmann::json to_json(const PairAccuracy& acc);
nlohmann::json to_json(const PosSurprisalTable& table);

}  // namespace wnprobe
