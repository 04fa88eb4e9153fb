// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "wnprobe/capture.hpp"

namespace wnprobe {

struct NormalizedSample {
  std::vector<double> values;
  std::size_t source_count = 0;
  double mean = 0.0;
  double std = 0.0;  // population (divide by N)
  bool degenerate_variance = false;
};

// Throws input_error for N < 2. A degenerate variance is flagged, values left empty.
NormalizedSample normalize(std::span<const double> samples);
NormalizedSample normalize(std::span<const float> samples);

// Midpoint-quantile W1 against N(0,1): (1/N) sum |v_(i) - Phi^-1((i - 0.5)/N)|.
// Throws numerical_error on a degenerate sample.
double wd_to_gaussian(const NormalizedSample& ns);
// Same estimator on values used as-is (no normalization).
double wd_of_values(std::span<const double> values);

// Phi^-1((i - 0.5)/N) for i = 1..N, cached per thread for the last few N.
std::span<const double> midpoint_quantiles(std::size_t n);

enum class SignClass : std::uint8_t { NN, PN, PP };
std::string_view to_string(SignClass s);
SignClass classify_signs(double y_i, double y_j);

struct TokenMeta {
  std::uint64_t index = 0;
  TokenId token = 0;
  std::uint32_t doc = 0;
};

struct PairRecord {
  TokenMeta i, j;
  float y_i = 0.0f, y_j = 0.0f;
  double input_dist = 0.0;
  double output_dist = 0.0;
  double norm_input = 0.0;
  double norm_output = 0.0;
  double ratio = 0.0;
  SignClass sign = SignClass::PP;
};

// Endpoints are sample positions within one LayerTrace.
struct SampledPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double input_dist = 0.0;
};

struct PairSampling {
  std::vector<SampledPair> pairs;
  std::size_t rejected = 0;  // pairings discarded for input_dist < eps
};

// Draws n_tokens sample positions without replacement, matches them into
// n_pairs disjoint pairs, and replaces an endpoint of any pair closer than eps
// with an unused token (tokens left over from the draw first, then the rest
// of the trace), at most max_retries times per pair.
PairSampling sample_pairs(const LayerTrace& trace, std::size_t n_tokens, std::size_t n_pairs, std::uint64_t seed,
                          double eps = 1e-8, std::size_t max_retries = 64);

struct MappingDifficulty {
  double md = 0.0;
  std::vector<double> norm_input;
  std::vector<double> norm_output;
  std::vector<double> ratios;
  bool degenerate_median = false;
};

// Input distances are normalized by their maximum, output distances by their
// median. A zero median gives MD = 0 and all ratios 0.
MappingDifficulty mapping_difficulty(std::span<const double> input_dist, std::span<const double> output_dist);

// Builds full records for neuron k (position in trace.rows) over the pairs.
std::vector<PairRecord> pair_records(const LayerTrace& trace, std::size_t k, std::span<const SampledPair> pairs,
                                     bool* degenerate_median = nullptr);

// The k pairs with the largest ratio; ties by lower i then lower j.
std::vector<PairRecord> top_differentiated(std::span<const PairRecord> pairs, std::size_t k);

struct SignComposition {
  std::array<double, 3> proportion{};  // indexed by SignClass
  std::array<double, 3> sem{};         // across neurons
  std::size_t neurons = 0;
};

// Per-neuron class proportions averaged across neurons.
SignComposition sign_composition(std::span<const std::vector<PairRecord>> per_neuron);

}  // namespace wnprobe
