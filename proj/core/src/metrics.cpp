// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wnprobe/error.hpp"
#include "wnprobe/normal.hpp"
#include "wnprobe/random.hpp"
#include "wnprobe/stats.hpp"

namespace wnprobe {

NormalizedSample normalize(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw input_error("normalize: need at least 2 samples, got " + std::to_string(n));
  NormalizedSample out;
  out.source_count = n;
  double sum = 0.0;
  for (double v : samples) {
    if (!std::isfinite(v)) throw numerical_error("normalize: non-finite sample");
    sum += v;
  }
  out.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : samples) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(n));
  if (out.std < 1e-12 * std::fabs(out.mean) + 1e-30) {
    out.degenerate_variance = true;
    return out;
  }
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = (samples[i] - out.mean) / out.std;
  return out;
}

NormalizedSample normalize(std::span<const float> samples) {
  std::vector<double> d(samples.begin(), samples.end());
  return normalize(std::span<const double>(d));
}

std::span<const double> midpoint_quantiles(std::size_t n) {
  struct Entry {
    std::size_t n = 0;
    std::vector<double> q;
  };
  thread_local std::array<Entry, 4> cache;
  thread_local std::size_t next = 0;
  for (const auto& e : cache) {
    if (e.n == n) return e.q;
  }
  Entry& e = cache[next];
  next = (next + 1) % cache.size();
  e.n = n;
  e.q.resize(n);
  // Symmetric by construction, so the estimator is exactly sign-symmetric.
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double q = normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n));
    e.q[i] = q;
    e.q[n - 1 - i] = -q;
  }
  if (n % 2 == 1) e.q[n / 2] = 0.0;
  return e.q;
}

double wd_of_values(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) throw input_error("wd_of_values: empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto q = midpoint_quantiles(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(sorted[i] - q[i]);
  return acc / static_cast<double>(n);
}

double wd_to_gaussian(const NormalizedSample& ns) {
  if (ns.degenerate_variance) throw numerical_error("wd_to_gaussian: degenerate variance");
  return wd_of_values(ns.values);
}

std::string_view to_string(SignClass s) {
  switch (s) {
    case SignClass::NN: return "NN";
    case SignClass::PN: return "PN";
    case SignClass::PP: return "PP";
  }
  return "?";
}

SignClass classify_signs(double y_i, double y_j) {
  const int negatives = (y_i < 0.0) + (y_j < 0.0);
  return negatives == 2 ? SignClass::NN : negatives == 1 ? SignClass::PN : SignClass::PP;
}

namespace {

double l2_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

PairSampling sample_pairs(const LayerTrace& trace, std::size_t n_tokens, std::size_t n_pairs, std::uint64_t seed,
                          double eps, std::size_t max_retries) {
  if (!trace.has_inputs()) throw input_error("sample_pairs: trace holds no input vectors");
  if (n_tokens > trace.samples()) {
    throw input_error("sample_pairs: need " + std::to_string(n_tokens) + " tokens, trace holds " +
                      std::to_string(trace.samples()));
  }
  if (n_pairs == 0 || 2 * n_pairs > n_tokens) {
    throw input_error("sample_pairs: n_pairs must be in [1, n_tokens/2]");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(trace.samples());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // A full shuffle: the first n_tokens are the draw (already in random order,
  // so consecutive entries form a random matching), the rest are spares.
  shuffle(order, rng);
  std::size_t next_spare = 2 * n_pairs;

  PairSampling out;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    SampledPair pair{order[2 * p], order[2 * p + 1], 0.0};
    pair.input_dist = l2_distance(trace.input_at(pair.a), trace.input_at(pair.b));
    std::size_t retries = 0;
    while (pair.input_dist < eps) {
      ++out.rejected;
      if (retries++ == max_retries || next_spare == order.size()) {
        throw numerical_error("sample_pairs: could not find a pair with distinct inputs after " +
                              std::to_string(retries) + " attempts");
      }
      pair.b = order[next_spare++];
      pair.input_dist = l2_distance(trace.input_at(pair.a), trace.input_at(pair.b));
    }
    out.pairs.push_back(pair);
  }
  return out;
}

MappingDifficulty mapping_difficulty(std::span<const double> input_dist, std::span<const double> output_dist) {
  if (input_dist.empty()) throw input_error("mapping_difficulty: empty pair list");
  if (input_dist.size() != output_dist.size()) throw input_error("mapping_difficulty: length mismatch");
  const std::size_t n = input_dist.size();
  MappingDifficulty out;
  const double max_in = *std::max_element(input_dist.begin(), input_dist.end());
  if (!(max_in > 0.0)) throw numerical_error("mapping_difficulty: all input distances are zero");
  const double med_out = median({output_dist.begin(), output_dist.end()});
  out.degenerate_median = !(med_out > 0.0);
  out.norm_input.resize(n);
  out.norm_output.resize(n);
  out.ratios.resize(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(input_dist[i] > 0.0)) throw numerical_error("mapping_difficulty: zero input distance");
    out.norm_input[i] = input_dist[i] / max_in;
    out.norm_output[i] = out.degenerate_median ? 0.0 : output_dist[i] / med_out;
    out.ratios[i] = out.norm_output[i] / out.norm_input[i];
    sum += out.ratios[i];
  }
  out.md = sum / static_cast<double>(n);
  return out;
}

std::vector<PairRecord> pair_records(const LayerTrace& trace, std::size_t k, std::span<const SampledPair> pairs,
                                     bool* degenerate_median) {
  auto y = trace.values_of(k);
  std::vector<double> in, outd;
  for (const auto& p : pairs) {
    in.push_back(p.input_dist);
    outd.push_back(std::fabs(static_cast<double>(y[p.a]) - y[p.b]));
  }
  auto md = mapping_difficulty(in, outd);
  if (degenerate_median) *degenerate_median = md.degenerate_median;
  std::vector<PairRecord> records;
  records.reserve(pairs.size());
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const auto& p = pairs[n];
    PairRecord r;
    r.i = {trace.index[p.a], trace.token[p.a], trace.doc[p.a]};
    r.j = {trace.index[p.b], trace.token[p.b], trace.doc[p.b]};
    r.y_i = y[p.a];
    r.y_j = y[p.b];
    r.input_dist = in[n];
    r.output_dist = outd[n];
    r.norm_input = md.norm_input[n];
    r.norm_output = md.norm_output[n];
    r.ratio = md.ratios[n];
    r.sign = classify_signs(r.y_i, r.y_j);
    records.push_back(r);
  }
  return records;
}

std::vector<PairRecord> top_differentiated(std::span<const PairRecord> pairs, std::size_t k) {
  if (k > pairs.size()) {
    throw input_error("top_differentiated: k=" + std::to_string(k) + " exceeds pair count " +
                      std::to_string(pairs.size()));
  }
  std::vector<PairRecord> sorted(pairs.begin(), pairs.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const PairRecord& a, const PairRecord& b) {
    if (a.ratio != b.ratio) return a.ratio > b.ratio;
    if (a.i.index != b.i.index) return a.i.index < b.i.index;
    return a.j.index < b.j.index;
  });
  sorted.resize(k);
  return sorted;
}

SignComposition sign_composition(std::span<const std::vector<PairRecord>> per_neuron) {
  if (per_neuron.empty()) throw input_error("sign_composition: no neurons");
  std::array<std::vector<double>, 3> props;
  for (const auto& pairs : per_neuron) {
    if (pairs.empty()) throw input_error("sign_composition: neuron with no classified pairs");
    std::array<std::size_t, 3> counts{};
    for (const auto& p : pairs) ++counts[static_cast<std::size_t>(p.sign)];
    for (std::size_t c = 0; c < 3; ++c) {
      props[c].push_back(static_cast<double>(counts[c]) / static_cast<double>(pairs.size()));
    }
  }
  SignComposition out;
  out.neurons = per_neuron.size();
  for (std::size_t c = 0; c < 3; ++c) {
    out.proportion[c] = mean(props[c]);
    out.sem[c] = sem(props[c]);
  }
  return out;
}

}  // namespace wnprobe
