// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "wnprobe/error.hpp"
#include "wnprobe/random.hpp"
#include "wnprobe/stats.hpp"
#include "wnprobe/text.hpp"

namespace wnprobe {

using nlohmann::json;

std::string_view to_string(SelectionRule r) {
  switch (r) {
    case SelectionRule::top_wd_fraction: return "top_wd_fraction";
    case SelectionRule::top_md_fraction: return "top_md_fraction";
    case SelectionRule::random: return "random";
    case SelectionRule::bottom_wd_fraction: return "bottom_wd_fraction";
  }
  return "?";
}

SelectionRule parse_selection_rule(std::string_view s) {
  for (auto r : {SelectionRule::top_wd_fraction, SelectionRule::top_md_fraction, SelectionRule::random,
                 SelectionRule::bottom_wd_fraction}) {
    if (to_string(r) == s) return r;
  }
  throw input_error("unknown selection rule '" + std::string(s) + "'");
}

std::vector<std::uint32_t> Cohort::rows_in_layer(std::size_t layer) const {
  std::vector<std::uint32_t> rows;
  for (const auto& n : neurons) {
    if (n.layer == layer) rows.push_back(n.row);
  }
  return rows;
}

AblationSpec Cohort::ablation(std::optional<std::set<std::size_t>> layer_mask) const {
  AblationSpec spec;
  spec.neurons = neurons;
  spec.layer_mask = std::move(layer_mask);
  return spec;
}

json to_json(const Cohort& cohort) {
  json j;
  j["format"] = "wnprobe-cohort/1";
  j["selection_rule"] = std::string(to_string(cohort.rule));
  j["fraction"] = cohort.fraction;
  j["seed"] = cohort.seed ? json(*cohort.seed) : json(nullptr);
  j["source_report"] = cohort.source_report;
  json layers = json::array();
  for (auto l : cohort.layers) {
    Projection proj = Projection::up;
    for (const auto& n : cohort.neurons) {
      if (n.layer == l) proj = n.projection;
    }
    layers.push_back({{"layer", l}, {"projection", std::string(to_string(proj))}, {"rows", cohort.rows_in_layer(l)}});
  }
  j["layers"] = std::move(layers);
  j["size"] = cohort.neurons.size();
  return j;
}

Cohort cohort_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "wnprobe-cohort/1") throw input_error("not a cohort file");
    Cohort c;
    c.rule = parse_selection_rule(j.at("selection_rule").get<std::string>());
    c.fraction = j.at("fraction").get<double>();
    if (!j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    c.source_report = j.at("source_report").get<std::string>();
    for (const auto& l : j.at("layers")) {
      const auto layer = l.at("layer").get<std::uint32_t>();
      const auto proj = parse_projection(l.at("projection").get<std::string>());
      c.layers.push_back(layer);
      for (const auto& r : l.at("rows")) {
        if (!c.neurons.insert({layer, proj, r.get<std::uint32_t>()}).second) {
          throw input_error("cohort lists neuron L" + std::to_string(layer) + " row " + r.dump() + " twice");
        }
      }
    }
    return c;
  } catch (const json::exception& e) {
    throw input_error(std::string("malformed cohort: ") + e.what());
  }
}

Cohort read_cohort(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open cohort file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw input_error(path.string() + ": " + e.what());
  }
  return cohort_from_json(j);
}

std::size_t per_layer_count(double fraction, std::size_t d_mlp) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw input_error("selection fraction must lie in (0, 1], got " + format_number(fraction));
  }
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d_mlp) + 0.5));
  return std::clamp<std::size_t>(n, 1, d_mlp);
}

namespace {

Cohort select_ranked(const EntanglementReport& report, Metric metric, double fraction, bool descending,
                     const std::string& report_checksum) {
  if (metric == Metric::wd && !report.has_wd) throw input_error("report carries no WD values");
  if (metric == Metric::md && !report.has_md) throw input_error("report carries no MD values");
  const std::size_t count = per_layer_count(fraction, report.d_mlp);
  Cohort c;
  c.fraction = fraction;
  c.source_report = report_checksum;
  c.layers = report.layers();
  for (auto layer : c.layers) {
    std::vector<const NeuronRecord*> ranked;
    std::size_t in_layer = 0;
    for (const auto& r : report.neurons) {
      if (r.neuron.layer != layer) continue;
      ++in_layer;
      const auto& v = metric == Metric::wd ? r.wd : r.md;
      if (!v || (metric == Metric::wd && (r.flags & flag_degenerate_variance)) ||
          (metric == Metric::md && (r.flags & flag_degenerate_median))) {
        continue;
      }
      ranked.push_back(&r);
    }
    if (in_layer != report.d_mlp) {
      throw input_error("report covers " + std::to_string(in_layer) + " of " + std::to_string(report.d_mlp) +
                        " neurons in layer " + std::to_string(layer));
    }
    std::stable_sort(ranked.begin(), ranked.end(), [&](const NeuronRecord* a, const NeuronRecord* b) {
      const double va = metric == Metric::wd ? *a->wd : *a->md;
      const double vb = metric == Metric::wd ? *b->wd : *b->md;
      if (va != vb) return descending ? va > vb : va < vb;
      return a->neuron.row < b->neuron.row;
    });
    const std::size_t take = std::min(count, ranked.size());
    for (std::size_t i = 0; i < take; ++i) c.neurons.insert(ranked[i]->neuron);
  }
  return c;
}

}  // namespace

Cohort select_top_fraction(const EntanglementReport& report, Metric metric, double fraction,
                           const std::string& report_checksum) {
  Cohort c = select_ranked(report, metric, fraction, true, report_checksum);
  c.rule = metric == Metric::wd ? SelectionRule::top_wd_fraction : SelectionRule::top_md_fraction;
  return c;
}

Cohort select_bottom_fraction(const EntanglementReport& report, double fraction, const std::string& report_checksum) {
  Cohort c = select_ranked(report, Metric::wd, fraction, false, report_checksum);
  c.rule = SelectionRule::bottom_wd_fraction;
  return c;
}

Cohort select_random_control(const std::vector<std::size_t>& layers, std::size_t d_mlp, Projection projection,
                             std::size_t count, std::uint64_t seed, const NeuronSet& exclusions) {
  Cohort c;
  c.rule = SelectionRule::random;
  c.seed = seed;
  c.fraction = d_mlp ? static_cast<double>(count) / static_cast<double>(d_mlp) : 0.0;
  c.layers = layers;
  Rng rng(seed);
  for (auto layer : layers) {
    std::vector<std::uint32_t> pool;
    for (std::uint32_t r = 0; r < d_mlp; ++r) {
      if (!exclusions.count({static_cast<std::uint32_t>(layer), projection, r})) pool.push_back(r);
    }
    if (count > pool.size()) {
      throw input_error("random control: " + std::to_string(count) + " neurons requested in layer " +
                        std::to_string(layer) + " but only " + std::to_string(pool.size()) + " are eligible");
    }
    // Partial Fisher-Yates: the first `count` slots end up a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
      std::swap(pool[i], pool[j]);
      c.neurons.insert({static_cast<std::uint32_t>(layer), projection, pool[i]});
    }
  }
  return c;
}

MatchResult match_perplexity(double target, const std::function<double(double)>& eval, double tolerance,
                             std::size_t max_iters) {
  if (!(target > 0.0) || !std::isfinite(target)) throw input_error("match: target perplexity must be positive");
  if (!(tolerance > 0.0)) throw input_error("match: tolerance must be positive");
  MatchResult out;
  auto within = [&](double v) { return std::fabs(v - target) / target <= tolerance; };
  auto probe = [&](const char* phase, double m) {
    const double v = eval(m);
    if (!std::isfinite(v)) throw numerical_error("match: perplexity at m=" + format_number(m) + " is not finite");
    out.log.push_back({phase, m, v});
    return v;
  };
  auto finish = [&](double m, double v, bool converged) {
    out.m = m;
    out.perplexity = v;
    out.converged = converged;
    return out;
  };

  double lo = 0.0;
  double v_lo = probe("baseline", 0.0);
  if (within(v_lo)) return finish(0.0, v_lo, true);
  if (v_lo > target) {
    throw search_error("match: baseline perplexity " + format_number(v_lo) + " already exceeds the target " +
                       format_number(target));
  }
  double hi = 1.0 / 16.0;
  double v_hi;
  for (;;) {
    v_hi = probe("expand", hi);
    if (within(v_hi)) return finish(hi, v_hi, true);
    if (v_hi >= target) break;
    if (v_hi < v_lo) out.warnings.push_back("non-monotone: eval(" + format_number(hi) + ") < eval(" + format_number(lo) + ")");
    if (hi == 1.0) {
      out.bracket_failed = true;
      return finish(1.0, v_hi, false);
    }
    lo = hi;
    v_lo = v_hi;
    hi = std::min(1.0, 2.0 * hi);
  }

  double best_m = hi, best_v = v_hi;
  for (std::size_t it = 0; it < max_iters; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double v = probe("bisect", mid);
    ++out.bisection_steps;
    if (std::fabs(v - target) < std::fabs(best_v - target)) {
      best_m = mid;
      best_v = v;
    }
    if (within(v)) return finish(mid, v, true);
    if (v < v_lo || v > v_hi) {
      out.warnings.push_back("non-monotone sample at m=" + format_number(mid) + ": " + format_number(v) +
                             " outside [" + format_number(v_lo) + ", " + format_number(v_hi) + "]");
    }
    if (v < target) {
      lo = mid;
      v_lo = v;
    } else {
      hi = mid;
      v_hi = v;
    }
  }
  return finish(best_m, best_v, false);
}

CohortTimeSeries cohort_dissimilarity(const std::vector<const WeightSet*>& checkpoints,
                                      const std::vector<std::string>& labels, const Cohort& cohort) {
  if (checkpoints.size() < 2) throw input_error("cohort dissimilarity needs at least 2 checkpoints");
  if (labels.size() != checkpoints.size()) throw input_error("one label per checkpoint required");
  const ModelConfig& c0 = checkpoints.front()->config();
  for (const auto* w : checkpoints) {
    const auto& c = w->config();
    if (c.n_layers != c0.n_layers || c.d_mlp != c0.d_mlp || c.d_model != c0.d_model || c.mlp_style != c0.mlp_style) {
      throw input_error("checkpoints have different shapes");
    }
  }
  for (const auto& n : cohort.neurons) validate_neuron(n, c0);

  CohortTimeSeries out;
  out.labels = labels;
  out.neurons.assign(cohort.neurons.begin(), cohort.neurons.end());
  std::set<std::size_t> layers;
  for (const auto& n : cohort.neurons) layers.insert(n.layer);
  const std::string proj = c0.mlp_style == MlpStyle::glu ? "gate" : "up";
  const std::size_t d = c0.d_model;

  for (std::size_t s = 0; s + 1 < checkpoints.size(); ++s) {
    DissimilarityStep step;
    step.from = labels[s];
    step.to = labels[s + 1];
    std::map<std::size_t, std::vector<double>> layer_values;
    for (auto l : layers) {
      const std::string name = "layer." + std::to_string(l) + ".mlp." + proj;
      const Tensor& a = checkpoints[s]->at(name);
      const Tensor& b = checkpoints[s + 1]->at(name);
      auto& vals = layer_values[l];
      for (std::size_t r = 0; r < c0.d_mlp; ++r) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double x = a.data[r * d + i], y = b.data[r * d + i];
          ab += x * y;
          aa += x * x;
          bb += y * y;
        }
        if (aa == 0.0 || bb == 0.0) {
          throw numerical_error("zero-norm weight row L" + std::to_string(l) + " row " + std::to_string(r) +
                                " at checkpoint " + (aa == 0.0 ? labels[s] : labels[s + 1]));
        }
        vals.push_back(std::clamp(1.0 - ab / std::sqrt(aa * bb), 0.0, 2.0));
      }
    }
    std::map<std::size_t, double> layer_mean;
    for (const auto& [l, vals] : layer_values) {
      layer_mean[l] = mean(vals);
      if (layer_mean[l] == 0.0) step.degenerate_layers.push_back(l);
    }
    std::vector<double> defined;
    for (const auto& n : out.neurons) {
      const double raw = layer_values[n.layer][n.row];
      step.raw.push_back(raw);
      const double m = layer_mean[n.layer];
      if (m == 0.0) {
        step.normalized.emplace_back();
      } else {
        step.normalized.emplace_back(raw / m);
        defined.push_back(raw / m);
      }
    }
    if (!defined.empty()) {
      step.mean = mean(defined);
      step.sem = sem(defined);
    }
    out.steps.push_back(std::move(step));
  }
  return out;
}

json to_json(const CohortTimeSeries& series) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["labels"] = series.labels;
  json neurons = json::array();
  for (const auto& n : series.neurons) neurons.push_back(to_string(n));
  j["neurons"] = neurons;
  json steps = json::array();
  for (const auto& s : series.steps) {
    json normalized = json::array();
    for (const auto& v : s.normalized) normalized.push_back(opt(v));
    steps.push_back({{"from", s.from},
                     {"to", s.to},
                     {"raw", s.raw},
                     {"normalized", normalized},
                     {"degenerate_layers", s.degenerate_layers},
                     {"mean", opt(s.mean)},
                     {"sem", opt(s.sem)}});
  }
  j["steps"] = steps;
  json wd = json::array();
  for (std::size_t i = 0; i < series.cohort_wd_mean.size(); ++i) {
    wd.push_back({{"label", series.labels.at(i)},
                  {"mean", opt(series.cohort_wd_mean[i])},
                  {"sem", i < series.cohort_wd_sem.size() ? opt(series.cohort_wd_sem[i]) : json(nullptr)}});
  }
  j["cohort_wd"] = wd;
  return j;
}

}  // namespace wnprobe
