// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/report.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "wnprobe/error.hpp"
#include "wnprobe/random.hpp"
#include "wnprobe/text.hpp"

namespace wnprobe {
namespace {

using nlohmann::json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::vector<std::string> flag_names(std::uint32_t flags) {
  std::vector<std::string> out;
  if (flags & flag_degenerate_variance) out.emplace_back("degenerate_variance");
  if (flags & flag_degenerate_median) out.emplace_back("degenerate_median");
  return out;
}

std::uint32_t parse_flags(const json& j) {
  std::uint32_t flags = 0;
  for (const auto& f : j) {
    const auto s = f.get<std::string>();
    if (s == "degenerate_variance") {
      flags |= flag_degenerate_variance;
    } else if (s == "degenerate_median") {
      flags |= flag_degenerate_median;
    } else {
      throw input_error("unknown neuron flag '" + s + "'");
    }
  }
  return flags;
}

std::string csv_cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace

std::vector<std::size_t> EntanglementReport::layers() const {
  std::vector<std::size_t> out;
  for (const auto& n : neurons) {
    if (out.empty() || out.back() != n.neuron.layer) out.push_back(n.neuron.layer);
  }
  return out;
}

const NeuronRecord* EntanglementReport::find(const NeuronId& n) const {
  auto it = std::lower_bound(neurons.begin(), neurons.end(), n,
                             [](const NeuronRecord& r, const NeuronId& id) { return r.neuron < id; });
  return it != neurons.end() && it->neuron == n ? &*it : nullptr;
}

std::vector<LayerSummary> EntanglementReport::summary() const {
  std::vector<LayerSummary> out;
  for (auto layer : layers()) {
    LayerSummary s;
    s.layer = layer;
    double wd_sum = 0.0, md_sum = 0.0;
    std::size_t wd_n = 0, md_n = 0;
    for (const auto& r : neurons) {
      if (r.neuron.layer != layer) continue;
      ++s.neurons;
      if (r.flags & flag_degenerate_variance) ++s.degenerate;
      if (r.wd) {
        wd_sum += *r.wd;
        ++wd_n;
        if (!s.max_wd || *r.wd > *s.max_wd) {
          s.max_wd = r.wd;
          s.max_wd_row = r.neuron.row;
        }
      }
      if (r.md) {
        md_sum += *r.md;
        ++md_n;
      }
    }
    if (wd_n) s.mean_wd = wd_sum / static_cast<double>(wd_n);
    if (md_n) s.mean_md = md_sum / static_cast<double>(md_n);
    out.push_back(s);
  }
  return out;
}

json to_json(const EntanglementReport& report) {
  json j;
  j["format"] = "wnprobe-entanglement/1";
  j["model_checksum"] = report.model_checksum;
  j["corpus"] = {{"name", report.corpus_name}, {"checksum", report.corpus_checksum}};
  json metrics = json::array();
  if (report.has_wd) metrics.push_back("wd");
  if (report.has_md) metrics.push_back("md");
  j["metrics"] = metrics;
  j["seed"] = report.seed;
  j["tokens"] = report.tokens;
  j["pairs"] = report.pairs;
  j["top_k"] = report.top_k;
  j["reservoir_limit"] = report.reservoir_limit;
  j["d_mlp"] = report.d_mlp;
  json neurons = json::array();
  for (const auto& r : report.neurons) {
    json n;
    n["layer"] = r.neuron.layer;
    n["projection"] = std::string(to_string(r.neuron.projection));
    n["row"] = r.neuron.row;
    n["samples"] = r.samples;
    n["wd"] = optional_number(r.wd);
    n["md"] = optional_number(r.md);
    if (r.signs) n["signs"] = {{"nn", (*r.signs)[0]}, {"pn", (*r.signs)[1]}, {"pp", (*r.signs)[2]}};
    n["flags"] = flag_names(r.flags);
    neurons.push_back(std::move(n));
  }
  j["neurons"] = std::move(neurons);
  json summary = json::array();
  for (const auto& s : report.summary()) {
    summary.push_back({{"layer", s.layer},
                       {"neurons", s.neurons},
                       {"degenerate", s.degenerate},
                       {"mean_wd", optional_number(s.mean_wd)},
                       {"max_wd", optional_number(s.max_wd)},
                       {"max_wd_row", s.max_wd_row ? json(*s.max_wd_row) : json(nullptr)},
                       {"mean_md", optional_number(s.mean_md)}});
  }
  j["summary"] = std::move(summary);
  return j;
}

EntanglementReport report_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "wnprobe-entanglement/1") {
      throw input_error("not an entanglement report (format field missing or unknown)");
    }
    EntanglementReport r;
    r.model_checksum = j.at("model_checksum").get<std::string>();
    r.corpus_name = j.at("corpus").at("name").get<std::string>();
    r.corpus_checksum = j.at("corpus").at("checksum").get<std::string>();
    for (const auto& m : j.at("metrics")) {
      r.has_wd |= m == "wd";
      r.has_md |= m == "md";
    }
    r.seed = j.at("seed").get<std::uint64_t>();
    r.tokens = j.at("tokens").get<std::size_t>();
    r.pairs = j.at("pairs").get<std::size_t>();
    r.top_k = j.at("top_k").get<std::size_t>();
    r.reservoir_limit = j.at("reservoir_limit").get<std::size_t>();
    r.d_mlp = j.at("d_mlp").get<std::size_t>();
    for (const auto& n : j.at("neurons")) {
      NeuronRecord rec;
      rec.neuron.layer = n.at("layer").get<std::uint32_t>();
      rec.neuron.projection = parse_projection(n.at("projection").get<std::string>());
      rec.neuron.row = n.at("row").get<std::uint32_t>();
      rec.samples = n.at("samples").get<std::size_t>();
      rec.wd = number_or_null(n, "wd");
      rec.md = number_or_null(n, "md");
      if (n.contains("signs")) {
        const auto& s = n.at("signs");
        rec.signs = std::array<double, 3>{s.at("nn").get<double>(), s.at("pn").get<double>(), s.at("pp").get<double>()};
      }
      rec.flags = parse_flags(n.at("flags"));
      r.neurons.push_back(std::move(rec));
    }
    std::sort(r.neurons.begin(), r.neurons.end(),
              [](const NeuronRecord& a, const NeuronRecord& b) { return a.neuron < b.neuron; });
    return r;
  } catch (const json::exception& e) {
    throw input_error(std::string("malformed entanglement report: ") + e.what());
  }
}

EntanglementReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open report " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw input_error(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

std::string report_csv(const EntanglementReport& report) {
  std::ostringstream out;
  out << "layer,row,wd,md,nn,pn,pp,flags\n";
  for (const auto& r : report.neurons) {
    out << r.neuron.layer << ',' << r.neuron.row << ',' << csv_cell(r.wd) << ',' << csv_cell(r.md);
    for (std::size_t c = 0; c < 3; ++c) out << ',' << (r.signs ? format_number((*r.signs)[c]) : std::string());
    auto names = flag_names(r.flags);
    out << ',';
    for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "|" : "") << names[i];
    out << '\n';
  }
  return out.str();
}

std::string summary_csv(const EntanglementReport& report) {
  std::ostringstream out;
  out << "layer,neurons,degenerate,mean_wd,max_wd,max_wd_row,mean_md\n";
  for (const auto& s : report.summary()) {
    out << s.layer << ',' << s.neurons << ',' << s.degenerate << ',' << csv_cell(s.mean_wd) << ','
        << csv_cell(s.max_wd) << ',' << (s.max_wd_row ? std::to_string(*s.max_wd_row) : std::string()) << ','
        << csv_cell(s.mean_md) << '\n';
  }
  return out.str();
}

std::vector<LayerPairs> collect_pairs(const Model& model, const Corpus& corpus, const std::vector<std::size_t>& layers,
                                      std::size_t tokens, std::size_t pairs, std::uint64_t seed, std::size_t threads) {
  const std::uint64_t n = corpus.size();
  if (tokens > n) {
    throw input_error("pair analysis needs " + std::to_string(tokens) + " tokens, corpus has " + std::to_string(n));
  }
  // Spares replace endpoints of pairs whose inputs coincide.
  const std::uint64_t spare = std::min<std::uint64_t>(n - tokens, tokens / 8 + 16);
  std::vector<std::uint64_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  shuffle(all, rng);
  all.resize(tokens + spare);

  PointCollector collector(layers, all, model.config());
  HookSet hooks;
  hooks.observers.push_back(&collector);
  const WindowPlan plan = coverage_plan(corpus, model.config().context_length);
  run_windows(model, corpus, plan, hooks, threads);
  TraceSet traces = collector.drain(corpus.checksum);

  std::vector<LayerPairs> out;
  for (auto& lt : traces.layers) {
    LayerPairs lp;
    lp.sampling = sample_pairs(lt, std::min<std::size_t>(lt.samples(), tokens), pairs, seed);
    lp.trace = std::move(lt);
    out.push_back(std::move(lp));
  }
  return out;
}

EntanglementReport scan(const Model& model, const Corpus& corpus, const std::string& model_checksum,
                        const ScanOptions& options, ScanArtifacts* artifacts) {
  const auto& config = model.config();
  if (!options.wd && !options.md) throw input_error("scan: no metric selected");
  std::vector<std::size_t> layers;
  if (options.layers) {
    layers = *options.layers;
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  } else {
    layers.resize(config.n_layers);
    std::iota(layers.begin(), layers.end(), 0);
  }
  if (layers.empty()) throw input_error("scan: no layers selected");
  for (auto l : layers) {
    if (l >= config.n_layers) throw input_error("scan: layer " + std::to_string(l) + " out of range");
  }
  if (options.md && (options.top_k == 0 || options.top_k > options.pairs)) {
    throw input_error("top-k (" + std::to_string(options.top_k) + ") must be in [1, pairs] (pairs = " +
                      std::to_string(options.pairs) + ")");
  }

  EntanglementReport report;
  report.model_checksum = model_checksum;
  report.corpus_name = corpus.name;
  report.corpus_checksum = corpus.checksum;
  report.has_wd = options.wd;
  report.has_md = options.md;
  report.seed = options.seed;
  report.d_mlp = config.d_mlp;
  report.reservoir_limit = options.reservoir_limit;
  if (options.md) {
    report.tokens = options.tokens;
    report.pairs = options.pairs;
    report.top_k = options.top_k;
  }
  const Projection proj = preactivation_projection(config);
  for (auto l : layers) {
    for (std::uint32_t r = 0; r < config.d_mlp; ++r) {
      NeuronRecord rec;
      rec.neuron = {static_cast<std::uint32_t>(l), proj, r};
      report.neurons.push_back(rec);
    }
  }
  auto record = [&](std::size_t layer_pos, std::size_t row) -> NeuronRecord& {
    return report.neurons[layer_pos * config.d_mlp + row];
  };

  if (options.wd) {
    CaptureSpec spec;
    spec.wildcard_layers = layers;
    spec.seed = options.seed;
    if (options.reservoir_limit) spec.reservoir_limit = options.reservoir_limit;
    TraceSet traces = capture(model, corpus, spec, options.threads);
    for (std::size_t li = 0; li < traces.layers.size(); ++li) {
      const LayerTrace& lt = traces.layers[li];
      parallel_for(lt.rows.size(), options.threads, [&](std::size_t k) {
        NeuronRecord& rec = record(li, lt.rows[k]);
        auto values = lt.values_of(k);
        rec.samples = values.size();
        auto ns = normalize(values);
        if (ns.degenerate_variance) {
          rec.flags |= flag_degenerate_variance;
        } else {
          rec.wd = wd_to_gaussian(ns);
        }
      });
    }
    if (artifacts) artifacts->traces = std::move(traces);
  }

  if (options.md) {
    auto layer_pairs = collect_pairs(model, corpus, layers, options.tokens, options.pairs, options.seed, options.threads);
    for (std::size_t li = 0; li < layer_pairs.size(); ++li) {
      const auto& lp = layer_pairs[li];
      parallel_for(lp.trace.rows.size(), options.threads, [&](std::size_t k) {
        NeuronRecord& rec = record(li, lp.trace.rows[k]);
        bool degenerate = false;
        auto records = pair_records(lp.trace, k, lp.sampling.pairs, &degenerate);
        double sum = 0.0;
        for (const auto& p : records) sum += p.ratio;
        rec.md = sum / static_cast<double>(records.size());
        if (degenerate) rec.flags |= flag_degenerate_median;
        auto top = top_differentiated(records, options.top_k);
        std::array<double, 3> counts{};
        for (const auto& p : top) counts[static_cast<std::size_t>(p.sign)] += 1.0;
        for (auto& c : counts) c /= static_cast<double>(top.size());
        rec.signs = counts;
      });
    }
    if (artifacts) artifacts->pairs = std::move(layer_pairs);
  }
  return report;
}

}  // namespace wnprobe
