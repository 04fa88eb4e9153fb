// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "wnprobe/error.hpp"
#include "wnprobe/stats.hpp"

namespace wnprobe {

using nlohmann::json;

double NllStream::mean() const {
  if (nll.empty()) throw input_error("no predicted tokens");
  double s = 0.0;
  for (double v : nll) s += v;
  return s / static_cast<double>(nll.size());
}

double NllStream::perplexity() const { return std::exp(mean()); }

double token_logprob(std::span<const float> logits, TokenId target) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  return static_cast<double>(logits[target]) - mx - std::log(sum);
}

NllStream token_nll(const Model& model, const Corpus& corpus, const WindowPlan& plan, const AblationSpec* ablation,
                    std::size_t threads) {
  if (corpus.vocab_size > model.config().vocab_size) {
    throw input_error("corpus vocabulary is larger than the model vocabulary");
  }
  if (plan.context > model.config().context_length) throw input_error("window plan exceeds the context length");
  std::vector<std::vector<double>> per_window(plan.windows.size());
  HookSet hooks;
  hooks.ablation = ablation;
  parallel_for(plan.windows.size(), threads, [&](std::size_t w) {
    const TokenSequence seq = plan.sequence(corpus, w);
    const ForwardResult r = model.forward(seq, hooks);
    auto& out = per_window[w];
    out.reserve(seq.ids.size() - 1);
    for (std::size_t t = 0; t + 1 < seq.ids.size(); ++t) out.push_back(-token_logprob(r.logits_at(t), seq.ids[t + 1]));
  });
  NllStream s;
  s.policy = plan.policy();
  for (std::size_t w = 0; w < plan.windows.size(); ++w) {
    for (std::size_t k = 0; k < per_window[w].size(); ++k) {
      s.index.push_back(plan.windows[w].begin + 1 + k);
      s.nll.push_back(per_window[w][k]);
    }
  }
  return s;
}

double perplexity(const Model& model, const Corpus& corpus, const AblationSpec* ablation, std::size_t threads) {
  if (corpus.size() < 2) throw input_error("perplexity needs at least 2 tokens");
  const WindowPlan plan = plan_windows(corpus, model.config().context_length);
  if (plan.windows.empty()) throw input_error("corpus has no window with at least 2 tokens");
  return token_nll(model, corpus, plan, ablation, threads).perplexity();
}

double sentence_logprob(const Model& model, std::span<const TokenId> tokens, const AblationSpec* ablation) {
  if (tokens.empty()) throw input_error("cannot score an empty sentence");
  const auto& c = model.config();
  if (tokens.size() + 1 > c.context_length) {
    throw input_error("sentence of " + std::to_string(tokens.size()) + " tokens plus BOS exceeds the context length " +
                      std::to_string(c.context_length));
  }
  TokenSequence seq;
  seq.ids.reserve(tokens.size() + 1);
  seq.ids.push_back(static_cast<TokenId>(c.bos_token_id));
  seq.ids.insert(seq.ids.end(), tokens.begin(), tokens.end());
  HookSet hooks;
  hooks.ablation = ablation;
  const ForwardResult r = model.forward(seq, hooks);
  double lp = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) lp += token_logprob(r.logits_at(t), tokens[t]);
  return lp;
}

MinimalPairSet load_minimal_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open minimal-pair file " + path.string());
  MinimalPairSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      MinimalPair p;
      p.pair_id = j.at("pair_id").is_string() ? j.at("pair_id").get<std::string>() : j.at("pair_id").dump();
      p.category = j.at("category").get<std::string>();
      p.phenomenon = j.value("phenomenon", std::string());
      p.good = j.at("good_ids").get<std::vector<TokenId>>();
      p.bad = j.at("bad_ids").get<std::vector<TokenId>>();
      if (p.good.empty() || p.bad.empty()) throw input_error("empty sentence");
      if (p.category.empty()) throw input_error("empty category");
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw input_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw input_error(path.string() + ": no minimal pairs");
  return out;
}

AccuracyCell accuracy_cell(std::size_t correct, std::size_t n) {
  AccuracyCell c;
  c.n = n;
  c.correct = correct;
  c.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  c.sem = proportion_sem(c.accuracy, n);
  return c;
}

PairAccuracy minimal_pair_accuracy(const Model& model, const MinimalPairSet& pairs, const AblationSpec* ablation,
                                   std::size_t threads) {
  if (pairs.empty()) throw input_error("minimal-pair set is empty");
  PairAccuracy out;
  out.good_logprob.resize(pairs.size());
  out.bad_logprob.resize(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    out.good_logprob[i] = sentence_logprob(model, pairs[i].good, ablation);
    out.bad_logprob[i] = sentence_logprob(model, pairs[i].bad, ablation);
  });
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool ok = out.good_logprob[i] > out.bad_logprob[i];
    out.correct.push_back(ok);
    correct += ok;
    auto& t = tally[pairs[i].category];
    t.first += ok;
    ++t.second;
  }
  out.overall = accuracy_cell(correct, pairs.size());
  for (const auto& [cat, t] : tally) out.by_category[cat] = accuracy_cell(t.first, t.second);
  return out;
}

NllDiff nll_diff(const NllStream& a, const NllStream& b) {
  if (a.index != b.index || a.policy != b.policy) {
    throw std::logic_error("nll_diff: streams come from different window plans");
  }
  NllDiff d;
  d.index = a.index;
  d.diff.resize(a.nll.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.nll.size(); ++i) {
    d.diff[i] = a.nll[i] - b.nll[i];
    s += d.diff[i];
  }
  d.global_mean = d.diff.empty() ? 0.0 : s / static_cast<double>(d.diff.size());
  return d;
}

NllDiff token_nll_diff(const Model& model, const Corpus& corpus, const WindowPlan& plan, const AblationSpec* a,
                       const AblationSpec* b, std::size_t threads) {
  return nll_diff(token_nll(model, corpus, plan, a, threads), token_nll(model, corpus, plan, b, threads));
}

PosSurprisalTable pos_stratified(const NllDiff& diff, std::span<const std::string> tags) {
  if (tags.size() != diff.diff.size()) {
    throw input_error("POS annotations cover " + std::to_string(tags.size()) + " tokens, the diff stream has " +
                      std::to_string(diff.diff.size()));
  }
  PosSurprisalTable table;
  table.global_mean = diff.global_mean;
  std::map<std::string, std::vector<double>> groups;
  for (std::size_t i = 0; i < tags.size(); ++i) groups[tags[i]].push_back(diff.diff[i] - diff.global_mean);
  for (const auto& [tag, vals] : groups) table.rows.push_back({tag, mean(vals), sem(vals), vals.size()});
  return table;
}

std::map<std::uint64_t, std::string> load_pos_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open POS annotation file " + path.string());
  std::map<std::uint64_t, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out[j.at("index").get<std::uint64_t>()] = j.at("tag").get<std::string>();
    } catch (const json::exception& e) {
      throw input_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> align_tags(const std::map<std::uint64_t, std::string>& annotations,
                                    std::span<const std::uint64_t> index) {
  std::vector<std::string> tags;
  tags.reserve(index.size());
  for (auto i : index) {
    auto it = annotations.find(i);
    if (it == annotations.end()) throw input_error("no POS tag for predicted token " + std::to_string(i));
    tags.push_back(it->second);
  }
  return tags;
}

SweepMode parse_sweep_mode(std::string_view s) {
  if (s == "single") return SweepMode::single;
  if (s == "cumulative") return SweepMode::cumulative;
  throw input_error("unknown sweep mode '" + std::string(s) + "'");
}

std::string_view to_string(SweepMode m) { return m == SweepMode::single ? "single" : "cumulative"; }

LayerGroups parse_layer_groups(std::string_view text) {
  LayerGroups groups;
  auto number = [&](std::string_view s) {
    std::size_t v = 0;
    if (s.empty()) throw input_error("malformed layer groups '" + std::string(text) + "'");
    for (char ch : s) {
      if (ch < '0' || ch > '9') throw input_error("malformed layer groups '" + std::string(text) + "'");
      v = v * 10 + static_cast<std::size_t>(ch - '0');
    }
    return v;
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, comma - pos);
    const std::size_t dash = item.find('-');
    std::vector<std::size_t> g;
    if (dash == std::string_view::npos) {
      g.push_back(number(item));
    } else {
      const std::size_t a = number(item.substr(0, dash));
      const std::size_t b = number(item.substr(dash + 1));
      if (b < a) throw input_error("layer range '" + std::string(item) + "' is reversed");
      for (std::size_t l = a; l <= b; ++l) g.push_back(l);
    }
    groups.push_back(std::move(g));
    pos = comma + 1;
  }
  return groups;
}

void validate_partition(const LayerGroups& groups, std::size_t n_layers) {
  std::vector<int> seen(n_layers, 0);
  for (const auto& g : groups) {
    if (g.empty()) throw input_error("layer groups: empty group");
    for (auto l : g) {
      if (l >= n_layers) throw input_error("layer groups: layer " + std::to_string(l) + " out of range");
      if (seen[l]++) throw input_error("layer groups: layer " + std::to_string(l) + " appears twice");
    }
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (!seen[l]) throw input_error("layer groups: layer " + std::to_string(l) + " is not covered");
  }
}

std::vector<std::set<std::size_t>> sweep_masks(const LayerGroups& groups, SweepMode mode) {
  std::vector<std::set<std::size_t>> masks;
  std::set<std::size_t> acc;
  for (const auto& g : groups) {
    if (mode == SweepMode::single) {
      masks.emplace_back(g.begin(), g.end());
    } else {
      acc.insert(g.begin(), g.end());
      masks.push_back(acc);
    }
  }
  return masks;
}

std::vector<SweepEntry> layer_group_sweep(const Model& model, const Corpus& corpus, const MinimalPairSet* pairs,
                                          const NeuronSet& neurons, const LayerGroups& groups, SweepMode mode,
                                          std::size_t threads) {
  validate_partition(groups, model.config().n_layers);
  std::vector<SweepEntry> out;
  const auto masks = sweep_masks(groups, mode);
  for (std::size_t g = 0; g < masks.size(); ++g) {
    AblationSpec spec;
    spec.neurons = neurons;
    spec.layer_mask = masks[g];
    SweepEntry e;
    e.group = g;
    e.mask = masks[g];
    e.perplexity = perplexity(model, corpus, &spec, threads);
    if (pairs) e.accuracy = minimal_pair_accuracy(model, *pairs, &spec, threads);
    out.push_back(std::move(e));
  }
  return out;
}

json to_json(const AccuracyCell& cell) {
  return {{"n", cell.n}, {"correct", cell.correct}, {"accuracy", cell.accuracy}, {"sem", cell.sem}};
}

json to_json(const PairAccuracy& acc) {
  json cats = json::object();
  for (const auto& [k, v] : acc.by_category) cats[k] = to_json(v);
  return {{"overall", to_json(acc.overall)}, {"by_category", cats}};
}

json to_json(const PosSurprisalTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) rows.push_back({{"tag", r.tag}, {"mean", r.mean}, {"sem", r.sem}, {"count", r.count}});
  return {{"global_mean", table.global_mean}, {"rows", rows}};
}

}  // namespace wnprobe
