// SPDX-License-Identifier: Apache-2.0
#include "wnprobe_cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>

#include "wnprobe/capture.hpp"
#include "wnprobe/checksum.hpp"
#include "wnprobe/error.hpp"
#include "wnprobe/eval.hpp"
#include "wnprobe/report.hpp"
#include "wnprobe/selection.hpp"
#include "wnprobe/stats.hpp"
#include "wnprobe/text.hpp"

namespace wnprobe::cli {
namespace {

using nlohmann::json;

struct LoadedModel {
  ModelManifest manifest;
  std::unique_ptr<WeightSet> weights;
  std::unique_ptr<Model> model;
  std::string identity;  // checksum of the weight container
};

LoadedModel load(const std::string& path, RunManifest& m, const std::string& role = "model") {
  LoadedModel lm;
  lm.manifest = read_model_manifest(path);
  m.add_input(role, path);
  m.add_input(role + "_weights", lm.manifest.weights);
  lm.weights = std::make_unique<WeightSet>(load_model(lm.manifest));
  lm.model = std::make_unique<Model>(*lm.weights);
  lm.identity = lm.manifest.checksum.empty() ? sha256_file(lm.manifest.weights) : lm.manifest.checksum;
  return lm;
}

Corpus load_corpus_input(const std::string& path, RunManifest& m, const ModelConfig& config) {
  Corpus c = load_corpus(path);
  m.add_input("corpus", path);
  if (c.vocab_size > config.vocab_size) {
    throw input_error("corpus " + path + " uses a vocabulary of " + std::to_string(c.vocab_size) +
                      " but the model has " + std::to_string(config.vocab_size));
  }
  return c;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw input_error(path + ": " + e.what());
  }
}

std::vector<std::size_t> all_layers(const ModelConfig& c) {
  std::vector<std::size_t> v(c.n_layers);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void write_f64(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw input_error("cannot write " + path.string());
}

json cohort_summary(const Cohort& c, const std::string& file_checksum) {
  return {{"selection_rule", std::string(to_string(c.rule))},
          {"fraction", c.fraction},
          {"seed", c.seed ? json(*c.seed) : json(nullptr)},
          {"size", c.neurons.size()},
          {"source_report", c.source_report},
          {"cohort_checksum", file_checksum}};
}

// One evaluated condition of an ablation run.
struct Condition {
  std::string name;
  std::optional<Cohort> cohort;
  std::optional<std::set<std::size_t>> mask;
};

struct ConditionResult {
  NllStream nll;
  double perplexity = 0.0;
  std::optional<PairAccuracy> accuracy;
};

class Evaluator {
 public:
  Evaluator(const LoadedModel& lm, const Corpus& corpus, const MinimalPairSet* pairs, std::size_t threads)
      : lm_(lm), corpus_(corpus), pairs_(pairs), threads_(threads),
        plan_(plan_windows(corpus, lm.manifest.config.context_length)) {
    if (plan_.windows.empty()) throw input_error("corpus has no window with at least 2 tokens");
  }

  ConditionResult run(const Condition& c) const {
    std::optional<AblationSpec> spec;
    if (c.cohort) spec = c.cohort->ablation(c.mask);
    const AblationSpec* ab = spec ? &*spec : nullptr;
    ConditionResult r;
    r.nll = token_nll(*lm_.model, corpus_, plan_, ab, threads_);
    r.perplexity = r.nll.perplexity();
    if (pairs_) r.accuracy = minimal_pair_accuracy(*lm_.model, *pairs_, ab, threads_);
    return r;
  }

  json report(const Condition& c, const ConditionResult& r, const std::string& nll_file,
              const std::string& cohort_checksum) const {
    json j;
    j["format"] = "wnprobe-eval/1";
    j["condition"] = {{"name", c.name},
                      {"ablation", c.cohort ? json("clamp_negative") : json(nullptr)},
                      {"cohort", c.cohort ? cohort_summary(*c.cohort, cohort_checksum) : json(nullptr)},
                      {"layer_mask", c.mask ? json(std::vector<std::size_t>(c.mask->begin(), c.mask->end()))
                                            : json(nullptr)}};
    j["model_checksum"] = lm_.identity;
    j["corpus"] = {{"name", corpus_.name}, {"split", corpus_.split}, {"checksum", corpus_.checksum}};
    j["window_policy"] = plan_.policy();
    j["predicted_tokens"] = r.nll.nll.size();
    j["mean_nll"] = r.nll.mean();
    j["perplexity"] = r.perplexity;
    j["nll_stream"] = {{"file", nll_file}, {"dtype", "f64"}, {"count", r.nll.nll.size()}};
    if (r.accuracy) {
      j["benchmark"] = to_json(*r.accuracy);
      j["benchmark"]["scoring"] = "sum of token log-probabilities, BOS prepended; ties count as incorrect";
    } else {
      j["benchmark"] = nullptr;
    }
    return j;
  }

  const WindowPlan& plan() const { return plan_; }

 private:
  const LoadedModel& lm_;
  const Corpus& corpus_;
  const MinimalPairSet* pairs_;
  std::size_t threads_;
  WindowPlan plan_;
};

std::string csv_accuracy(const std::optional<PairAccuracy>& a) {
  return a ? format_number(a->overall.accuracy) + "," + format_number(a->overall.sem) : std::string(",");
}

}  // namespace

// --- scan ----------------------------------------------------------------------------

int cmd_scan(const ScanArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream&) {
  LoadedModel lm = load(a.model, m);
  Corpus corpus = load_corpus_input(a.corpus, m, lm.manifest.config);
  m.add_seed("scan", a.seed);
  OutputDir dir(c.out_dir, m);

  ScanOptions o;
  o.wd = a.metric != "md";
  o.md = a.metric != "wd";
  o.tokens = a.tokens;
  o.pairs = a.pairs;
  o.top_k = a.top_k;
  o.seed = a.seed;
  if (!a.limit_layers.empty()) o.layers = a.limit_layers;
  o.reservoir_limit = a.reservoir;
  o.threads = c.threads;

  ScanArtifacts artifacts;
  const EntanglementReport report = scan(*lm.model, corpus, lm.identity, o, a.save_traces ? &artifacts : nullptr);
  dir.json("report.json", to_json(report));
  dir.text("report.csv", report_csv(report));
  dir.text("summary.csv", summary_csv(report));
  if (a.save_traces) {
    if (o.wd) write_trace_file(dir.file("traces.bin"), artifacts.traces);
    for (const auto& lp : artifacts.pairs) {
      write_input_side_file(dir.file("inputs_L" + std::to_string(lp.trace.layer) + ".bin"), lp.trace);
    }
  }

  for (const auto& s : report.summary()) {
    out << "layer " << s.layer << ": " << s.neurons << " neurons";
    if (s.mean_wd) out << ", mean WD " << format_number(*s.mean_wd) << ", max WD " << format_number(*s.max_wd);
    if (s.mean_md) out << ", mean MD " << format_number(*s.mean_md);
    if (s.degenerate) out << ", " << s.degenerate << " degenerate";
    out << '\n';
  }
  return 0;
}

// --- ablate --------------------------------------------------------------------------

int cmd_ablate(const AblateArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream&) {
  LoadedModel lm = load(a.model, m);
  const ModelConfig& config = lm.manifest.config;
  Corpus corpus = load_corpus_input(a.corpus, m, config);
  std::optional<MinimalPairSet> pairs;
  if (!a.benchmark.empty()) {
    pairs = load_minimal_pairs(a.benchmark);
    m.add_input("benchmark", a.benchmark);
  }

  std::optional<EntanglementReport> report;
  std::string report_checksum;
  if (!a.report.empty()) {
    report = read_report(a.report);
    report_checksum = sha256_file(a.report);
    m.add_input("report", a.report);
    if (report->model_checksum != lm.identity) {
      throw input_error("report " + a.report + " was computed on model " + report->model_checksum +
                        ", not on " + lm.identity);
    }
  }
  auto need_report = [&](const char* flag) {
    if (!report) throw input_error(std::string(flag) + " needs --report");
  };

  std::optional<std::set<std::size_t>> mask;
  if (!a.layers.empty()) {
    mask.emplace(a.layers.begin(), a.layers.end());
    for (auto l : *mask) {
      if (l >= config.n_layers) throw input_error("--layers: layer " + std::to_string(l) + " out of range");
    }
  }

  OutputDir dir(c.out_dir, m);
  std::vector<Condition> conditions;
  std::map<std::string, std::string> cohort_checksums;
  auto add_cohort_condition = [&](const std::string& name, Cohort cohort) {
    const std::string file = "cohort_" + name + ".json";
    const std::string text = to_json(cohort).dump(2) + "\n";
    dir.text(file, text);
    cohort_checksums[name] = sha256_bytes(text);
    conditions.push_back({name, std::move(cohort), mask});
  };
  conditions.push_back({"baseline", std::nullopt, std::nullopt});

  std::optional<Cohort> primary;  // the Wasserstein cohort, excluded from random controls
  if (a.top_wd && *a.top_wd > 0.0) {
    need_report("--top-wd");
    primary = select_top_fraction(*report, Metric::wd, *a.top_wd, report_checksum);
    add_cohort_condition("top_wd", *primary);
  }
  if (!a.cohort.empty()) {
    Cohort cohort = read_cohort(a.cohort);
    m.add_input("cohort", a.cohort);
    if (report && !cohort.source_report.empty() && cohort.source_report != report_checksum) {
      throw input_error("cohort " + a.cohort + " was ranked from report " + cohort.source_report + " but --report " +
                        a.report + " has checksum " + report_checksum);
    }
    for (const auto& n : cohort.neurons) validate_neuron(n, config);
    primary = cohort;
    add_cohort_condition("cohort", cohort);
  }
  if (a.bottom_wd && *a.bottom_wd > 0.0) {
    need_report("--bottom-wd");
    add_cohort_condition("bottom_wd", select_bottom_fraction(*report, *a.bottom_wd, report_checksum));
  }
  std::size_t random_trials = 0;
  if (a.random && *a.random > 0) {
    if (a.trials == 0) throw input_error("--trials must be at least 1");
    std::vector<std::size_t> layers = mask ? std::vector<std::size_t>(mask->begin(), mask->end()) : all_layers(config);
    const NeuronSet exclusions = primary ? primary->neurons : NeuronSet{};
    for (std::size_t t = 0; t < a.trials; ++t) {
      const std::uint64_t seed = a.seed + t;
      m.add_seed("random_trial_" + std::to_string(t), seed);
      add_cohort_condition("random_" + std::to_string(t),
                           select_random_control(layers, config.d_mlp, preactivation_projection(config), *a.random,
                                                 seed, exclusions));
    }
    random_trials = a.trials;
  }

  std::optional<LayerGroups> groups;
  SweepMode sweep_mode = SweepMode::single;
  if (a.sweep != "none") {
    if (!primary) throw input_error("--sweep needs a cohort (--top-wd or --cohort)");
    if (mask) throw input_error("--sweep and --layers cannot be combined");
    sweep_mode = parse_sweep_mode(a.sweep);
    if (a.groups.empty()) {
      groups.emplace();
      for (std::size_t l = 0; l < config.n_layers; ++l) groups->push_back({l});
    } else {
      groups = parse_layer_groups(a.groups);
    }
    validate_partition(*groups, config.n_layers);
    const auto masks = sweep_masks(*groups, sweep_mode);
    for (std::size_t g = 0; g < masks.size(); ++g) {
      conditions.push_back({"sweep_" + a.sweep + "_" + std::to_string(g), primary, masks[g]});
      cohort_checksums[conditions.back().name] =
          cohort_checksums.count("top_wd") ? cohort_checksums["top_wd"] : cohort_checksums["cohort"];
    }
  }

  Evaluator ev(lm, corpus, pairs ? &*pairs : nullptr, c.threads);
  std::map<std::string, ConditionResult> results;
  std::ostringstream summary;
  summary << "condition,cohort_size,perplexity,delta_perplexity,accuracy,accuracy_sem\n";
  json index = json::array();
  for (const auto& cond : conditions) {
    ConditionResult r = ev.run(cond);
    const std::string nll_file = "nll/" + cond.name + ".f64";
    write_f64(dir.file(nll_file), r.nll.nll);
    dir.json(cond.name + ".json", ev.report(cond, r, nll_file, cohort_checksums[cond.name]));
    const double base = results.count("baseline") ? results.at("baseline").perplexity : r.perplexity;
    summary << cond.name << ',' << (cond.cohort ? cond.cohort->neurons.size() : 0) << ','
            << format_number(r.perplexity) << ',' << format_number(r.perplexity - base) << ','
            << csv_accuracy(r.accuracy) << '\n';
    out << cond.name << ": perplexity " << format_number(r.perplexity);
    if (r.accuracy) out << ", accuracy " << format_number(r.accuracy->overall.accuracy);
    out << '\n';
    index.push_back(cond.name + ".json");
    results.emplace(cond.name, std::move(r));
  }
  dir.text("summary.csv", summary.str());

  if (random_trials) {
    std::vector<double> ppl, dppl, acc;
    const double base = results.at("baseline").perplexity;
    for (std::size_t t = 0; t < random_trials; ++t) {
      const auto& r = results.at("random_" + std::to_string(t));
      ppl.push_back(r.perplexity);
      dppl.push_back(r.perplexity - base);
      if (r.accuracy) acc.push_back(r.accuracy->overall.accuracy);
    }
    json agg = {{"trials", random_trials},
                {"neurons_per_layer", *a.random},
                {"perplexity", {{"mean", mean(ppl)}, {"sem", sem(ppl)}}},
                {"delta_perplexity", {{"mean", mean(dppl)}, {"sem", sem(dppl)}}},
                {"accuracy", acc.empty() ? json(nullptr) : json({{"mean", mean(acc)}, {"sem", sem(acc)}})}};
    dir.json("random_aggregate.json", agg);
    index.push_back("random_aggregate.json");
  }

  if (groups) {
    std::ostringstream sw;
    sw << "mode,group,layers,perplexity,delta_perplexity,accuracy,accuracy_sem\n";
    const double base = results.at("baseline").perplexity;
    for (const auto& cond : conditions) {
      if (cond.name.rfind("sweep_", 0) != 0) continue;
      const auto& r = results.at(cond.name);
      std::string layers;
      for (auto l : *cond.mask) layers += (layers.empty() ? "" : " ") + std::to_string(l);
      sw << a.sweep << ',' << cond.name.substr(cond.name.rfind('_') + 1) << ',' << layers << ','
         << format_number(r.perplexity) << ',' << format_number(r.perplexity - base) << ','
         << csv_accuracy(r.accuracy) << '\n';
    }
    dir.text("sweep.csv", sw.str());
  }

  if (!a.pos.empty()) {
    if (!results.count(a.pos_against)) {
      throw input_error("--pos-against " + a.pos_against + " names no evaluated condition");
    }
    m.add_input("pos", a.pos);
    const auto annotations = load_pos_annotations(a.pos);
    const NllDiff diff = nll_diff(results.at(a.pos_against).nll, results.at("baseline").nll);
    const PosSurprisalTable table = pos_stratified(diff, align_tags(annotations, diff.index));
    json j = to_json(table);
    j["condition"] = a.pos_against;
    j["reference"] = "baseline";
    dir.json("pos_" + a.pos_against + ".json", j);
    std::ostringstream csv;
    csv << "tag,mean,sem,count\n";
    for (const auto& r : table.rows) {
      csv << r.tag << ',' << format_number(r.mean) << ',' << format_number(r.sem) << ',' << r.count << '\n';
    }
    dir.text("pos_" + a.pos_against + ".csv", csv.str());
  }
  dir.json("index.json", {{"reports", index}});
  return 0;
}

// --- match ---------------------------------------------------------------------------

int cmd_match(const MatchArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream& err) {
  LoadedModel lm = load(a.model, m);
  Corpus corpus = load_corpus_input(a.corpus, m, lm.manifest.config);
  const EntanglementReport report = read_report(a.report);
  const std::string report_checksum = sha256_file(a.report);
  m.add_input("report", a.report);
  if (report.model_checksum != lm.identity) throw input_error("report " + a.report + " belongs to a different model");

  double target;
  if (a.target_ppl) {
    target = *a.target_ppl;
  } else if (!a.target_from.empty()) {
    const json j = read_json(a.target_from);
    m.add_input("target", a.target_from);
    if (!j.contains("perplexity")) throw input_error(a.target_from + " carries no perplexity");
    if (j.contains("corpus") && j["corpus"].value("checksum", std::string()) != corpus.checksum) {
      throw input_error("target " + a.target_from + " was measured on a different corpus");
    }
    target = j.at("perplexity").get<double>();
  } else {
    throw input_error("give --target-ppl or --target-from");
  }

  OutputDir dir(c.out_dir, m);
  // Fractions that round to the same per-layer count ablate the same neurons.
  std::map<std::size_t, double> cache;
  auto eval = [&](double frac) {
    const std::size_t count = frac == 0.0 ? 0 : per_layer_count(frac, report.d_mlp);
    if (auto it = cache.find(count); it != cache.end()) return it->second;
    double ppl;
    if (count == 0) {
      ppl = perplexity(*lm.model, corpus, nullptr, c.threads);
    } else {
      const AblationSpec spec = select_bottom_fraction(report, frac, report_checksum).ablation();
      ppl = perplexity(*lm.model, corpus, &spec, c.threads);
    }
    cache[count] = ppl;
    out << "m=" << format_number(frac) << " (" << count << "/layer): perplexity " << format_number(ppl) << '\n';
    return ppl;
  };
  const MatchResult r = match_perplexity(target, eval, a.tolerance, a.max_iters);

  Cohort cohort;
  if (r.m > 0.0) {
    cohort = select_bottom_fraction(report, r.m, report_checksum);
  } else {
    cohort.rule = SelectionRule::bottom_wd_fraction;
    cohort.source_report = report_checksum;
    cohort.layers = report.layers();
  }
  dir.json("cohort.json", to_json(cohort));

  json log = json::array();
  for (const auto& s : r.log) log.push_back({{"phase", s.phase}, {"m", s.m}, {"perplexity", s.perplexity}});
  json j = {{"target_perplexity", target},
            {"tolerance", a.tolerance},
            {"max_iters", a.max_iters},
            {"m", r.m},
            {"perplexity", r.perplexity},
            {"converged", r.converged},
            {"bracket_failed", r.bracket_failed},
            {"bisection_steps", r.bisection_steps},
            {"cohort_size", cohort.neurons.size()},
            {"log", log},
            {"warnings", r.warnings}};
  if (!a.benchmark.empty()) {
    m.add_input("benchmark", a.benchmark);
    const MinimalPairSet pairs = load_minimal_pairs(a.benchmark);
    const AblationSpec spec = cohort.ablation();
    j["benchmark"] = to_json(minimal_pair_accuracy(*lm.model, pairs, &spec, c.threads));
  }
  dir.json("match.json", j);

  for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  if (r.bracket_failed) {
    err << "bracket failure: ablating every bottom-WD neuron (m = 1) gives perplexity " << format_number(r.perplexity)
        << ", below the target " << format_number(target) << "; wrote the m = 1 cohort\n";
    return static_cast<int>(ErrorKind::search);
  }
  if (!r.converged) {
    err << "no fraction within tolerance after " << r.bisection_steps << " bisection steps; closest m = "
        << format_number(r.m) << " (perplexity " << format_number(r.perplexity) << ")\n";
    return static_cast<int>(ErrorKind::search);
  }
  out << "matched m = " << format_number(r.m) << ", perplexity " << format_number(r.perplexity) << " (target "
      << format_number(target) << ")\n";
  return 0;
}

// --- pairs ---------------------------------------------------------------------------

int cmd_pairs(const PairsArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream&) {
  if (a.top_k == 0 || a.top_k > a.pairs) {
    throw input_error("--top-k (" + std::to_string(a.top_k) + ") must be between 1 and --pairs (" +
                      std::to_string(a.pairs) + ")");
  }
  LoadedModel lm = load(a.model, m);
  Corpus corpus = load_corpus_input(a.corpus, m, lm.manifest.config);
  m.add_seed("pairs", a.seed);
  OutputDir dir(c.out_dir, m);

  ScanOptions o;
  o.wd = false;
  o.md = true;
  o.tokens = a.tokens;
  o.pairs = a.pairs;
  o.top_k = a.top_k;
  o.seed = a.seed;
  o.threads = c.threads;
  if (!a.limit_layers.empty()) o.layers = a.limit_layers;
  ScanArtifacts artifacts;
  const EntanglementReport report = scan(*lm.model, corpus, lm.identity, o, &artifacts);
  json report_json = to_json(report);
  report_json["manifest"] = kManifestName;
  const std::string report_text = report_json.dump(2) + "\n";
  dir.text("report.json", report_text);
  const Cohort cohort = select_top_fraction(report, Metric::md, a.top_md, sha256_bytes(report_text));
  dir.json("cohort.json", to_json(cohort));

  const std::string header =
      "layer,row,rank,i,j,token_i,token_j,doc_i,doc_j,y_i,y_j,input_dist,output_dist,norm_input,norm_output,ratio,"
      "sign\n";
  std::ostringstream all_pairs;
  all_pairs << header;
  std::ostringstream comp;
  comp << "layer,n_neurons,nn,pn,pp,sem,pn_sem,pp_sem\n";
  json comp_json = json::array();
  for (const auto& lp : artifacts.pairs) {
    const std::size_t layer = lp.trace.layer;
    std::ostringstream layer_pairs;
    layer_pairs << header;
    std::vector<std::vector<PairRecord>> per_neuron;
    for (auto row : cohort.rows_in_layer(layer)) {
      const std::size_t k = lp.trace.find_row(row);
      const auto records = pair_records(lp.trace, k, lp.sampling.pairs);
      auto top = top_differentiated(records, a.top_k);
      for (std::size_t rank = 0; rank < top.size(); ++rank) {
        const auto& p = top[rank];
        std::ostringstream line;
        line << layer << ',' << row << ',' << rank << ',' << p.i.index << ',' << p.j.index << ',' << p.i.token << ','
             << p.j.token << ',' << p.i.doc << ',' << p.j.doc << ',' << format_number(p.y_i) << ','
             << format_number(p.y_j) << ',' << format_number(p.input_dist) << ',' << format_number(p.output_dist)
             << ',' << format_number(p.norm_input) << ',' << format_number(p.norm_output) << ','
             << format_number(p.ratio) << ',' << to_string(p.sign) << '\n';
        (a.per_layer ? layer_pairs : all_pairs) << line.str();
      }
      per_neuron.push_back(std::move(top));
    }
    if (a.per_layer) dir.text("pairs_L" + std::to_string(layer) + ".csv", layer_pairs.str());
    const SignComposition sc = sign_composition(per_neuron);
    comp << layer << ',' << sc.neurons;
    for (double p : sc.proportion) comp << ',' << format_number(p);
    for (double s : sc.sem) comp << ',' << format_number(s);
    comp << '\n';
    comp_json.push_back({{"layer", layer},
                         {"n_neurons", sc.neurons},
                         {"nn", sc.proportion[0]},
                         {"pn", sc.proportion[1]},
                         {"pp", sc.proportion[2]},
                         {"nn_sem", sc.sem[0]},
                         {"pn_sem", sc.sem[1]},
                         {"pp_sem", sc.sem[2]},
                         {"rejected_pairings", lp.sampling.rejected}});
    out << "layer " << layer << ": NN " << format_number(sc.proportion[0]) << ", PN "
        << format_number(sc.proportion[1]) << ", PP " << format_number(sc.proportion[2]) << " over " << sc.neurons
        << " neurons\n";
  }
  if (!a.per_layer) dir.text("pairs.csv", all_pairs.str());
  dir.text("sign_composition.csv", comp.str());
  dir.json("sign_composition.json", {{"top_k", a.top_k}, {"pairs", a.pairs}, {"layers", comp_json}});
  return 0;
}

// --- cohort --------------------------------------------------------------------------

int cmd_cohort(const CohortArgs& a, const Common& c, RunManifest& m, std::ostream& out, std::ostream&) {
  if (a.checkpoints.empty()) throw input_error("--checkpoints needs at least one model manifest");
  std::vector<std::string> labels = a.labels;
  if (labels.empty()) {
    for (const auto& p : a.checkpoints) labels.push_back(std::filesystem::path(p).stem().string());
  }
  if (labels.size() != a.checkpoints.size()) throw input_error("--labels must name every checkpoint");

  std::vector<LoadedModel> models;
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    models.push_back(load(a.checkpoints[i], m, "checkpoint_" + labels[i]));
  }
  const ModelConfig& config = models.back().manifest.config;
  Corpus corpus = load_corpus_input(a.corpus, m, config);
  std::optional<MinimalPairSet> pairs;
  if (!a.benchmark.empty()) {
    pairs = load_minimal_pairs(a.benchmark);
    m.add_input("benchmark", a.benchmark);
  }

  Cohort cohort;
  if (!a.cohort_from.empty()) {
    const EntanglementReport report = read_report(a.cohort_from);
    m.add_input("cohort_from", a.cohort_from);
    cohort = select_top_fraction(report, Metric::wd, a.top_wd, sha256_file(a.cohort_from));
  } else if (!a.cohort.empty()) {
    cohort = read_cohort(a.cohort);
    m.add_input("cohort", a.cohort);
  } else {
    throw input_error("give --cohort-from or --cohort");
  }
  for (const auto& n : cohort.neurons) validate_neuron(n, config);
  if (cohort.neurons.empty()) throw input_error("cohort is empty");

  OutputDir dir(c.out_dir, m);
  dir.json("cohort.json", to_json(cohort));

  std::vector<std::size_t> layers;
  for (const auto& n : cohort.neurons) {
    if (std::find(layers.begin(), layers.end(), n.layer) == layers.end()) layers.push_back(n.layer);
  }

  std::vector<double> wd_mean, errors;
  CohortTimeSeries series;
  std::vector<std::optional<double>> wd_sem;
  std::vector<json> evals;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const LoadedModel& lm = models[i];
    ScanOptions o;
    o.layers = layers;
    o.threads = c.threads;
    const EntanglementReport rep = scan(*lm.model, corpus, lm.identity, o);
    std::vector<double> wds;
    for (const auto& n : cohort.neurons) {
      const NeuronRecord* r = rep.find(n);
      if (r && r->wd) wds.push_back(*r->wd);
    }
    wd_mean.push_back(wds.empty() ? std::nan("") : mean(wds));
    wd_sem.emplace_back(wds.empty() ? std::nullopt : std::optional<double>(sem(wds)));

    Evaluator ev(lm, corpus, pairs ? &*pairs : nullptr, c.threads);
    const Condition cond{"checkpoint_" + labels[i], std::nullopt, std::nullopt};
    const ConditionResult r = ev.run(cond);
    const std::string nll_file = "nll/" + cond.name + ".f64";
    write_f64(dir.file(nll_file), r.nll.nll);
    json rep_json = ev.report(cond, r, nll_file, "");
    rep_json["checkpoint"] = labels[i];
    rep_json["cohort_wd"] = {{"mean", wds.empty() ? json(nullptr) : json(wd_mean.back())},
                             {"sem", wd_sem.back() ? json(*wd_sem.back()) : json(nullptr)},
                             {"neurons", wds.size()}};
    dir.json(cond.name + ".json", rep_json);
    errors.push_back(r.accuracy ? 1.0 - r.accuracy->overall.accuracy : r.perplexity);
    evals.push_back(rep_json);
    out << labels[i] << ": cohort WD " << format_number(wd_mean.back()) << ", "
        << (r.accuracy ? "error " : "perplexity ") << format_number(errors.back()) << '\n';
  }

  if (models.size() >= 2) {
    std::vector<const WeightSet*> ws;
    for (const auto& lm : models) ws.push_back(lm.weights.get());
    series = cohort_dissimilarity(ws, labels, cohort);
  } else {
    series.labels = labels;
    series.neurons.assign(cohort.neurons.begin(), cohort.neurons.end());
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    series.cohort_wd_mean.emplace_back(std::isnan(wd_mean[i]) ? std::nullopt : std::optional<double>(wd_mean[i]));
  }
  series.cohort_wd_sem = wd_sem;
  dir.json("timeseries.json", to_json(series));

  std::ostringstream csv;
  csv << "checkpoint,cohort_wd_mean,cohort_wd_sem,perplexity,accuracy,accuracy_sem,dissimilarity_mean,"
         "dissimilarity_sem\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    const json& e = evals[i];
    csv << labels[i] << ',' << (std::isnan(wd_mean[i]) ? std::string() : format_number(wd_mean[i])) << ','
        << (wd_sem[i] ? format_number(*wd_sem[i]) : std::string()) << ','
        << format_number(e["perplexity"].get<double>()) << ',';
    if (e["benchmark"].is_null()) {
      csv << ",";
    } else {
      csv << format_number(e["benchmark"]["overall"]["accuracy"].get<double>()) << ','
          << format_number(e["benchmark"]["overall"]["sem"].get<double>());
    }
    // Dissimilarity of the step that ends at this checkpoint.
    if (i > 0 && series.steps[i - 1].mean) {
      csv << ',' << format_number(*series.steps[i - 1].mean) << ',' << format_number(*series.steps[i - 1].sem);
    } else {
      csv << ",,";
    }
    csv << '\n';
  }
  dir.text("timeseries.csv", csv.str());

  json corr;
  corr["x"] = "cohort_wd_mean";
  corr["y"] = pairs ? "benchmark_error" : "perplexity";
  if (models.size() < 3) {
    corr["status"] = "refused";
    corr["reason"] = "correlation needs at least 3 checkpoints, got " + std::to_string(models.size());
  } else {
    try {
      const PearsonResult pr = correlate(wd_mean, errors);
      corr["status"] = "ok";
      corr["r"] = pr.r;
      corr["p_value"] = pr.p_value;
      corr["n"] = pr.n;
    } catch (const Error& e) {
      corr["status"] = "undefined";
      corr["reason"] = e.what();
    }
  }
  dir.json("correlation.json", corr);
  return 0;
}

}  // namespace wnprobe::cli
