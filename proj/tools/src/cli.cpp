// SPDX-License-Identifier: Apache-2.0
#include "wnprobe_cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <ostream>
#include <thread>

#include "wnprobe/error.hpp"
#include "wnprobe/version.hpp"
#include "wnprobe_cli/commands.hpp"

namespace wnprobe::cli {
namespace {

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out_dir, "Output directory")->required();
  sub->add_option("--threads", c.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

nlohmann::json merged_options(const CLI::App* sub) {
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      if (opt->get_expected_max() == 0) {
        j[name] = true;
      } else if (opt->get_expected_max() > 1 || results.size() > 1) {
        j[name] = results;
      } else {
        j[name] = results.front();
      }
    } else if (opt->get_expected_max() == 0) {
      j[name] = false;
    } else {
      const std::string d = opt->get_default_str();
      j[name] = d.empty() ? nlohmann::json(nullptr) : nlohmann::json(d);
    }
  }
  return j;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"wnprobe: neuron entanglement scans and sign-specific ablations", "wnprobe"};
  app.set_version_flag("--version", version_string());
  app.set_config("--config", "", "Key/value config file; command-line flags take precedence");
  app.require_subcommand(1);

  Common common;
  common.threads = std::max(1u, std::thread::hardware_concurrency());

  ScanArgs scan;
  auto* s = app.add_subcommand("scan", "Per-neuron WD and/or MD over a corpus");
  s->add_option("--model", scan.model, "Model manifest")->required();
  s->add_option("--corpus", scan.corpus, "Corpus manifest")->required();
  s->add_option("--metric", scan.metric)->capture_default_str()->check(CLI::IsMember({"wd", "md", "both"}));
  s->add_option("--tokens", scan.tokens, "Tokens drawn for MD pairs")->capture_default_str();
  s->add_option("--pairs", scan.pairs, "Pairs per layer for MD")->capture_default_str();
  s->add_option("--top-k", scan.top_k, "Top differentiated pairs used for sign proportions")->capture_default_str();
  s->add_option("--seed", scan.seed)->capture_default_str();
  s->add_option("--limit-layers", scan.limit_layers, "Only these layers")->delimiter(',');
  s->add_option("--reservoir", scan.reservoir, "Samples kept per neuron for WD (0 = all)")->capture_default_str();
  s->add_flag("--save-traces", scan.save_traces, "Also write trace and input side files");
  add_common(s, common);

  AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "Negative-clamp ablations with controls");
  a->add_option("--model", ablate.model)->required();
  a->add_option("--corpus", ablate.corpus)->required();
  a->add_option("--benchmark", ablate.benchmark, "Minimal-pair JSONL");
  a->add_option("--report", ablate.report, "Entanglement report the cohorts are ranked from");
  auto* top = a->add_option("--top-wd", ablate.top_wd, "Top WD fraction per layer");
  a->add_option("--random", ablate.random, "Random control: neurons per layer");
  a->add_option("--bottom-wd", ablate.bottom_wd, "Bottom WD fraction per layer");
  auto* coh = a->add_option("--cohort", ablate.cohort, "Cohort file");
  top->excludes(coh);
  a->add_option("--trials", ablate.trials)->capture_default_str();
  a->add_option("--seed", ablate.seed)->capture_default_str();
  a->add_option("--layers", ablate.layers, "Restrict ablation to these layers")->delimiter(',');
  a->add_option("--sweep", ablate.sweep)->capture_default_str()->check(CLI::IsMember({"none", "single", "cumulative"}));
  a->add_option("--groups", ablate.groups, "Layer groups for --sweep, e.g. 0-1,2-3");
  a->add_option("--pos", ablate.pos, "POS annotation JSONL for surprisal tables");
  a->add_option("--pos-against", ablate.pos_against, "Condition compared with baseline in POS tables")
      ->capture_default_str();
  add_common(a, common);

  MatchArgs match;
  auto* m = app.add_subcommand("match", "Perplexity-matched bottom-WD control");
  m->add_option("--model", match.model)->required();
  m->add_option("--corpus", match.corpus)->required();
  m->add_option("--report", match.report, "Entanglement report")->required();
  auto* tf = m->add_option("--target-from", match.target_from, "Eval report whose perplexity is the target");
  auto* tp = m->add_option("--target-ppl", match.target_ppl, "Target perplexity");
  tf->excludes(tp);
  m->add_option("--tolerance", match.tolerance)->capture_default_str();
  m->add_option("--max-iters", match.max_iters)->capture_default_str();
  m->add_option("--benchmark", match.benchmark, "Also score the matched cohort on this minimal-pair set");
  add_common(m, common);

  PairsArgs pairs;
  auto* p = app.add_subcommand("pairs", "Top differentiated pairs and NN/PN/PP composition");
  p->add_option("--model", pairs.model)->required();
  p->add_option("--corpus", pairs.corpus)->required();
  p->add_option("--top-md", pairs.top_md, "Top MD fraction per layer")->capture_default_str();
  p->add_option("--tokens", pairs.tokens)->capture_default_str();
  p->add_option("--pairs", pairs.pairs)->capture_default_str();
  p->add_option("--top-k", pairs.top_k)->capture_default_str();
  p->add_flag("--per-layer", pairs.per_layer, "One pair table per layer");
  p->add_option("--seed", pairs.seed)->capture_default_str();
  p->add_option("--limit-layers", pairs.limit_layers)->delimiter(',');
  add_common(p, common);

  CohortArgs cohort;
  auto* c = app.add_subcommand("cohort", "Track a fixed cohort across checkpoints");
  c->add_option("--checkpoints", cohort.checkpoints, "Model manifests in training order")->required();
  c->add_option("--labels", cohort.labels, "Checkpoint labels")->delimiter(',');
  auto* cf = c->add_option("--cohort-from", cohort.cohort_from, "Final-checkpoint entanglement report");
  auto* cc = c->add_option("--cohort", cohort.cohort, "Cohort file");
  cf->excludes(cc);
  c->add_option("--top-wd", cohort.top_wd)->capture_default_str();
  c->add_option("--corpus", cohort.corpus)->required();
  c->add_option("--benchmark", cohort.benchmark);
  add_common(c, common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::input);
  }

  CLI::App* chosen = app.get_subcommands().front();
  RunManifest manifest(chosen->get_name(), args);
  const nlohmann::json merged = merged_options(chosen);
  for (const auto& [k, v] : merged.items()) manifest.set_option(k, v);

  int code = 0;
  try {
    if (chosen == s) code = cmd_scan(scan, common, manifest, out, err);
    if (chosen == a) code = cmd_ablate(ablate, common, manifest, out, err);
    if (chosen == m) code = cmd_match(match, common, manifest, out, err);
    if (chosen == p) code = cmd_pairs(pairs, common, manifest, out, err);
    if (chosen == c) code = cmd_cohort(cohort, common, manifest, out, err);
    manifest.set_status(code);
  } catch (const Error& e) {
    err << "wnprobe " << chosen->get_name() << ": " << e.what() << '\n';
    code = e.exit_code();
    manifest.set_status(code, e.what());
  } catch (const std::exception& e) {
    err << "wnprobe " << chosen->get_name() << ": internal error: " << e.what() << '\n';
    code = 1;
    manifest.set_status(code, e.what());
  }
  try {
    std::filesystem::create_directories(common.out_dir);
    manifest.write(common.out_dir);
  } catch (const std::exception& e) {
    err << "wnprobe: could not write the run manifest: " << e.what() << '\n';
    if (code == 0) code = static_cast<int>(ErrorKind::input);
  }
  return code;
}

}  // namespace wnprobe::cli
