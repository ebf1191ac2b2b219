#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "toter/pipeline.hpp"

namespace {

using namespace toter;

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key = value run configuration");
  cmd->add_option("-s,--set", args.overrides, "override one key, key=value (repeatable)");
}

RunConfig resolve(const ConfigArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, std::string(trim(kv.substr(0, eq))), std::string(trim(kv.substr(eq + 1))), "flag");
  }
  return cfg;
}

Workspace open_workspace(const ConfigArgs& args) {
  Workspace ws(resolve(args));
  prepare_output(ws);
  return ws;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toter: taxonomy-guided dense retrieval toolkit"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress structured log lines on stderr");

  ConfigArgs labels_args, train_args, export_args, search_args, eval_args, pipeline_args, robust_args;
  auto* labels_cmd = app.add_subcommand("labels", "generate silver labels");
  add_config_args(labels_cmd, labels_args);
  auto* train_cmd = app.add_subcommand("train", "train the relevance estimator from silver labels");
  add_config_args(train_cmd, train_args);
  auto* export_cmd = app.add_subcommand("export", "export class relevance and indicator bitsets");
  add_config_args(export_cmd, export_args);
  auto* search_cmd = app.add_subcommand("search", "search space adjustment, retrieval and reranking");
  add_config_args(search_cmd, search_args);
  auto* eval_cmd = app.add_subcommand("eval", "score run files against qrels");
  add_config_args(eval_cmd, eval_args);
  std::string eval_run, eval_qrels, eval_cutoffs;
  eval_cmd->add_option("--run", eval_run, "score this TREC run file instead of the pipeline runs");
  eval_cmd->add_option("--qrels", eval_qrels, "qrels file (overrides the config key)");
  eval_cmd->add_option("--cutoffs", eval_cutoffs, "comma-separated cutoffs (overrides the config key)");
  auto* pipeline_cmd = app.add_subcommand("pipeline", "labels, train, export, search and eval in one go");
  add_config_args(pipeline_cmd, pipeline_args);

  auto* robust_cmd = app.add_subcommand("robustness", "rerun the pipeline on pruned and shuffled taxonomies");
  add_config_args(robust_cmd, robust_args);
  std::vector<double> prune_ratios{0.1, 0.2, 0.3};
  double sweep_shuffle = 0.1;
  std::size_t sweep_cutoff = 100;
  robust_cmd->add_option("--prune", prune_ratios, "prune ratios")->delimiter(',');
  robust_cmd->add_option("--shuffle", sweep_shuffle, "shuffle ratio applied per level");
  robust_cmd->add_option("--cutoff", sweep_cutoff, "Recall/NDCG cutoff reported");

  auto* perturb_cmd = app.add_subcommand("perturb", "write a pruned or shuffled copy of a taxonomy");
  std::string perturb_in, perturb_out;
  double prune_ratio = -1.0, shuffle_ratio = -1.0;
  int shuffle_level_arg = 2;
  std::uint64_t perturb_seed = 42;
  perturb_cmd->add_option("--taxonomy", perturb_in, "input taxonomy JSONL")->required();
  perturb_cmd->add_option("--out", perturb_out, "output taxonomy JSONL")->required();
  auto* prune_opt = perturb_cmd->add_option("--prune", prune_ratio, "fraction of non-root classes to remove");
  auto* shuffle_opt = perturb_cmd->add_option("--shuffle", shuffle_ratio, "fraction of a level to swap pairwise");
  prune_opt->excludes(shuffle_opt);
  perturb_cmd->add_option("--level", shuffle_level_arg, "level for --shuffle");
  perturb_cmd->add_option("--seed", perturb_seed, "random seed");

  auto* synth_cmd = app.add_subcommand("synth", "generate a planted-topic dataset");
  SyntheticConfig synth;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "random seed");
  synth_cmd->add_option("--noise", synth.noise, "document noise sigma");
  synth_cmd->add_option("--query-noise", synth.query_noise, "query noise sigma (negative: same as --noise)");
  synth_cmd->add_option("--docs-per-leaf", synth.docs_per_leaf, "documents per leaf class");
  synth_cmd->add_option("--queries", synth.queries, "number of queries");
  synth_cmd->add_option("--dim", synth.dim, "embedding dimension");
  synth_cmd->add_option("--topical-rate", synth.topical_mention_rate, "share of mentions drawn from the planted path");
  synth_cmd->add_option("--styles", synth.style_count, "number of topic-independent style directions");
  synth_cmd->add_option("--style-strength", synth.style_strength, "offset along the style direction");
  synth_cmd->add_option("--mentions", synth.mentions_per_doc, "phrase mentions per document");
  synth_cmd->add_option("--branching", synth.branching, "children per node at each level")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }
  if (quiet) Log::set_stream(nullptr);

  try {
    if (labels_cmd->parsed()) {
      auto ws = open_workspace(labels_args);
      stage_labels(ws);
    } else if (train_cmd->parsed()) {
      auto ws = open_workspace(train_args);
      stage_train(ws);
    } else if (export_cmd->parsed()) {
      auto ws = open_workspace(export_args);
      stage_export(ws);
    } else if (search_cmd->parsed()) {
      auto ws = open_workspace(search_args);
      stage_search(ws);
    } else if (eval_cmd->parsed()) {
      if (!eval_qrels.empty()) eval_args.overrides.push_back("qrels=" + eval_qrels);
      if (!eval_cutoffs.empty()) eval_args.overrides.push_back("cutoffs=" + eval_cutoffs);
      if (!eval_run.empty()) {
        const auto cfg = resolve(eval_args);
        const auto report = evaluate(load_run(eval_run), load_qrels(Workspace::require("qrels", cfg.qrels)),
                                     parse_cutoffs(cfg.cutoffs), parse_missing_mode(cfg.missing_queries));
        write_report(std::cout, report, "run");
      } else {
        auto ws = open_workspace(eval_args);
        stage_eval(ws);
        std::ifstream report(ws.out(RunLayout::report));
        std::cout << report.rdbuf();
      }
    } else if (pipeline_cmd->parsed()) {
      run_pipeline(resolve(pipeline_args));
    } else if (robust_cmd->parsed()) {
      run_robustness(resolve(robust_args), prune_ratios, sweep_shuffle, sweep_cutoff);
    } else if (perturb_cmd->parsed()) {
      const auto tax = load_taxonomy(perturb_in);
      if (prune_ratio >= 0.0) {
        const auto r = prune_random(tax, prune_ratio, perturb_seed);
        save_taxonomy(r.taxonomy, perturb_out);
        std::cout << "removed " << r.removed.size() << " classes (ratio " << format_fixed(r.achieved_ratio, 4)
                  << ")\n";
      } else if (shuffle_ratio >= 0.0) {
        const auto r = shuffle_level(tax, shuffle_ratio, perturb_seed, shuffle_level_arg);
        save_taxonomy(r.taxonomy, perturb_out);
        std::cout << "swapped " << r.swapped.size() << " pairs at level " << shuffle_level_arg << '\n';
      } else {
        throw UsageError("perturb needs --prune or --shuffle");
      }
    } else if (synth_cmd->parsed()) {
      save_synthetic(generate_synthetic(synth), synth_out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::runtime);
  }
  return 0;
}
