#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "tosopt/rng.hpp"
#include "tosopt/runner.hpp"

using namespace tosopt;

namespace {

struct CommonArgs {
  std::string config_path;
  // SearchConfig overrides, applied when the flag was passed.
  std::optional<std::string> strategy;
  std::optional<std::string> reward;
  std::optional<int> iterations;
  std::optional<int> candidates;
  std::optional<int> depth_limit;
  std::optional<int> patience;
  std::optional<double> exploration_weight;
  std::optional<int> beam_width;
  std::optional<std::size_t> score_set_size;
  std::optional<std::uint64_t> seed;
};

RunConfig load_with_overrides(const CommonArgs& args) {
  RunConfig cfg = RunConfig::load(args.config_path);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.search.seed = *args.seed;
    cfg.search.sampling_seed = mix_seed(*args.seed, 1);
  }
  if (args.strategy) cfg.strategy = *args.strategy;
  if (args.reward) cfg.search.reward_kind = reward_kind_from_string(*args.reward);
  if (args.iterations) cfg.search.iterations = *args.iterations;
  if (args.candidates) cfg.search.candidates_per_expansion = *args.candidates;
  if (args.depth_limit) cfg.search.depth_limit = *args.depth_limit;
  if (args.patience) cfg.search.patience = *args.patience;
  if (args.exploration_weight) cfg.search.exploration_weight = *args.exploration_weight;
  if (args.beam_width) cfg.search.beam_width = *args.beam_width;
  if (args.score_set_size) cfg.score_set_size = *args.score_set_size;
  return cfg;
}

void add_search_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file")->required();
  cmd->add_option("--strategy", args.strategy, "mcts | greedy | beam");
  cmd->add_option("--reward", args.reward, "macro-f1 | accuracy | random | proxy");
  cmd->add_option("--iterations", args.iterations);
  cmd->add_option("--candidates", args.candidates, "candidates per expansion");
  cmd->add_option("--depth-limit", args.depth_limit);
  cmd->add_option("--patience", args.patience);
  cmd->add_option("--exploration-weight", args.exploration_weight);
  cmd->add_option("--beam-width", args.beam_width);
  cmd->add_option("--score-set-size", args.score_set_size);
  cmd->add_option("--seed", args.seed);
}

int fail_with_json(const Error& e) {
  nlohmann::json err{{"error", to_string(e.kind())}, {"message", e.what()}};
  std::cerr << err.dump() << std::endl;
  return 1;
}

int fail_with_json(const std::exception& e) {
  nlohmann::json err{{"error", "internal"}, {"message", e.what()}};
  std::cerr << err.dump() << std::endl;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt optimizer for Terms-of-Service clause classification"};
  app.require_subcommand(1);

  CommonArgs optimize_args;
  std::string run_dir_flag;
  auto* optimize = app.add_subcommand("optimize", "search for a better prompt");
  add_search_flags(optimize, optimize_args);
  optimize->add_option("--run-dir", run_dir_flag,
                       "write artifacts here instead of a timestamped directory");

  CommonArgs build_args;
  auto* build = app.add_subcommand("build-dataset",
                                   "label (prompt, clause) pairs for proxy training");
  build->add_option("--config", build_args.config_path)->required();
  build->add_option("--seed", build_args.seed);

  CommonArgs train_args;
  auto* train = app.add_subcommand("train-proxy", "train the correctness classifier");
  train->add_option("--config", train_args.config_path)->required();

  CommonArgs eval_args;
  std::string eval_prompt;
  std::string eval_prompt_file;
  std::string eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "score one prompt on the score set");
  evaluate->add_option("--config", eval_args.config_path)->required();
  evaluate->add_option("--prompt", eval_prompt, "prompt text");
  evaluate->add_option("--prompt-file", eval_prompt_file, "file holding the prompt text");
  evaluate->add_option("--out", eval_out, "also write the report JSON here");
  evaluate->add_option("--score-set-size", eval_args.score_set_size);
  evaluate->add_option("--seed", eval_args.seed);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "render tables for a finished run");
  report->add_option("run_dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (optimize->parsed()) {
      RunConfig cfg = load_with_overrides(optimize_args);
      std::optional<std::filesystem::path> override_dir;
      if (!run_dir_flag.empty()) override_dir = run_dir_flag;
      RunArtifacts artifacts = prepare_run_dir(cfg, override_dir);
      SearchResult result = cmd_optimize(cfg, artifacts);
      std::cout << "best_reward=" << result.best_reward << " node=" << result.best_node
                << " stop=" << result.stop_reason << "\n"
                << "run_dir=" << artifacts.dir.string() << "\n";
    } else if (build->parsed()) {
      RunConfig cfg = load_with_overrides(build_args);
      DatasetBuildSummary summary = cmd_build_dataset(cfg);
      std::cout << "records=" << summary.records << " excluded=" << summary.excluded
                << " validation_records=" << summary.validation_records << "\n";
    } else if (train->parsed()) {
      RunConfig cfg = load_with_overrides(train_args);
      ProxyModel model = cmd_train_proxy(cfg);
      std::cout << "variant=" << to_string(model.variant)
                << " val_accuracy=" << model.report.val_accuracy
                << " steps=" << model.report.steps << "\n"
                << "model=" << cfg.proxy.model_path.string() << "\n";
    } else if (evaluate->parsed()) {
      RunConfig cfg = load_with_overrides(eval_args);
      std::string prompt = eval_prompt;
      if (prompt.empty() && !eval_prompt_file.empty()) {
        prompt = trim(read_text_file(eval_prompt_file));
      }
      MetricReport metric_report = cmd_evaluate(cfg, prompt);
      std::string payload = metric_report.to_json().dump(2) + "\n";
      std::cout << payload;
      if (!eval_out.empty()) write_text_file(eval_out, payload);
    } else if (report->parsed()) {
      std::cout << cmd_report(report_dir);
    }
  } catch (const Error& e) {
    return fail_with_json(e);
  } catch (const std::exception& e) {
    return fail_with_json(e);
  }
  return 0;
}
