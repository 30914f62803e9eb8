#include "tosopt/runner.hpp"

#include <chrono>
#include <ctime>
#include <set>
#include <sstream>

namespace tosopt {

namespace {

std::string timestamp_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_utc);
  return buf;
}

nlohmann::json score_set_info(const ClauseBatch& batch) {
  return nlohmann::json{{"size", batch.size()},
                        {"fair", batch.fair_count()},
                        {"unfair", batch.unfair_count()},
                        {"seed", batch.seed},
                        {"digest", batch.digest()}};
}

std::string render_report(const RunConfig& config, const SearchResult& result) {
  std::ostringstream out;
  const auto& best = result.tree.node(result.best_node);
  out << "Run summary\n===========\n";
  out << "strategy: " << result.strategy
      << "   reward: " << to_string(config.search.reward_kind) << "\n";
  out << "best reward: " << result.best_reward << " at node " << result.best_node
      << " (depth " << best.depth << ")\n";
  out << "stopped: " << result.stop_reason << " after " << result.iterations_run
      << " iterations, " << result.expansions << " expansions\n";
  out << "tree size: " << result.tree.size() << " nodes\n\n";
  out << "best prompt:\n  " << result.best_prompt << "\n\n";

  out << "Results\n-------\n";
  std::vector<ResultRow> rows;
  ResultRow row;
  row.method = result.strategy + " / " + to_string(config.search.reward_kind);
  if (result.final_report) {
    row.accuracy = result.final_report->accuracy;
    row.macro_f1 = result.final_report->macro_f1;
  }
  rows.push_back(row);
  out << render_results_table(rows) << "\n";

  out << "LLM calls\n---------\n";
  out << "phase                   actual  paper-model\n";
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    Phase p = static_cast<Phase>(i);
    std::string name = to_string(p);
    name.resize(20, ' ');
    std::string actual = std::to_string(result.ledger.count(p));
    actual.insert(0, actual.size() < 10 ? 10 - actual.size() : 0, ' ');
    out << name << actual << "  " << result.ledger.paper(p) << "\n";
  }
  out << "total: " << result.ledger.total() << " actual, " << result.ledger.paper_total()
      << " paper-model\n\n";

  out << "Cost model (per expansion)\n--------------------------\n";
  const long long gradient_size = 20;
  const long long meta_calls = 2;
  const long long k = config.search.candidates_per_expansion;
  const long long score = static_cast<long long>(config.score_set_size);
  std::vector<CostRow> cost_rows;
  cost_rows.push_back({"standard (score set " + std::to_string(score) + ")", std::nullopt,
                       expansion_cost(gradient_size, meta_calls, score, k, false)});
  long long dataset_cost =
      static_cast<long long>(config.dataset.prompts) * config.dataset.clauses;
  cost_rows.push_back({"proxy (score set " + std::to_string(score) + ")", dataset_cost,
                       expansion_cost(gradient_size, meta_calls, score, k, true)});
  out << render_cost_table(cost_rows);
  auto be = break_even(config.dataset.prompts, config.dataset.clauses,
                       expansion_cost(gradient_size, meta_calls, score, k, false),
                       expansion_cost(gradient_size, meta_calls, score, k, true));
  if (be) {
    out << "break-even: " << *be << " expansions\n";
  }
  return out.str();
}

}  // namespace

RunArtifacts prepare_run_dir(const RunConfig& config,
                             const std::optional<std::filesystem::path>& override_dir) {
  RunArtifacts artifacts;
  artifacts.dir = override_dir
                      ? *override_dir
                      : config.output_dir /
                            (timestamp_now() + "-seed" + std::to_string(config.seed));
  std::filesystem::create_directories(artifacts.dir);
  artifacts.config_echo = artifacts.dir / "config_echo.json";
  artifacts.trace = artifacts.dir / "trace.jsonl";
  artifacts.result = artifacts.dir / "result.json";
  artifacts.ledger = artifacts.dir / "ledger.json";
  artifacts.report = artifacts.dir / "report.txt";
  return artifacts;
}

SearchResult cmd_optimize(const RunConfig& config, const RunArtifacts& artifacts) {
  config.validate_for_optimize();

  Corpus corpus = load_corpus(config.corpus.path, config.corpus.format);
  auto backend = config.make_backend();
  CostLedger ledger;
  LlmGateway gateway(*backend, ledger, config.backend.gateway);
  MetaPromptSet meta = config.load_templates();
  GradientEngine engine(gateway, meta);

  // Sampled once per run and held fixed across every node evaluation.
  ClauseBatch score_set = sample_score_set(corpus, config.score_set_seed(),
                                           config.score_set_size,
                                           config.sampler_options());

  std::unique_ptr<EmbeddingProvider> provider;
  std::unique_ptr<EmbeddingCache> cache;
  ProxyModel proxy_model;
  std::unique_ptr<RewardScorer> scorer;
  switch (config.search.reward_kind) {
    case RewardKind::MacroF1:
    case RewardKind::Accuracy:
      scorer = std::make_unique<GatewayScorer>(
          gateway, meta, score_set,
          config.search.reward_kind == RewardKind::MacroF1);
      break;
    case RewardKind::Random:
      scorer = std::make_unique<RandomScorer>(config.search.seed);
      break;
    case RewardKind::Proxy: {
      proxy_model = load_proxy_model(config.proxy.model_path);
      provider = config.make_provider();
      if (proxy_model.provider_id != provider->id()) {
        throw ConfigError("provenance mismatch: proxy model was trained with provider '" +
                          proxy_model.provider_id + "' but the run configures '" +
                          provider->id() + "'");
      }
      cache = config.make_cache();
      scorer = std::make_unique<ProxyScorer>(proxy_model, score_set, *provider,
                                             cache.get(), config.proxy.threshold);
      break;
    }
  }

  TraceWriter trace(artifacts.trace);
  SearchContext ctx;
  ctx.config = config.search;
  ctx.corpus = &corpus;
  ctx.sampler = config.sampler_options();
  ctx.engine = &engine;
  ctx.scorer = scorer.get();
  ctx.ledger = &ledger;
  ctx.trace = &trace;

  SearchResult result;
  if (config.strategy == "mcts") {
    result = run_mcts(ctx);
  } else if (config.strategy == "greedy") {
    result = run_greedy(ctx);
  } else {
    result = run_beam(ctx, config.search.beam_width);
  }
  result.score_set_info = score_set_info(score_set);
  result.score_set_info["backend_id"] = backend->id();

  write_text_file(artifacts.config_echo, config.to_json().dump(2) + "\n");
  write_text_file(artifacts.result, result.to_json(config.search).dump(2) + "\n");
  write_text_file(artifacts.ledger, ledger.snapshot().to_json().dump(2) + "\n");
  write_text_file(artifacts.report, render_report(config, result));
  return result;
}

DatasetBuildSummary cmd_build_dataset(const RunConfig& config) {
  config.validate_for_build_dataset();

  Corpus corpus = load_corpus(config.corpus.path, config.corpus.format);
  auto backend = config.make_backend();
  CostLedger ledger;
  LlmGateway gateway(*backend, ledger, config.backend.gateway);
  MetaPromptSet meta = config.load_templates();

  SearchTree tree = replay_trace_file(config.dataset.trace_path);
  std::vector<std::string> prompts = sample_prompts_by_depth(
      tree, static_cast<std::size_t>(config.dataset.prompts), config.prompt_sample_seed());

  ClauseBatch clauses = sample_correctness_set(
      corpus, config.dataset_clause_seed(), static_cast<std::size_t>(config.dataset.clauses),
      config.sampler_options());

  CorrectnessDataset dataset =
      build_correctness_dataset(prompts, clauses, gateway, meta, /*enforce_balance=*/true);
  std::filesystem::create_directories(
      std::filesystem::path(config.dataset_records_path()).parent_path());
  save_correctness_dataset(dataset, config.dataset_records_path(),
                           config.dataset_sidecar_path());

  DatasetBuildSummary summary;
  summary.records = static_cast<long long>(dataset.records.size());
  summary.excluded = dataset.provenance.excluded;

  if (config.dataset.validation_clauses > 0) {
    std::set<std::string> used;
    for (const auto& c : clauses.clauses) used.insert(c.id);
    ClauseBatch val_clauses = sample_unbalanced_set(
        corpus, config.validation_clause_seed(),
        static_cast<std::size_t>(config.dataset.validation_clauses),
        config.sampler_options(), used);
    CorrectnessDataset val = build_correctness_dataset(prompts, val_clauses, gateway, meta,
                                                       /*enforce_balance=*/false);
    save_correctness_dataset(val, config.validation_records_path(),
                             config.validation_sidecar_path());
    summary.validation_records = static_cast<long long>(val.records.size());
  }
  return summary;
}

ProxyModel cmd_train_proxy(const RunConfig& config) {
  config.validate_for_train_proxy();

  CorrectnessDataset dataset = load_correctness_dataset(config.dataset_records_path(),
                                                        config.dataset_sidecar_path());
  std::optional<CorrectnessDataset> validation;
  if (std::filesystem::exists(config.validation_records_path()) &&
      std::filesystem::exists(config.validation_sidecar_path())) {
    validation = load_correctness_dataset(config.validation_records_path(),
                                          config.validation_sidecar_path());
  }

  auto provider = config.make_provider();
  auto cache = config.make_cache();
  ProxyModel model = train_proxy(dataset, config.proxy.train, *provider, cache.get(),
                                 validation ? &*validation : nullptr);

  if (!config.proxy.model_path.parent_path().empty()) {
    std::filesystem::create_directories(config.proxy.model_path.parent_path());
  }
  save_proxy_model(model, config.proxy.model_path);
  return model;
}

MetricReport cmd_evaluate(const RunConfig& config, const std::string& prompt) {
  config.validate_common();
  if (trim(prompt).empty()) {
    throw ConfigError("evaluate requires a nonempty prompt");
  }

  Corpus corpus = load_corpus(config.corpus.path, config.corpus.format);
  auto backend = config.make_backend();
  CostLedger ledger;
  LlmGateway gateway(*backend, ledger, config.backend.gateway);
  MetaPromptSet meta = config.load_templates();

  ClauseBatch score_set = sample_score_set(corpus, config.score_set_seed(),
                                           config.score_set_size,
                                           config.sampler_options());
  BatchPredictions preds = classify_batch(gateway, meta, prompt, score_set.clauses,
                                          Phase::ScoreEval, FailurePolicy::FlipAndFlag);
  std::vector<int> golds;
  golds.reserve(score_set.size());
  for (const auto& c : score_set.clauses) golds.push_back(c.fairness);
  return compute_metrics(preds.predictions, golds, preds.parse_failures);
}

std::string cmd_report(const std::filesystem::path& run_dir) {
  const auto result_path = run_dir / "result.json";
  if (!std::filesystem::exists(result_path)) {
    throw ConfigError("no result.json in " + run_dir.string());
  }
  nlohmann::json result;
  try {
    result = nlohmann::json::parse(read_text_file(result_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(result_path.string() + ": " + e.what());
  }

  std::ostringstream out;
  out << "Run " << run_dir.string() << "\n";
  out << "strategy: " << result.value("strategy", std::string("?")) << "   best reward: "
      << result.value("best_reward", 0.0) << "   stop: "
      << result.value("stop_reason", std::string("?")) << "\n\n";

  std::vector<ResultRow> rows;
  ResultRow row;
  row.method = result.value("strategy", std::string("?")) + " / " +
               result.at("config").value("reward_kind", std::string("?"));
  if (result.contains("final_report") && !result.at("final_report").is_null()) {
    row.accuracy = result.at("final_report").value("accuracy", 0.0);
    row.macro_f1 = result.at("final_report").value("macro_f1", 0.0);
  }
  rows.push_back(row);
  out << render_results_table(rows) << "\n";

  if (result.contains("ledger")) {
    const auto& ledger = result.at("ledger");
    out << "LLM calls: " << ledger.value("actual_total", 0LL) << " actual, "
        << ledger.value("paper_model_total", 0LL) << " paper-model\n";
  }

  const auto& cfg = result.at("config");
  long long k = cfg.value("candidates_per_expansion", 4LL);
  long long score = 0;
  if (result.contains("score_set") && result.at("score_set").contains("size")) {
    score = result.at("score_set").value("size", 0LL);
  }
  std::vector<CostRow> cost_rows;
  cost_rows.push_back(
      {"standard (score set " + std::to_string(score) + ")", std::nullopt,
       expansion_cost(20, 2, score, k, false)});
  cost_rows.push_back({"proxy (score set " + std::to_string(score) + ")", std::nullopt,
                       expansion_cost(20, 2, score, k, true)});
  out << "\n" << render_cost_table(cost_rows);
  return out.str();
}

}  // namespace tosopt
