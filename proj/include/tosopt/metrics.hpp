#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tosopt {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;
};

/// Binary classification report. Confusion is indexed [gold][predicted].
/// Per-class F1 with a zero denominator is defined as 0, which matters for
/// degenerate one-class batches.
struct MetricReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  ClassMetrics per_class[2];
  long long confusion[2][2] = {{0, 0}, {0, 0}};
  long long n = 0;
  long long parse_failures = 0;

  nlohmann::json to_json() const;
};

MetricReport compute_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& golds,
                             long long parse_failures = 0);

/// LLM calls charged to one expansion step under the per-candidate cost
/// model: (gradient_size + meta_calls [+ score_size]) * k. The score term
/// drops out when a trained proxy replaces score-set evaluation.
long long expansion_cost(long long gradient_size, long long meta_calls,
                         long long score_size, long long k, bool proxy);

/// Smallest number of expansions whose cumulative per-expansion saving
/// covers the one-time correctness-dataset cost. Empty when the proxy does
/// not save anything per expansion.
std::optional<long long> break_even(long long dataset_prompts, long long dataset_clauses,
                                    long long standard_cost, long long proxy_cost);

struct ResultRow {
  std::string method;
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
};

struct CostRow {
  std::string method;
  std::optional<long long> dataset_creation;
  long long expansion_step = 0;
};

std::string render_results_table(const std::vector<ResultRow>& rows);
std::string render_cost_table(const std::vector<CostRow>& rows);

}  // namespace tosopt
