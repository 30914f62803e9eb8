#include "tosopt/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "tosopt/common.hpp"

namespace tosopt {

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

MetricReport compute_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& golds,
                             long long parse_failures) {
  if (predictions.size() != golds.size()) {
    throw PreconditionError("compute_metrics: length mismatch (" +
                            std::to_string(predictions.size()) + " vs " +
                            std::to_string(golds.size()) + ")");
  }
  if (predictions.empty()) {
    throw PreconditionError("compute_metrics: empty input");
  }

  MetricReport r;
  r.n = static_cast<long long>(predictions.size());
  r.parse_failures = parse_failures;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    int p = predictions[i];
    int g = golds[i];
    if ((p != 0 && p != 1) || (g != 0 && g != 1)) {
      throw PreconditionError("compute_metrics: labels must be 0 or 1");
    }
    r.confusion[g][p] += 1;
  }

  long long correct = r.confusion[0][0] + r.confusion[1][1];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);

  for (int cls = 0; cls < 2; ++cls) {
    long long tp = r.confusion[cls][cls];
    long long fp = r.confusion[1 - cls][cls];
    long long fn = r.confusion[cls][1 - cls];
    ClassMetrics& m = r.per_class[cls];
    m.support = tp + fn;
    m.precision = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
    m.recall = safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
  }
  r.macro_f1 = (r.per_class[0].f1 + r.per_class[1].f1) / 2.0;
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (int cls = 0; cls < 2; ++cls) {
    per.push_back({{"label", cls},
                   {"precision", per_class[cls].precision},
                   {"recall", per_class[cls].recall},
                   {"f1", per_class[cls].f1},
                   {"support", per_class[cls].support}});
  }
  return nlohmann::json{
      {"accuracy", accuracy},
      {"macro_f1", macro_f1},
      {"per_class", per},
      {"confusion", {{confusion[0][0], confusion[0][1]}, {confusion[1][0], confusion[1][1]}}},
      {"n", n},
      {"parse_failures", parse_failures}};
}

long long expansion_cost(long long gradient_size, long long meta_calls,
                         long long score_size, long long k, bool proxy) {
  if (gradient_size < 0 || meta_calls < 0 || score_size < 0 || k < 0) {
    throw PreconditionError("expansion_cost: counts must be >= 0");
  }
  long long per_candidate = gradient_size + meta_calls + (proxy ? 0 : score_size);
  return per_candidate * k;
}

std::optional<long long> break_even(long long dataset_prompts, long long dataset_clauses,
                                    long long standard_cost, long long proxy_cost) {
  if (dataset_prompts < 0 || dataset_clauses < 0) {
    throw PreconditionError("break_even: dataset sizes must be >= 0");
  }
  long long saving = standard_cost - proxy_cost;
  if (saving <= 0) return std::nullopt;
  long long dataset = dataset_prompts * dataset_clauses;
  return (dataset + saving - 1) / saving;
}

std::string render_results_table(const std::vector<ResultRow>& rows) {
  std::size_t width = 24;
  for (const auto& row : rows) width = std::max(width, row.method.size() + 2);

  std::ostringstream out;
  out << std::string(width, ' ').replace(0, 6, "Method");
  out << "  Accuracy  Macro F1\n";
  out << std::string(width, '-') << "  --------  --------\n";
  for (const auto& row : rows) {
    std::string method = row.method;
    method.resize(width, ' ');
    out << method << "  ";
    out << (row.accuracy ? fmt_metric(*row.accuracy) : std::string("-     ")) << "    ";
    out << (row.macro_f1 ? fmt_metric(*row.macro_f1) : std::string("-")) << "\n";
  }
  return out.str();
}

std::string render_cost_table(const std::vector<CostRow>& rows) {
  std::size_t width = 28;
  for (const auto& row : rows) width = std::max(width, row.method.size() + 2);

  std::ostringstream out;
  out << std::string(width, ' ').replace(0, 6, "Method");
  out << "  Dataset creation  Expansion step\n";
  out << std::string(width, '-') << "  ----------------  --------------\n";
  for (const auto& row : rows) {
    std::string method = row.method;
    method.resize(width, ' ');
    out << method << "  ";
    std::string creation = row.dataset_creation ? std::to_string(*row.dataset_creation) : "-";
    creation.resize(16, ' ');
    out << creation << "  " << row.expansion_step << "\n";
  }
  return out.str();
}

}  // namespace tosopt
