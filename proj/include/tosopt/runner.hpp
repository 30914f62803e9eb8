#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "tosopt/config.hpp"
#include "tosopt/metrics.hpp"
#include "tosopt/search.hpp"

namespace tosopt {

struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path config_echo;
  std::filesystem::path trace;
  std::filesystem::path result;
  std::filesystem::path ledger;
  std::filesystem::path report;
};

/// "<output_dir>/<timestamp>-seed<seed>" unless overridden.
RunArtifacts prepare_run_dir(const RunConfig& config,
                             const std::optional<std::filesystem::path>& override_dir);

/// Runs the configured strategy and writes trace.jsonl, result.json,
/// ledger.json, config_echo.json, and report.txt into the run directory.
SearchResult cmd_optimize(const RunConfig& config, const RunArtifacts& artifacts);

struct DatasetBuildSummary {
  long long records = 0;
  long long excluded = 0;
  long long validation_records = 0;
};
DatasetBuildSummary cmd_build_dataset(const RunConfig& config);

ProxyModel cmd_train_proxy(const RunConfig& config);

MetricReport cmd_evaluate(const RunConfig& config, const std::string& prompt);

std::string cmd_report(const std::filesystem::path& run_dir);

}  // namespace tosopt
