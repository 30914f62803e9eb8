#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tosopt/corpus.hpp"
#include "tosopt/embed.hpp"
#include "tosopt/gateway.hpp"
#include "tosopt/proxy.hpp"
#include "tosopt/search.hpp"

namespace tosopt {

struct CorpusConfig {
  std::filesystem::path path;
  CorpusFormat format = CorpusFormat::Tsv;
  std::string split = "train";
  std::vector<std::string> categories = default_categories();
};

struct BackendSection {
  std::string kind = "mock";  // mock | remote
  MockRules mock_rules;
  std::uint64_t mock_seed = 1;
  RemoteConfig remote;
  GatewayConfig gateway;
};

struct EmbeddingSection {
  std::string provider = "hash";  // hash | remote
  std::size_t dim = 16;
  std::uint64_t seed = 7;
  std::filesystem::path cache_path;  // empty -> memory-only cache
  RemoteEmbeddingProvider::Config remote;
};

struct TemplateSection {
  std::filesystem::path context;
  std::filesystem::path classify;
  std::filesystem::path gradient;
  std::filesystem::path edit;
  bool configured() const { return !context.empty(); }
};

struct ProxySection {
  std::filesystem::path model_path;
  double threshold = 0.5;
  TrainConfig train;
};

struct DatasetSection {
  std::filesystem::path trace_path;  // completed search trace to sample prompts from
  int prompts = 30;
  int clauses = 500;
  int validation_clauses = 200;  // 0 disables the validation build
  std::string out_prefix;        // defaults to "<output_dir>/correctness"
};

/// One declarative file configures every subcommand. Values of the exact
/// form "${NAME}" are replaced from the environment at load time (intended
/// for secrets).
struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path output_dir = "runs";
  CorpusConfig corpus;
  BackendSection backend;
  TemplateSection templates;
  EmbeddingSection embedding;
  SearchConfig search;
  std::string strategy = "mcts";  // mcts | greedy | beam
  std::size_t score_set_size = 200;
  ProxySection proxy;
  DatasetSection dataset;

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(nlohmann::json j);
  nlohmann::json to_json() const;

  /// Fail-fast checks shared by all subcommands (paths, template files,
  /// structural sanity). Never performs network traffic.
  void validate_common() const;
  void validate_for_optimize() const;
  void validate_for_build_dataset() const;
  void validate_for_train_proxy() const;

  // Derived seeds, one stream per concern.
  std::uint64_t score_set_seed() const;
  std::uint64_t dataset_clause_seed() const;
  std::uint64_t prompt_sample_seed() const;
  std::uint64_t validation_clause_seed() const;

  std::string dataset_records_path() const;
  std::string dataset_sidecar_path() const;
  std::string validation_records_path() const;
  std::string validation_sidecar_path() const;

  MetaPromptSet load_templates() const;
  std::unique_ptr<LlmBackend> make_backend() const;
  std::unique_ptr<EmbeddingProvider> make_provider() const;
  std::unique_ptr<EmbeddingCache> make_cache() const;
  SamplerOptions sampler_options() const;
};

}  // namespace tosopt
