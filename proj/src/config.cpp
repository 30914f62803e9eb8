#include "tosopt/config.hpp"

#include <cstdlib>

#include "tosopt/rng.hpp"

namespace tosopt {

namespace {

/// Replaces string values of the exact form "${NAME}" with getenv(NAME).
void interpolate_env(nlohmann::json& j) {
  if (j.is_object() || j.is_array()) {
    for (auto& element : j) interpolate_env(element);
    return;
  }
  if (!j.is_string()) return;
  const std::string s = j.get<std::string>();
  if (s.size() >= 4 && s.rfind("${", 0) == 0 && s.back() == '}') {
    const std::string name = s.substr(2, s.size() - 3);
    const char* value = std::getenv(name.c_str());
    if (!value) {
      throw ConfigError("environment variable not set: " + name);
    }
    j = std::string(value);
  }
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(std::move(j));
}

RunConfig RunConfig::from_json(nlohmann::json j) {
  interpolate_env(j);
  RunConfig cfg;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir.string());

    if (j.contains("corpus")) {
      const auto& c = j.at("corpus");
      cfg.corpus.path = c.at("path").get<std::string>();
      cfg.corpus.format = format_from_string(c.value("format", "tsv"));
      cfg.corpus.split = c.value("split", cfg.corpus.split);
      cfg.corpus.categories = c.value("categories", cfg.corpus.categories);
    }

    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      cfg.backend.kind = b.value("kind", cfg.backend.kind);
      if (b.contains("mock")) {
        cfg.backend.mock_rules = MockRules::from_json(b.at("mock"));
        cfg.backend.mock_seed = b.at("mock").value("seed", cfg.backend.mock_seed);
      }
      if (b.contains("remote")) {
        const auto& r = b.at("remote");
        cfg.backend.remote.endpoint = r.value("endpoint", std::string());
        cfg.backend.remote.model = r.value("model", std::string());
        cfg.backend.remote.auth_env = r.value("auth_env", std::string());
        cfg.backend.remote.connect_timeout_s =
            r.value("connect_timeout_s", cfg.backend.remote.connect_timeout_s);
        cfg.backend.remote.read_timeout_s =
            r.value("read_timeout_s", cfg.backend.remote.read_timeout_s);
      }
      if (b.contains("gateway")) {
        const auto& g = b.at("gateway");
        cfg.backend.gateway.max_attempts =
            g.value("max_attempts", cfg.backend.gateway.max_attempts);
        cfg.backend.gateway.backoff_base_ms =
            g.value("backoff_ms", cfg.backend.gateway.backoff_base_ms);
        cfg.backend.gateway.classify_parse_retries =
            g.value("classify_parse_retries", cfg.backend.gateway.classify_parse_retries);
        cfg.backend.gateway.max_concurrent =
            g.value("max_concurrent", cfg.backend.gateway.max_concurrent);
        if (g.contains("temperatures")) {
          for (const auto& [name, value] : g.at("temperatures").items()) {
            cfg.backend.gateway.temperatures[static_cast<std::size_t>(
                phase_from_string(name))] = value.get<double>();
          }
        }
      }
    }

    if (j.contains("templates")) {
      const auto& t = j.at("templates");
      cfg.templates.context = t.at("context").get<std::string>();
      cfg.templates.classify = t.at("classify").get<std::string>();
      cfg.templates.gradient = t.at("gradient").get<std::string>();
      cfg.templates.edit = t.at("edit").get<std::string>();
    }

    if (j.contains("embedding")) {
      const auto& e = j.at("embedding");
      cfg.embedding.provider = e.value("provider", cfg.embedding.provider);
      cfg.embedding.dim = e.value("dim", cfg.embedding.dim);
      cfg.embedding.seed = e.value("seed", cfg.embedding.seed);
      cfg.embedding.cache_path = e.value("cache", std::string());
      cfg.embedding.remote.endpoint = e.value("endpoint", std::string());
      cfg.embedding.remote.model = e.value("model", std::string());
      cfg.embedding.remote.auth_env = e.value("auth_env", std::string());
      cfg.embedding.remote.dim = cfg.embedding.dim;
    }

    if (j.contains("search")) {
      const auto& s = j.at("search");
      cfg.strategy = s.value("strategy", cfg.strategy);
      cfg.search.iterations = s.value("iterations", cfg.search.iterations);
      cfg.search.candidates_per_expansion =
          s.value("candidates_per_expansion", cfg.search.candidates_per_expansion);
      cfg.search.depth_limit = s.value("depth_limit", cfg.search.depth_limit);
      cfg.search.patience = s.value("patience", cfg.search.patience);
      cfg.search.exploration_weight =
          s.value("exploration_weight", cfg.search.exploration_weight);
      if (s.contains("reward")) {
        cfg.search.reward_kind = reward_kind_from_string(s.at("reward"));
      }
      cfg.search.beam_width = s.value("beam_width", cfg.search.beam_width);
      cfg.score_set_size = s.value("score_set_size", cfg.score_set_size);
      cfg.search.initial_prompt = s.value("initial_prompt", cfg.search.initial_prompt);
    }

    if (j.contains("proxy")) {
      const auto& p = j.at("proxy");
      cfg.proxy.model_path = p.value("model_path", std::string());
      cfg.proxy.threshold = p.value("threshold", cfg.proxy.threshold);
      if (p.contains("train")) {
        cfg.proxy.train = TrainConfig::from_json(p.at("train"));
      }
    }

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      cfg.dataset.trace_path = d.value("trace", std::string());
      cfg.dataset.prompts = d.value("prompts", cfg.dataset.prompts);
      cfg.dataset.clauses = d.value("clauses", cfg.dataset.clauses);
      cfg.dataset.validation_clauses =
          d.value("validation_clauses", cfg.dataset.validation_clauses);
      cfg.dataset.out_prefix = d.value("out_prefix", std::string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  cfg.search.seed = cfg.seed;
  cfg.search.sampling_seed = mix_seed(cfg.seed, 1);
  return cfg;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{{"seed", seed},
                   {"output_dir", output_dir.string()},
                   {"corpus",
                    {{"path", corpus.path.string()},
                     {"format", corpus.format == CorpusFormat::Tsv ? "tsv" : "jsonl"},
                     {"split", corpus.split},
                     {"categories", corpus.categories}}},
                   {"backend",
                    {{"kind", backend.kind},
                     {"mock", backend.mock_rules.to_json()},
                     {"mock_seed", backend.mock_seed},
                     {"remote",
                      {{"endpoint", backend.remote.endpoint},
                       {"model", backend.remote.model},
                       {"auth_env", backend.remote.auth_env}}}}},
                   {"embedding",
                    {{"provider", embedding.provider},
                     {"dim", embedding.dim},
                     {"seed", embedding.seed},
                     {"cache", embedding.cache_path.string()}}},
                   {"search", search.to_json()},
                   {"strategy", strategy},
                   {"score_set_size", score_set_size},
                   {"proxy",
                    {{"model_path", proxy.model_path.string()},
                     {"threshold", proxy.threshold}}},
                   {"dataset",
                    {{"trace", dataset.trace_path.string()},
                     {"prompts", dataset.prompts},
                     {"clauses", dataset.clauses},
                     {"validation_clauses", dataset.validation_clauses},
                     {"out_prefix", dataset.out_prefix}}}};
  return j;
}

void RunConfig::validate_common() const {
  if (corpus.path.empty() || !std::filesystem::exists(corpus.path)) {
    throw ConfigError("corpus path does not exist: " + corpus.path.string());
  }
  if (backend.kind != "mock" && backend.kind != "remote") {
    throw ConfigError("backend kind must be 'mock' or 'remote', got '" + backend.kind + "'");
  }
  if (backend.kind == "remote" && backend.remote.endpoint.empty()) {
    throw ConfigError("remote backend needs an endpoint");
  }
  if (templates.configured()) {
    load_templates();  // throws when a file is missing or unreadable
  }
  if (embedding.provider != "hash" && embedding.provider != "remote") {
    throw ConfigError("embedding provider must be 'hash' or 'remote'");
  }
  if (embedding.provider == "remote" && embedding.remote.endpoint.empty()) {
    throw ConfigError("remote embedding provider needs an endpoint");
  }
  if (strategy != "mcts" && strategy != "greedy" && strategy != "beam") {
    throw ConfigError("strategy must be mcts, greedy, or beam");
  }
  search.validate();
}

void RunConfig::validate_for_optimize() const {
  validate_common();
  if (search.reward_kind == RewardKind::Proxy) {
    if (proxy.model_path.empty()) {
      throw ConfigError("reward kind 'proxy' requires proxy.model_path");
    }
    if (!std::filesystem::exists(proxy.model_path)) {
      throw ConfigError("proxy model file does not exist: " + proxy.model_path.string());
    }
  }
}

void RunConfig::validate_for_build_dataset() const {
  validate_common();
  if (dataset.trace_path.empty() || !std::filesystem::exists(dataset.trace_path)) {
    throw ConfigError("dataset.trace must point to a completed search trace");
  }
  if (dataset.prompts < 1 || dataset.clauses < 1) {
    throw ConfigError("dataset.prompts and dataset.clauses must be >= 1");
  }
}

void RunConfig::validate_for_train_proxy() const {
  if (proxy.model_path.empty()) {
    throw ConfigError("train-proxy requires proxy.model_path");
  }
  if (!std::filesystem::exists(dataset_records_path()) ||
      !std::filesystem::exists(dataset_sidecar_path())) {
    throw ConfigError("correctness dataset not found under prefix '" +
                      (dataset.out_prefix.empty()
                           ? (output_dir / "correctness").string()
                           : dataset.out_prefix) +
                      "'; run build-dataset first");
  }
}

std::uint64_t RunConfig::score_set_seed() const { return mix_seed(seed, 2); }
std::uint64_t RunConfig::dataset_clause_seed() const { return mix_seed(seed, 3); }
std::uint64_t RunConfig::prompt_sample_seed() const { return mix_seed(seed, 4); }
std::uint64_t RunConfig::validation_clause_seed() const { return mix_seed(seed, 5); }

namespace {
std::string prefix_of(const RunConfig& cfg) {
  return cfg.dataset.out_prefix.empty() ? (cfg.output_dir / "correctness").string()
                                        : cfg.dataset.out_prefix;
}
}  // namespace

std::string RunConfig::dataset_records_path() const {
  return prefix_of(*this) + ".records.jsonl";
}
std::string RunConfig::dataset_sidecar_path() const {
  return prefix_of(*this) + ".sidecar.json";
}
std::string RunConfig::validation_records_path() const {
  return prefix_of(*this) + ".val.records.jsonl";
}
std::string RunConfig::validation_sidecar_path() const {
  return prefix_of(*this) + ".val.sidecar.json";
}

MetaPromptSet RunConfig::load_templates() const {
  if (!templates.configured()) {
    return MetaPromptSet::defaults();
  }
  return MetaPromptSet::from_files(templates.context, templates.classify,
                                   templates.gradient, templates.edit);
}

std::unique_ptr<LlmBackend> RunConfig::make_backend() const {
  if (backend.kind == "mock") {
    return std::make_unique<MockBackend>(backend.mock_rules, backend.mock_seed);
  }
  return std::make_unique<RemoteBackend>(backend.remote);
}

std::unique_ptr<EmbeddingProvider> RunConfig::make_provider() const {
  if (embedding.provider == "hash") {
    return std::make_unique<HashProjectionProvider>(embedding.dim, embedding.seed);
  }
  return std::make_unique<RemoteEmbeddingProvider>(embedding.remote);
}

std::unique_ptr<EmbeddingCache> RunConfig::make_cache() const {
  if (embedding.cache_path.empty()) {
    return std::make_unique<EmbeddingCache>();
  }
  if (!embedding.cache_path.parent_path().empty()) {
    std::filesystem::create_directories(embedding.cache_path.parent_path());
  }
  return std::make_unique<EmbeddingCache>(embedding.cache_path);
}

SamplerOptions RunConfig::sampler_options() const {
  SamplerOptions options;
  options.categories = corpus.categories;
  options.split = corpus.split;
  return options;
}

}  // namespace tosopt
