#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tosopt/corpus.hpp"
#include "tosopt/gradient.hpp"
#include "tosopt/metrics.hpp"
#include "tosopt/proxy.hpp"

namespace tosopt {

struct PromptNode {
  int id = 0;
  std::string prompt;
  std::optional<int> parent;
  std::vector<int> children;
  long long visits = 0;
  double reward_sum = 0.0;
  double q_value = 0.0;
  int depth = 0;
  double last_reward = 0.0;
  bool terminal = false;  // no-gradient: the prompt made no errors
};

class SearchTree {
 public:
  int add_root(const std::string& prompt);
  int add_child(int parent, const std::string& prompt);

  PromptNode& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const PromptNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<PromptNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

 private:
  std::vector<PromptNode> nodes_;
};

enum class RewardKind { MacroF1, Accuracy, Random, Proxy };
const char* to_string(RewardKind kind);
RewardKind reward_kind_from_string(const std::string& name);

struct SearchConfig {
  int iterations = 12;
  int candidates_per_expansion = 4;
  int depth_limit = 8;
  int patience = 5;
  double exploration_weight = 2.5;  // a documented default, not a reported value
  RewardKind reward_kind = RewardKind::MacroF1;
  std::uint64_t seed = 42;           // run seed (random scoring, tie salt)
  std::uint64_t sampling_seed = 7;   // gradient-set resampling stream
  int beam_width = 4;
  std::string initial_prompt = "Is this clause fair (0) or unfair (1) to the consumer?";

  void validate() const;
  nlohmann::json to_json() const;
};

/// Reward in [0, 1] for a prompt. Implementations bind the fixed score set
/// (or seed) at construction, so one scorer == one run's evaluation context.
class RewardScorer {
 public:
  virtual ~RewardScorer() = default;
  virtual double score(const std::string& prompt) = 0;
  /// True when scoring costs one gateway call per score-set clause; drives
  /// the paper-model score term.
  virtual bool llm_scored() const = 0;
  virtual long long score_set_size() const = 0;
  /// Full metric report for the final prompt, when the kind supports one.
  virtual std::optional<MetricReport> full_report(const std::string& /*prompt*/) {
    return std::nullopt;
  }
};

class GatewayScorer : public RewardScorer {
 public:
  GatewayScorer(LlmGateway& gateway, const MetaPromptSet& meta, ClauseBatch score_set,
                bool use_macro_f1);
  double score(const std::string& prompt) override;
  bool llm_scored() const override { return true; }
  long long score_set_size() const override {
    return static_cast<long long>(score_set_.size());
  }
  std::optional<MetricReport> full_report(const std::string& prompt) override;
  const ClauseBatch& score_set() const { return score_set_; }

 private:
  LlmGateway& gateway_;
  const MetaPromptSet& meta_;
  ClauseBatch score_set_;
  bool use_macro_f1_;
};

/// Seeded uniform reward, a pure function of (seed, prompt); re-evaluating a
/// node yields the same number.
class RandomScorer : public RewardScorer {
 public:
  explicit RandomScorer(std::uint64_t seed) : seed_(seed) {}
  double score(const std::string& prompt) override;
  bool llm_scored() const override { return false; }
  long long score_set_size() const override { return 0; }

 private:
  std::uint64_t seed_;
};

class ProxyScorer : public RewardScorer {
 public:
  ProxyScorer(const ProxyModel& model, ClauseBatch score_set, EmbeddingProvider& provider,
              EmbeddingCache* cache, double threshold = 0.5);
  double score(const std::string& prompt) override;
  bool llm_scored() const override { return false; }
  long long score_set_size() const override {
    return static_cast<long long>(score_set_.size());
  }
  std::optional<MetricReport> full_report(const std::string& prompt) override;

 private:
  const ProxyModel& model_;
  ClauseBatch score_set_;
  EmbeddingProvider& provider_;
  EmbeddingCache* cache_;
  double threshold_;
};

/// Ordered JSONL event log. Events are buffered in memory and, when a path
/// is set, streamed to disk as they happen.
class TraceWriter {
 public:
  TraceWriter() = default;
  explicit TraceWriter(const std::filesystem::path& path);

  void append(nlohmann::json event);
  const std::vector<nlohmann::json>& events() const { return events_; }

 private:
  std::vector<nlohmann::json> events_;
  std::unique_ptr<std::ofstream> file_;
  long long next_index_ = 0;
};

struct SearchContext {
  SearchConfig config;
  const Corpus* corpus = nullptr;
  SamplerOptions sampler;
  GradientEngine* engine = nullptr;
  RewardScorer* scorer = nullptr;
  CostLedger* ledger = nullptr;
  TraceWriter* trace = nullptr;
  long long expansions = 0;
};

/// Tree plus the early-stopping bookkeeping shared by every strategy: the
/// best raw evaluation reward seen so far and a stall counter that advances
/// on every non-improving checkpoint.
struct SearchState {
  SearchTree tree;
  double best_eval = 0.0;
  bool any_eval = false;
  double best_at_checkpoint = 0.0;
  int stall = 0;

  void record_evaluation(int node_id, double reward);
  /// True when the best reward improved (strictly) since the last checkpoint.
  bool checkpoint();
};

/// Root-to-frontier walk choosing argmax of q + w * sqrt(ln(parent.visits) /
/// child.visits) at every level; unvisited children have infinite value and
/// ties break toward the lowest node id. Stops at an unexpanded node or at
/// the depth limit.
std::vector<int> select_path(const SearchTree& tree, double exploration_weight,
                             int depth_limit);

/// One textual-gradient expansion of `node_id`: fresh gradient set, k
/// candidates, each child evaluated immediately (visits = 1). Returns the new
/// child ids; empty when the no-gradient signal marked the node terminal.
std::vector<int> expand_node(SearchState& state, int node_id, SearchContext& ctx);

struct RolloutResult {
  double max_reward = 0.0;
  std::vector<int> path_extension;  // best-child chain descended into
};

/// Rollout: expand, descend into the highest-reward new child, repeat until
/// the depth limit or a no-gradient stop; the result carries the maximum
/// reward observed.
RolloutResult simulate_from(SearchState& state, int node_id, SearchContext& ctx);

/// visits += 1 and reward_sum += reward along a root-to-node path, then a
/// stall checkpoint.
void backpropagate(SearchState& state, const std::vector<int>& path, double reward,
                   SearchContext& ctx);

struct SearchResult {
  std::string strategy;
  std::string best_prompt;
  double best_reward = 0.0;
  int best_node = 0;
  SearchTree tree;
  CostLedger::Snapshot ledger;
  int iterations_run = 0;
  std::string stop_reason;
  long long expansions = 0;
  std::optional<MetricReport> final_report;
  nlohmann::json score_set_info;

  nlohmann::json to_json(const SearchConfig& config) const;
};

SearchResult run_mcts(SearchContext& ctx);
SearchResult run_beam(SearchContext& ctx, int beam_width);
SearchResult run_greedy(SearchContext& ctx);

/// Rebuilds the node table from a persisted trace; replay of an undamaged
/// trace reproduces the final tree exactly.
SearchTree replay_trace(const std::vector<nlohmann::json>& events);
SearchTree replay_trace_file(const std::filesystem::path& path);
std::vector<nlohmann::json> read_trace_file(const std::filesystem::path& path);

/// Uniform prompt sampling stratified by tree depth (equal-width bands of
/// one depth level, visited round-robin) over a completed search trace.
std::vector<std::string> sample_prompts_by_depth(const SearchTree& tree, std::size_t n,
                                                 std::uint64_t seed);

}  // namespace tosopt
