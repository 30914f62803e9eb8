#include "tosopt/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "tosopt/rng.hpp"

namespace tosopt {

// ---------------------------------------------------------------------------
// Tree
// ---------------------------------------------------------------------------

int SearchTree::add_root(const std::string& prompt) {
  if (!nodes_.empty()) {
    throw PreconditionError("tree already has a root");
  }
  PromptNode root;
  root.id = 0;
  root.prompt = prompt;
  root.depth = 0;
  nodes_.push_back(std::move(root));
  return 0;
}

int SearchTree::add_child(int parent, const std::string& prompt) {
  PromptNode& p = node(parent);
  PromptNode child;
  child.id = static_cast<int>(nodes_.size());
  child.prompt = prompt;
  child.parent = parent;
  child.depth = p.depth + 1;
  p.children.push_back(child.id);
  nodes_.push_back(std::move(child));
  return nodes_.back().id;
}

const char* to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::MacroF1: return "macro-f1";
    case RewardKind::Accuracy: return "accuracy";
    case RewardKind::Random: return "random";
    case RewardKind::Proxy: return "proxy";
  }
  return "unknown";
}

RewardKind reward_kind_from_string(const std::string& name) {
  if (name == "macro-f1") return RewardKind::MacroF1;
  if (name == "accuracy") return RewardKind::Accuracy;
  if (name == "random") return RewardKind::Random;
  if (name == "proxy") return RewardKind::Proxy;
  throw ConfigError("unknown reward kind: " + name);
}

void SearchConfig::validate() const {
  if (iterations < 1 || candidates_per_expansion < 1 || depth_limit < 1 || patience < 1 ||
      beam_width < 1) {
    throw ConfigError("search config: all counts must be >= 1");
  }
  if (exploration_weight < 0.0) {
    throw ConfigError("search config: exploration_weight must be >= 0");
  }
  if (trim(initial_prompt).empty()) {
    throw ConfigError("search config: initial prompt must be nonempty");
  }
}

nlohmann::json SearchConfig::to_json() const {
  return nlohmann::json{{"iterations", iterations},
                        {"candidates_per_expansion", candidates_per_expansion},
                        {"depth_limit", depth_limit},
                        {"patience", patience},
                        {"exploration_weight", exploration_weight},
                        {"reward_kind", to_string(reward_kind)},
                        {"seed", seed},
                        {"sampling_seed", sampling_seed},
                        {"beam_width", beam_width},
                        {"initial_prompt", initial_prompt}};
}

// ---------------------------------------------------------------------------
// Scorers
// ---------------------------------------------------------------------------

GatewayScorer::GatewayScorer(LlmGateway& gateway, const MetaPromptSet& meta,
                             ClauseBatch score_set, bool use_macro_f1)
    : gateway_(gateway), meta_(meta), score_set_(std::move(score_set)),
      use_macro_f1_(use_macro_f1) {
  if (score_set_.kind != BatchKind::ScoreSet) {
    throw PreconditionError("gateway scorer expects a score-set batch");
  }
}

double GatewayScorer::score(const std::string& prompt) {
  MetricReport report = *full_report(prompt);
  return use_macro_f1_ ? report.macro_f1 : report.accuracy;
}

std::optional<MetricReport> GatewayScorer::full_report(const std::string& prompt) {
  BatchPredictions preds = classify_batch(gateway_, meta_, prompt, score_set_.clauses,
                                          Phase::ScoreEval, FailurePolicy::FlipAndFlag);
  std::vector<int> golds;
  golds.reserve(score_set_.size());
  for (const auto& c : score_set_.clauses) golds.push_back(c.fairness);
  return compute_metrics(preds.predictions, golds, preds.parse_failures);
}

double RandomScorer::score(const std::string& prompt) {
  SplitMix64 rng(mix_seed(seed_, fnv1a64(prompt)));
  return rng.next_unit();
}

ProxyScorer::ProxyScorer(const ProxyModel& model, ClauseBatch score_set,
                         EmbeddingProvider& provider, EmbeddingCache* cache,
                         double threshold)
    : model_(model), score_set_(std::move(score_set)), provider_(provider), cache_(cache),
      threshold_(threshold) {}

double ProxyScorer::score(const std::string& prompt) {
  return proxy_score(model_, prompt, score_set_, provider_, cache_, threshold_).macro_f1;
}

std::optional<MetricReport> ProxyScorer::full_report(const std::string& prompt) {
  return proxy_score(model_, prompt, score_set_, provider_, cache_, threshold_);
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

TraceWriter::TraceWriter(const std::filesystem::path& path)
    : file_(std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc)) {
  if (!*file_) {
    throw ConfigError("cannot open trace file: " + path.string());
  }
}

void TraceWriter::append(nlohmann::json event) {
  event["event"] = next_index_++;
  if (file_) {
    *file_ << event.dump() << '\n';
    file_->flush();
  }
  events_.push_back(std::move(event));
}

namespace {

void trace(SearchContext& ctx, nlohmann::json event) {
  if (ctx.trace) ctx.trace->append(std::move(event));
}

}  // namespace

// ---------------------------------------------------------------------------
// Search state and core operations
// ---------------------------------------------------------------------------

void SearchState::record_evaluation(int node_id, double reward) {
  PromptNode& n = tree.node(node_id);
  n.last_reward = reward;
  n.visits = 1;
  n.reward_sum = reward;
  n.q_value = reward;
  if (!any_eval || reward > best_eval) {
    best_eval = reward;
    any_eval = true;
  }
}

bool SearchState::checkpoint() {
  bool improved = any_eval && best_eval > best_at_checkpoint;
  stall = improved ? 0 : stall + 1;
  best_at_checkpoint = best_eval;
  return improved;
}

std::vector<int> select_path(const SearchTree& tree, double exploration_weight,
                             int depth_limit) {
  if (tree.empty()) {
    throw PreconditionError("select: tree is empty");
  }
  std::vector<int> path{0};
  const PromptNode* current = &tree.node(0);
  while (!current->children.empty() && current->depth < depth_limit) {
    const double parent_visits = static_cast<double>(std::max<long long>(1, current->visits));
    int best_id = -1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (int child_id : current->children) {
      const PromptNode& child = tree.node(child_id);
      double value;
      if (child.visits == 0) {
        value = std::numeric_limits<double>::infinity();
      } else {
        value = child.q_value +
                exploration_weight *
                    std::sqrt(std::log(parent_visits) / static_cast<double>(child.visits));
      }
      if (value > best_value) {  // ties keep the lowest id: children ascend
        best_value = value;
        best_id = child_id;
      }
    }
    path.push_back(best_id);
    current = &tree.node(best_id);
  }
  return path;
}

std::vector<int> expand_node(SearchState& state, int node_id, SearchContext& ctx) {
  PromptNode& node = state.tree.node(node_id);
  if (node.depth >= ctx.config.depth_limit) {
    throw PreconditionError("expand: node " + std::to_string(node_id) +
                            " is at the depth limit");
  }
  if (node.terminal) {
    throw PreconditionError("expand: node " + std::to_string(node_id) + " is terminal");
  }

  const long long expansion_index = ctx.expansions++;
  const std::uint64_t gradient_seed =
      mix_seed(ctx.config.sampling_seed, static_cast<std::uint64_t>(expansion_index) + 1);
  ClauseBatch gradient_set = sample_gradient_set(*ctx.corpus, gradient_seed, ctx.sampler);

  const int k = ctx.config.candidates_per_expansion;
  auto candidates = ctx.engine->expand_prompt(node.prompt, gradient_set, k);
  if (!candidates) {
    node.terminal = true;
    trace(ctx, {{"type", "terminal"}, {"node", node_id}});
    return {};
  }

  if (ctx.ledger) {
    const long long batch = static_cast<long long>(gradient_set.size());
    ctx.ledger->record_paper(Phase::GradientEval, batch * k);
    ctx.ledger->record_paper(Phase::GradientGen, k);
    ctx.ledger->record_paper(Phase::GradientApply, k);
    if (ctx.scorer->llm_scored()) {
      ctx.ledger->record_paper(Phase::ScoreEval, ctx.scorer->score_set_size() * k);
    }
  }

  std::vector<int> child_ids;
  nlohmann::json children_json = nlohmann::json::array();
  for (const auto& candidate : candidates->candidates) {
    int child_id = state.tree.add_child(node_id, candidate);
    double reward = ctx.scorer->score(candidate);
    state.record_evaluation(child_id, reward);
    child_ids.push_back(child_id);
    children_json.push_back(
        {{"node", child_id}, {"prompt", candidate}, {"reward", reward}});
  }
  trace(ctx, {{"type", "expand"},
              {"parent", node_id},
              {"parent_digest", candidates->gradient.source_prompt_digest},
              {"gradient", candidates->gradient.text},
              {"gradient_seed", gradient_seed},
              {"truncated", candidates->truncated},
              {"children", children_json}});
  return child_ids;
}

RolloutResult simulate_from(SearchState& state, int node_id, SearchContext& ctx) {
  RolloutResult result;
  result.max_reward = state.tree.node(node_id).last_reward;

  int current = node_id;
  while (state.tree.node(current).depth < ctx.config.depth_limit &&
         !state.tree.node(current).terminal) {
    std::vector<int> children = expand_node(state, current, ctx);
    if (children.empty()) break;
    int best_child = children.front();
    for (int child_id : children) {
      const double reward = state.tree.node(child_id).last_reward;
      result.max_reward = std::max(result.max_reward, reward);
      if (reward > state.tree.node(best_child).last_reward) {
        best_child = child_id;
      }
    }
    result.path_extension.push_back(best_child);
    current = best_child;
  }

  trace(ctx, {{"type", "simulate"},
              {"from", node_id},
              {"rollout", result.path_extension},
              {"reward", result.max_reward}});
  return result;
}

void backpropagate(SearchState& state, const std::vector<int>& path, double reward,
                   SearchContext& ctx) {
  if (path.empty() || state.tree.node(path.front()).parent.has_value()) {
    throw PreconditionError("backpropagate: path must start at the root");
  }
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (state.tree.node(path[i]).parent != path[i - 1]) {
      throw PreconditionError("backpropagate: path is not a root-to-node chain");
    }
  }
  for (int id : path) {
    PromptNode& n = state.tree.node(id);
    n.visits += 1;
    n.reward_sum += reward;
    n.q_value = n.reward_sum / static_cast<double>(n.visits);
  }
  state.checkpoint();
  trace(ctx, {{"type", "backprop"},
              {"path", path},
              {"reward", reward},
              {"stall", state.stall},
              {"best", state.best_eval}});
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

namespace {

void validate_context(const SearchContext& ctx) {
  ctx.config.validate();
  if (!ctx.corpus || !ctx.engine || !ctx.scorer) {
    throw ConfigError("search context needs a corpus, a gradient engine, and a scorer");
  }
}

/// Best node under the final-selection tie-break: highest last evaluated
/// reward, then shallower depth, then lower id.
int pick_best_node(const SearchTree& tree) {
  int best = 0;
  for (const auto& n : tree.nodes()) {
    if (n.visits == 0) continue;
    const PromptNode& b = tree.node(best);
    if (n.last_reward > b.last_reward ||
        (n.last_reward == b.last_reward &&
         (n.depth < b.depth || (n.depth == b.depth && n.id < b.id)))) {
      best = n.id;
    }
  }
  return best;
}

SearchResult finish(SearchContext& ctx, SearchState& state, const std::string& strategy,
                    int iterations_run, std::string stop_reason) {
  SearchResult result;
  result.strategy = strategy;
  result.best_node = pick_best_node(state.tree);
  result.best_prompt = state.tree.node(result.best_node).prompt;
  result.best_reward = state.tree.node(result.best_node).last_reward;
  result.iterations_run = iterations_run;
  result.stop_reason = std::move(stop_reason);
  result.expansions = ctx.expansions;
  result.final_report = ctx.scorer->full_report(result.best_prompt);
  if (ctx.ledger) result.ledger = ctx.ledger->snapshot();
  result.tree = std::move(state.tree);
  trace(ctx, {{"type", "stop"},
              {"reason", result.stop_reason},
              {"best_node", result.best_node},
              {"best_reward", result.best_reward},
              {"iterations_run", result.iterations_run},
              {"expansions", result.expansions}});
  return result;
}

void trace_config(SearchContext& ctx, const std::string& strategy) {
  trace(ctx, {{"type", "config"},
              {"strategy", strategy},
              {"config", ctx.config.to_json()},
              {"score_set", ctx.scorer ? nlohmann::json(ctx.scorer->score_set_size())
                                       : nlohmann::json(nullptr)}});
}

int evaluated_root(SearchState& state, SearchContext& ctx) {
  int root = state.tree.add_root(ctx.config.initial_prompt);
  double reward = ctx.scorer->score(ctx.config.initial_prompt);
  state.record_evaluation(root, reward);
  // The root evaluation is the baseline the first stall checkpoint compares
  // against; it does not count as an improvement itself.
  state.best_at_checkpoint = state.best_eval;
  trace(ctx, {{"type", "root"},
              {"node", root},
              {"prompt", ctx.config.initial_prompt},
              {"reward", reward}});
  return root;
}

}  // namespace

SearchResult run_mcts(SearchContext& ctx) {
  validate_context(ctx);
  trace_config(ctx, "mcts");

  SearchState state;
  evaluated_root(state, ctx);

  int iterations_run = 0;
  std::string stop_reason = "iterations";
  for (int it = 1; it <= ctx.config.iterations; ++it) {
    iterations_run = it;
    std::vector<int> path =
        select_path(state.tree, ctx.config.exploration_weight, ctx.config.depth_limit);
    trace(ctx, {{"type", "select"}, {"iteration", it}, {"path", path}});

    RolloutResult rollout = simulate_from(state, path.back(), ctx);
    path.insert(path.end(), rollout.path_extension.begin(), rollout.path_extension.end());
    backpropagate(state, path, rollout.max_reward, ctx);

    if (state.stall >= ctx.config.patience) {
      stop_reason = "patience";
      break;
    }
  }
  return finish(ctx, state, "mcts", iterations_run, stop_reason);
}

SearchResult run_beam(SearchContext& ctx, int beam_width) {
  validate_context(ctx);
  if (beam_width < 1) {
    throw ConfigError("beam width must be >= 1");
  }
  trace_config(ctx, beam_width == 1 ? "greedy" : "beam");

  SearchState state;
  std::vector<int> beam{evaluated_root(state, ctx)};

  int iterations_run = 0;
  std::string stop_reason = "iterations";
  for (int it = 1; it <= ctx.config.iterations; ++it) {
    iterations_run = it;
    std::vector<int> pool;
    for (int member : beam) {
      const PromptNode& n = state.tree.node(member);
      if (n.depth >= ctx.config.depth_limit || n.terminal) continue;
      std::vector<int> children = expand_node(state, member, ctx);
      pool.insert(pool.end(), children.begin(), children.end());
    }
    if (pool.empty()) {
      stop_reason = "exhausted";
      break;
    }
    std::sort(pool.begin(), pool.end(), [&](int a, int b) {
      const auto& na = state.tree.node(a);
      const auto& nb = state.tree.node(b);
      if (na.last_reward != nb.last_reward) return na.last_reward > nb.last_reward;
      return na.id < nb.id;
    });
    if (pool.size() > static_cast<std::size_t>(beam_width)) {
      pool.resize(static_cast<std::size_t>(beam_width));
    }
    beam = pool;
    state.checkpoint();
    trace(ctx, {{"type", "beam_select"},
                {"iteration", it},
                {"beam", beam},
                {"stall", state.stall},
                {"best", state.best_eval}});
    if (state.stall >= ctx.config.patience) {
      stop_reason = "patience";
      break;
    }
  }
  return finish(ctx, state, beam_width == 1 ? "greedy" : "beam", iterations_run,
                stop_reason);
}

SearchResult run_greedy(SearchContext& ctx) { return run_beam(ctx, 1); }

// ---------------------------------------------------------------------------
// Result serialization and trace replay
// ---------------------------------------------------------------------------

nlohmann::json SearchResult::to_json(const SearchConfig& config) const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : tree.nodes()) {
    nodes.push_back({{"id", n.id},
                     {"prompt", n.prompt},
                     {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
                     {"children", n.children},
                     {"visits", n.visits},
                     {"reward_sum", n.reward_sum},
                     {"q_value", n.q_value},
                     {"depth", n.depth},
                     {"last_reward", n.last_reward},
                     {"terminal", n.terminal}});
  }
  nlohmann::json j{{"strategy", strategy},
                   {"best_prompt", best_prompt},
                   {"best_reward", best_reward},
                   {"best_node", best_node},
                   {"iterations_run", iterations_run},
                   {"stop_reason", stop_reason},
                   {"expansions", expansions},
                   {"config", config.to_json()},
                   {"score_set", score_set_info},
                   {"ledger", ledger.to_json()},
                   {"nodes", nodes}};
  j["final_report"] = final_report ? final_report->to_json() : nlohmann::json(nullptr);
  return j;
}

SearchTree replay_trace(const std::vector<nlohmann::json>& events) {
  SearchTree tree;
  auto init_eval = [&](int id, double reward) {
    PromptNode& n = tree.node(id);
    n.last_reward = reward;
    n.visits = 1;
    n.reward_sum = reward;
    n.q_value = reward;
  };
  for (const auto& event : events) {
    const std::string type = event.value("type", "");
    if (type == "root") {
      int id = tree.add_root(event.at("prompt").get<std::string>());
      init_eval(id, event.at("reward").get<double>());
    } else if (type == "expand") {
      int parent = event.at("parent").get<int>();
      for (const auto& child : event.at("children")) {
        int id = tree.add_child(parent, child.at("prompt").get<std::string>());
        if (id != child.at("node").get<int>()) {
          throw IntegrityError("trace replay: node id mismatch at " +
                               std::to_string(id));
        }
        init_eval(id, child.at("reward").get<double>());
      }
    } else if (type == "terminal") {
      tree.node(event.at("node").get<int>()).terminal = true;
    } else if (type == "backprop") {
      double reward = event.at("reward").get<double>();
      for (int id : event.at("path").get<std::vector<int>>()) {
        PromptNode& n = tree.node(id);
        n.visits += 1;
        n.reward_sum += reward;
        n.q_value = n.reward_sum / static_cast<double>(n.visits);
      }
    }
  }
  return tree;
}

std::vector<nlohmann::json> read_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace file: " + path.string());
  std::vector<nlohmann::json> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      events.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return events;
}

SearchTree replay_trace_file(const std::filesystem::path& path) {
  return replay_trace(read_trace_file(path));
}

std::vector<std::string> sample_prompts_by_depth(const SearchTree& tree, std::size_t n,
                                                 std::uint64_t seed) {
  if (tree.empty()) {
    throw PreconditionError("sample_prompts_by_depth: empty tree");
  }
  std::map<int, std::vector<std::string>> by_depth;
  std::set<std::string> unique;
  for (const auto& node : tree.nodes()) {
    if (unique.insert(node.prompt).second) {
      by_depth[node.depth].push_back(node.prompt);
    }
  }
  if (unique.size() < n) {
    throw SamplingError("search tree offers only " + std::to_string(unique.size()) +
                        " distinct prompts, need " + std::to_string(n));
  }

  SplitMix64 rng(mix_seed(seed, 0xdeb7u));
  std::map<int, std::vector<std::string>> pools = by_depth;
  for (auto& [depth, pool] : pools) shuffle_inplace(pool, rng);

  std::vector<std::string> out;
  while (out.size() < n) {
    for (auto& [depth, pool] : pools) {
      if (out.size() >= n) break;
      if (pool.empty()) continue;
      out.push_back(pool.back());
      pool.pop_back();
    }
  }
  return out;
}

}  // namespace tosopt
