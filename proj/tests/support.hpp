#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tosopt/corpus.hpp"
#include "tosopt/gateway.hpp"
#include "tosopt/rng.hpp"
#include "tosopt/search.hpp"

namespace testsup {

using namespace tosopt;

inline std::vector<std::pair<std::string, std::string>> category_markers() {
  return {{"arbitration", "binding arbitration"},
          {"content-removal", "remove any content"},
          {"jurisdiction", "exclusive jurisdiction"},
          {"category-4", "sole discretion"},
          {"category-5", "without prior notice"},
          {"category-6", "not liable for any damages"},
          {"category-7", "terminate your account at any time"},
          {"category-8", "governed by the laws"},
          {"category-9", "continued use of the service constitutes acceptance"}};
}

inline std::vector<std::string> marker_list() {
  std::vector<std::string> out;
  for (const auto& [cat, marker] : category_markers()) out.push_back(marker);
  return out;
}

inline Clause make_clause(std::string id, int label, std::string text,
                          std::vector<std::string> cats = {}) {
  Clause c;
  c.id = std::move(id);
  c.fairness = label;
  c.text = std::move(text);
  c.categories = std::move(cats);
  return c;
}

/// Synthetic marker corpus: every unfair clause contains its category's
/// marker phrase, fair clauses contain none, so a keyword mock over the
/// marker list is a perfect oracle.
inline Corpus synthetic_corpus(int fair, int unfair_per_category,
                               const std::string& split = "train",
                               std::uint64_t salt = 0) {
  Corpus corpus;
  int next = 0;
  auto id = [&] { return "t" + std::to_string(salt) + "-" + std::to_string(next++); };
  for (const auto& [cat, marker] : category_markers()) {
    for (int i = 0; i < unfair_per_category; ++i) {
      corpus.add_clause(split, make_clause(id(), 1,
                                           "The provider may invoke " + marker +
                                               " terms in case " + std::to_string(i) + ".",
                                           {cat}));
    }
  }
  for (int i = 0; i < fair; ++i) {
    corpus.add_clause(split, make_clause(id(), 0,
                                         "You may export your data at any time, case " +
                                             std::to_string(i) + "."));
  }
  return corpus;
}

inline ClauseBatch manual_batch(const std::vector<std::pair<int, std::string>>& rows,
                                BatchKind kind) {
  ClauseBatch batch;
  batch.kind = kind;
  int next = 0;
  for (const auto& [label, text] : rows) {
    batch.clauses.push_back(make_clause("b" + std::to_string(next++), label, text));
  }
  return batch;
}

inline MockRules perfect_oracle_rules() {
  MockRules rules;
  rules.classify = MockRules::Classify::Keyword;
  rules.keywords = marker_list();
  rules.rewrite = MockRules::Rewrite::Variants;
  return rules;
}

inline MockRules always_zero_pathcode_rules() {
  MockRules rules;
  rules.classify = MockRules::Classify::AlwaysZero;
  rules.rewrite = MockRules::Rewrite::PathCode;
  return rules;
}

/// Reward as a pure function of the prompt text; the unit-test landscapes.
class LandscapeScorer : public RewardScorer {
 public:
  explicit LandscapeScorer(std::function<double(const std::string&)> fn)
      : fn_(std::move(fn)) {}
  double score(const std::string& prompt) override { return fn_(prompt); }
  bool llm_scored() const override { return false; }
  long long score_set_size() const override { return 0; }

 private:
  std::function<double(const std::string&)> fn_;
};

inline std::vector<std::string> path_segments(const std::string& prompt) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : prompt) {
    if (ch == '.') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

/// Greedy trap: the best depth-1 child (index 0) caps its whole subtree at
/// 0.6 while the 0.9 optimum sits along child 1's best-child chain.
inline double deceptive_landscape(const std::string& prompt) {
  auto seg = path_segments(prompt);
  if (seg.size() == 1) return 0.1;  // root
  const std::size_t depth = seg.size() - 1;
  if (seg[1] == "0") return depth == 1 ? 0.6 : 0.55;
  if (seg[1] == "1") {
    if (depth == 1) return 0.5;
    double base = std::min(0.5 + 0.1 * static_cast<double>(depth - 1), 0.9);
    return seg.back() == "0" ? base : std::max(0.0, base - 0.15);
  }
  if (seg[1] == "2") return depth == 1 ? 0.4 : 0.35;
  return depth == 1 ? 0.3 : 0.25;
}

inline double monotone_landscape(const std::string& prompt) {
  const std::size_t depth = path_segments(prompt).size() - 1;
  return std::min(0.8, 0.1 * static_cast<double>(depth));
}

inline double hashed_landscape(const std::string& prompt) {
  SplitMix64 rng(fnv1a64(prompt));
  return rng.next_unit();
}

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("tosopt-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline std::filesystem::path fixture_corpus_path() {
  return std::filesystem::path(TOSOPT_DATA_DIR) / "fixture_corpus.tsv";
}

/// A ready-to-run mock search context over a landscape scorer. Owns every
/// dependency so tests can mutate the config before running.
struct MockSearchHarness {
  Corpus corpus = synthetic_corpus(40, 3);
  MockRules rules = always_zero_pathcode_rules();
  std::unique_ptr<MockBackend> backend;
  CostLedger ledger;
  std::unique_ptr<LlmGateway> gateway;
  MetaPromptSet meta = MetaPromptSet::defaults();
  std::unique_ptr<GradientEngine> engine;
  std::unique_ptr<RewardScorer> scorer;
  SearchContext ctx;

  explicit MockSearchHarness(std::function<double(const std::string&)> landscape,
                             std::uint64_t seed = 42) {
    backend = std::make_unique<MockBackend>(rules, 1);
    gateway = std::make_unique<LlmGateway>(*backend, ledger);
    engine = std::make_unique<GradientEngine>(*gateway, meta);
    scorer = std::make_unique<LandscapeScorer>(std::move(landscape));
    ctx.config.seed = seed;
    ctx.config.sampling_seed = mix_seed(seed, 1);
    ctx.config.initial_prompt = "r";
    ctx.corpus = &corpus;
    ctx.engine = engine.get();
    ctx.scorer = scorer.get();
    ctx.ledger = &ledger;
  }
};

}  // namespace testsup
