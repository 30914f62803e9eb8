#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tosopt/common.hpp"

namespace tosopt {

/// One Terms-of-Service sentence with its gold fairness label and the
/// unfairness-category tags it was annotated with (empty for fair clauses).
struct Clause {
  std::string id;
  std::string text;
  int fairness = 0;  // 0 = fair, 1 = unfair
  std::vector<std::string> categories;

  bool operator==(const Clause&) const = default;
};

enum class BatchKind { GradientSet, ScoreSet, CorrectnessSet };
const char* to_string(BatchKind kind);

struct ClauseBatch {
  std::vector<Clause> clauses;
  std::uint64_t seed = 0;
  BatchKind kind = BatchKind::GradientSet;

  std::size_t size() const { return clauses.size(); }
  long long fair_count() const;
  long long unfair_count() const;
  /// Digest over the ordered clause ids; identifies a batch in traces.
  std::string digest() const;
};

enum class CorpusFormat { Tsv, Jsonl };
CorpusFormat format_from_string(const std::string& name);

/// Immutable after load; safe for concurrent reads.
class Corpus {
 public:
  void add_clause(const std::string& split, Clause clause);

  const std::vector<Clause>& split(const std::string& name) const;
  bool has_split(const std::string& name) const;
  const std::map<std::string, std::vector<Clause>>& splits() const { return splits_; }
  const std::map<std::string, std::vector<std::string>>& category_index() const {
    return category_index_;
  }
  std::size_t total_clauses() const;

 private:
  std::map<std::string, std::vector<Clause>> splits_;
  std::map<std::string, std::vector<std::string>> category_index_;
  std::set<std::string> ids_;
};

/// The canonical unfairness-category order used when filling per-category
/// quotas. Only three category names are fixed by the source annotation
/// scheme; the remaining six are placeholder tags and fully configurable.
std::vector<std::string> default_categories();

struct SamplerOptions {
  std::vector<std::string> categories = default_categories();
  std::string split = "train";
};

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format);

/// 20 clauses at 11 fair : 9 unfair, the unfair side filled one clause per
/// canonical category (5% of the batch each) where the corpus permits.
ClauseBatch sample_gradient_set(const Corpus& corpus, std::uint64_t seed,
                                const SamplerOptions& options = {});

/// Same stratification rule at size n (default 200): 55:45 fair:unfair with
/// an n/20 per-category quota. Sampled once per run and then held fixed.
ClauseBatch sample_score_set(const Corpus& corpus, std::uint64_t seed, std::size_t n = 200,
                             const SamplerOptions& options = {});

/// Balanced 50:50 batch for correctness-dataset construction.
ClauseBatch sample_correctness_set(const Corpus& corpus, std::uint64_t seed, std::size_t n,
                                   const SamplerOptions& options = {},
                                   const std::set<std::string>& exclude_ids = {});

/// Uniform draw preserving the split's natural label distribution; used for
/// the unbalanced validation build. `exclude_ids` keeps it disjoint from a
/// previously drawn batch.
ClauseBatch sample_unbalanced_set(const Corpus& corpus, std::uint64_t seed, std::size_t n,
                                  const SamplerOptions& options = {},
                                  const std::set<std::string>& exclude_ids = {});

}  // namespace tosopt
