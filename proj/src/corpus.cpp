#include "tosopt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "tosopt/rng.hpp"

namespace tosopt {

namespace {

void validate_clause(const Clause& c, const std::string& where) {
  if (c.fairness != 0 && c.fairness != 1) {
    throw ParseError(where + ": label out of range (expected 0 or 1, got " +
                     std::to_string(c.fairness) + ")");
  }
  if (trim(c.text).empty()) {
    throw ParseError(where + ": empty clause text");
  }
  if (!c.categories.empty() && c.fairness != 1) {
    throw ParseError(where + ": categorized clause must be labeled unfair");
  }
  for (const auto& cat : c.categories) {
    if (trim(cat).empty()) {
      throw ParseError(where + ": empty category tag");
    }
  }
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

const char* to_string(BatchKind kind) {
  switch (kind) {
    case BatchKind::GradientSet: return "gradient-set";
    case BatchKind::ScoreSet: return "score-set";
    case BatchKind::CorrectnessSet: return "correctness-set";
  }
  return "unknown";
}

long long ClauseBatch::fair_count() const {
  long long n = 0;
  for (const auto& c : clauses) n += (c.fairness == 0);
  return n;
}

long long ClauseBatch::unfair_count() const {
  return static_cast<long long>(clauses.size()) - fair_count();
}

std::string ClauseBatch::digest() const {
  std::string joined;
  for (const auto& c : clauses) {
    joined += c.id;
    joined += '\n';
  }
  return content_digest(joined);
}

CorpusFormat format_from_string(const std::string& name) {
  if (name == "tsv") return CorpusFormat::Tsv;
  if (name == "jsonl") return CorpusFormat::Jsonl;
  throw ConfigError("unknown corpus format: " + name);
}

void Corpus::add_clause(const std::string& split, Clause clause) {
  if (!ids_.insert(clause.id).second) {
    throw IntegrityError("duplicate clause id: " + clause.id);
  }
  for (const auto& cat : clause.categories) {
    // Keep each category's id list sorted so the index is a canonical
    // function of the data, independent of file row order.
    auto& ids = category_index_[cat];
    ids.insert(std::lower_bound(ids.begin(), ids.end(), clause.id), clause.id);
  }
  splits_[split].push_back(std::move(clause));
}

const std::vector<Clause>& Corpus::split(const std::string& name) const {
  auto it = splits_.find(name);
  if (it == splits_.end()) {
    throw SamplingError("corpus has no split named '" + name + "'");
  }
  return it->second;
}

bool Corpus::has_split(const std::string& name) const { return splits_.count(name) > 0; }

std::size_t Corpus::total_clauses() const {
  std::size_t n = 0;
  for (const auto& [name, clauses] : splits_) n += clauses.size();
  return n;
}

std::vector<std::string> default_categories() {
  return {"arbitration", "content-removal", "jurisdiction", "category-4", "category-5",
          "category-6",  "category-7",      "category-8",   "category-9"};
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("corpus file not found: " + path.string());
  }

  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);

    std::string split_name;
    Clause clause;
    if (format == CorpusFormat::Tsv) {
      if (line_no == 1 && line.rfind("id\t", 0) == 0) continue;  // optional header
      auto fields = split_fields(line, '\t');
      if (fields.size() != 5) {
        throw ParseError(where + ": expected 5 tab-separated fields, got " +
                         std::to_string(fields.size()));
      }
      clause.id = fields[0];
      split_name = fields[1];
      try {
        std::size_t consumed = 0;
        clause.fairness = std::stoi(fields[2], &consumed);
        if (consumed != fields[2].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(where + ": label is not an integer: '" + fields[2] + "'");
      }
      if (!fields[3].empty()) {
        for (auto& cat : split_fields(fields[3], ';')) {
          if (!cat.empty()) clause.categories.push_back(cat);
        }
      }
      clause.text = trim(fields[4]);
    } else {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": invalid JSON: " + e.what());
      }
      if (!j.contains("id") || !j.contains("text") || !j.contains("label")) {
        throw ParseError(where + ": record must carry id, text, label");
      }
      try {
        clause.id = j.at("id").get<std::string>();
        clause.text = trim(j.at("text").get<std::string>());
        if (!j.at("label").is_number_integer()) throw ParseError(where + ": label out of range");
        clause.fairness = j.at("label").get<int>();
        split_name = j.value("split", std::string("train"));
        if (j.contains("categories")) {
          clause.categories = j.at("categories").get<std::vector<std::string>>();
        }
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": bad field type: " + e.what());
      }
    }

    if (clause.id.empty()) {
      throw ParseError(where + ": empty clause id");
    }
    if (split_name.empty()) {
      throw ParseError(where + ": empty split name");
    }
    validate_clause(clause, where);
    corpus.add_clause(split_name, std::move(clause));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ConfigError("cannot open corpus file for writing: " + path.string());
  }
  if (format == CorpusFormat::Tsv) {
    out << "id\tsplit\tlabel\tcategories\ttext\n";
    for (const auto& [split_name, clauses] : corpus.splits()) {
      for (const auto& c : clauses) {
        if (c.text.find('\t') != std::string::npos || c.text.find('\n') != std::string::npos) {
          throw IntegrityError("clause " + c.id + " contains tab/newline; use jsonl format");
        }
        std::string cats;
        for (std::size_t i = 0; i < c.categories.size(); ++i) {
          if (i) cats += ';';
          cats += c.categories[i];
        }
        out << c.id << '\t' << split_name << '\t' << c.fairness << '\t' << cats << '\t'
            << c.text << '\n';
      }
    }
  } else {
    for (const auto& [split_name, clauses] : corpus.splits()) {
      for (const auto& c : clauses) {
        nlohmann::json j{{"id", c.id},
                         {"split", split_name},
                         {"label", c.fairness},
                         {"categories", c.categories},
                         {"text", c.text}};
        out << j.dump() << '\n';
      }
    }
  }
}

namespace {

struct SplitPools {
  std::vector<const Clause*> fair;
  std::vector<const Clause*> unfair;
  std::unordered_map<std::string, const Clause*> by_id;
};

SplitPools build_pools(const Corpus& corpus, const SamplerOptions& options,
                       const std::set<std::string>& exclude_ids) {
  SplitPools pools;
  for (const auto& c : corpus.split(options.split)) {
    if (exclude_ids.count(c.id)) continue;
    pools.by_id[c.id] = &c;
    (c.fairness == 0 ? pools.fair : pools.unfair).push_back(&c);
  }
  return pools;
}

ClauseBatch finish_batch(std::vector<const Clause*> picked, std::uint64_t seed,
                         BatchKind kind, SplitMix64& rng) {
  shuffle_inplace(picked, rng);
  ClauseBatch batch;
  batch.seed = seed;
  batch.kind = kind;
  batch.clauses.reserve(picked.size());
  for (const Clause* c : picked) batch.clauses.push_back(*c);
  return batch;
}

ClauseBatch stratified_sample(const Corpus& corpus, std::uint64_t seed, std::size_t n,
                              BatchKind kind, const SamplerOptions& options) {
  if (n == 0) {
    throw PreconditionError("batch size must be >= 1");
  }
  SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  SplitPools pools = build_pools(corpus, options, {});

  const std::size_t fair_target =
      static_cast<std::size_t>(std::llround(0.55 * static_cast<double>(n)));
  const std::size_t unfair_target = n - fair_target;
  const std::size_t category_quota = n / 20;  // 5% of the batch per category

  if (pools.fair.size() < fair_target) {
    throw SamplingError("insufficient clauses in stratum 'fair' of split '" + options.split +
                        "': need " + std::to_string(fair_target) + ", have " +
                        std::to_string(pools.fair.size()));
  }
  if (pools.unfair.size() < unfair_target) {
    throw SamplingError("insufficient clauses in stratum 'unfair' of split '" + options.split +
                        "': need " + std::to_string(unfair_target) + ", have " +
                        std::to_string(pools.unfair.size()));
  }

  std::vector<const Clause*> picked;
  picked.reserve(n);
  std::unordered_set<std::string> picked_ids;

  // Per-category quota first, in canonical order; categories the corpus
  // cannot serve fall through to the unconstrained fill below.
  const auto& index = corpus.category_index();
  for (const auto& cat : options.categories) {
    if (picked.size() >= unfair_target) break;
    auto it = index.find(cat);
    if (it == index.end()) continue;
    std::vector<const Clause*> pool;
    for (const auto& id : it->second) {
      auto found = pools.by_id.find(id);
      if (found != pools.by_id.end() && !picked_ids.count(id)) pool.push_back(found->second);
    }
    std::size_t want = std::min(category_quota, unfair_target - picked.size());
    for (std::size_t idx : sample_indices(pool.size(), std::min(want, pool.size()), rng)) {
      picked.push_back(pool[idx]);
      picked_ids.insert(pool[idx]->id);
    }
  }

  // Unconstrained unfair fill.
  {
    std::vector<const Clause*> pool;
    for (const Clause* c : pools.unfair) {
      if (!picked_ids.count(c->id)) pool.push_back(c);
    }
    std::size_t want = unfair_target - picked.size();
    if (pool.size() < want) {
      throw SamplingError("insufficient clauses in stratum 'unfair' of split '" +
                          options.split + "' after category fill");
    }
    for (std::size_t idx : sample_indices(pool.size(), want, rng)) {
      picked.push_back(pool[idx]);
      picked_ids.insert(pool[idx]->id);
    }
  }

  for (std::size_t idx : sample_indices(pools.fair.size(), fair_target, rng)) {
    picked.push_back(pools.fair[idx]);
  }

  return finish_batch(std::move(picked), seed, kind, rng);
}

}  // namespace

ClauseBatch sample_gradient_set(const Corpus& corpus, std::uint64_t seed,
                                const SamplerOptions& options) {
  return stratified_sample(corpus, seed, 20, BatchKind::GradientSet, options);
}

ClauseBatch sample_score_set(const Corpus& corpus, std::uint64_t seed, std::size_t n,
                             const SamplerOptions& options) {
  return stratified_sample(corpus, seed, n, BatchKind::ScoreSet, options);
}

ClauseBatch sample_correctness_set(const Corpus& corpus, std::uint64_t seed, std::size_t n,
                                   const SamplerOptions& options,
                                   const std::set<std::string>& exclude_ids) {
  if (n == 0) {
    throw PreconditionError("batch size must be >= 1");
  }
  SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(BatchKind::CorrectnessSet)));
  SplitPools pools = build_pools(corpus, options, exclude_ids);

  const std::size_t unfair_target = n / 2;
  const std::size_t fair_target = n - unfair_target;
  if (pools.fair.size() < fair_target) {
    throw SamplingError("insufficient clauses in stratum 'fair' of split '" + options.split +
                        "': need " + std::to_string(fair_target) + ", have " +
                        std::to_string(pools.fair.size()));
  }
  if (pools.unfair.size() < unfair_target) {
    throw SamplingError("insufficient clauses in stratum 'unfair' of split '" + options.split +
                        "': need " + std::to_string(unfair_target) + ", have " +
                        std::to_string(pools.unfair.size()));
  }

  std::vector<const Clause*> picked;
  picked.reserve(n);
  for (std::size_t idx : sample_indices(pools.unfair.size(), unfair_target, rng)) {
    picked.push_back(pools.unfair[idx]);
  }
  for (std::size_t idx : sample_indices(pools.fair.size(), fair_target, rng)) {
    picked.push_back(pools.fair[idx]);
  }
  return finish_batch(std::move(picked), seed, BatchKind::CorrectnessSet, rng);
}

ClauseBatch sample_unbalanced_set(const Corpus& corpus, std::uint64_t seed, std::size_t n,
                                  const SamplerOptions& options,
                                  const std::set<std::string>& exclude_ids) {
  if (n == 0) {
    throw PreconditionError("batch size must be >= 1");
  }
  SplitMix64 rng(mix_seed(seed, 0x10cada'11ULL));
  std::vector<const Clause*> pool;
  for (const auto& c : corpus.split(options.split)) {
    if (!exclude_ids.count(c.id)) pool.push_back(&c);
  }
  if (pool.size() < n) {
    throw SamplingError("split '" + options.split + "' has only " +
                        std::to_string(pool.size()) + " clauses available, need " +
                        std::to_string(n));
  }
  std::vector<const Clause*> picked;
  picked.reserve(n);
  for (std::size_t idx : sample_indices(pool.size(), n, rng)) picked.push_back(pool[idx]);
  return finish_batch(std::move(picked), seed, BatchKind::CorrectnessSet, rng);
}

}  // namespace tosopt
