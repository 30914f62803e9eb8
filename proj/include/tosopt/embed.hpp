#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tosopt/common.hpp"
#include "tosopt/corpus.hpp"

namespace tosopt {

struct EmbeddingVector {
  std::vector<float> values;
  std::string provider_id;
  std::size_t dim() const { return values.size(); }
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<std::vector<float>> embed_batch(
      const std::vector<std::string>& texts) = 0;
};

/// Deterministic offline provider: hashes the text into a seed and projects
/// onto the unit sphere of the configured dimension. Stands in for the
/// external sentence-embedding models in tests and offline runs.
class HashProjectionProvider : public EmbeddingProvider {
 public:
  HashProjectionProvider(std::size_t dim, std::uint64_t seed);
  std::string id() const override;
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<float>> embed_batch(
      const std::vector<std::string>& texts) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Remote embedding API: POST {"model": ..., "texts": [...]} and expect
/// {"vectors": [[...], ...]} back, one vector per text, of the configured
/// dimension.
class RemoteEmbeddingProvider : public EmbeddingProvider {
 public:
  struct Config {
    std::string endpoint;
    std::string model;
    std::size_t dim = 384;
    std::string auth_env;
    int max_attempts = 3;
    int backoff_base_ms = 100;
  };

  explicit RemoteEmbeddingProvider(Config config);
  std::string id() const override;
  std::size_t dim() const override { return config_.dim; }
  std::vector<std::vector<float>> embed_batch(
      const std::vector<std::string>& texts) override;

 private:
  Config config_;
  std::string base_;
  std::string path_;
};

/// Append-only on-disk vector store keyed by (provider id, content digest).
/// A hit returns the float32 vector bitwise as first stored. Concurrent
/// readers are fine; writes are serialized internally.
class EmbeddingCache {
 public:
  static constexpr char kMagic[8] = {'T', 'O', 'S', 'E', 'M', 'B', 'C', '1'};

  EmbeddingCache() = default;  // memory-only
  explicit EmbeddingCache(std::filesystem::path path);

  std::optional<std::vector<float>> get(const std::string& provider_id,
                                        const std::string& text) const;
  void put(const std::string& provider_id, const std::string& text,
           const std::vector<float>& vector);

  std::size_t size() const;

 private:
  static std::string key_of(const std::string& provider_id, const std::string& text);
  void load();
  void append_record(const std::string& key, const std::vector<float>& vector);

  std::filesystem::path path_;
  bool persistent_ = false;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<float>> entries_;
};

/// Cache-through embedding of one text. `cache` may be null.
std::vector<float> embed(EmbeddingProvider& provider, const std::string& text,
                         EmbeddingCache* cache);

/// Batched variant; computes only the cache misses, in one provider call.
std::vector<std::vector<float>> embed_all(EmbeddingProvider& provider,
                                          const std::vector<std::string>& texts,
                                          EmbeddingCache* cache);

std::array<double, 2> one_hot(int label);

struct FeatureLayout {
  std::size_t prompt_dim = 0;
  std::size_t clause_dim = 0;
  std::size_t label_dim = 2;

  std::size_t total() const { return prompt_dim + clause_dim + label_dim; }
  bool operator==(const FeatureLayout&) const = default;
  nlohmann::json to_json() const;
  static FeatureLayout from_json(const nlohmann::json& j);
};

struct FeatureVector {
  std::vector<double> values;
  FeatureLayout layout;
};

/// [ e(prompt) || e(clause) || one_hot(label) ], in that fixed order.
FeatureVector featurize(const std::string& prompt, const Clause& clause, int label,
                        EmbeddingProvider& provider, EmbeddingCache* cache);

}  // namespace tosopt
