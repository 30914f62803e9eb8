#include "tosopt/embed.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "tosopt/rng.hpp"

namespace tosopt {

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

HashProjectionProvider::HashProjectionProvider(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw ConfigError("embedding dimension must be >= 1");
}

std::string HashProjectionProvider::id() const {
  return "hashproj-" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

std::vector<std::vector<float>> HashProjectionProvider::embed_batch(
    const std::vector<std::string>& texts) {
  std::vector<std::vector<float>> out(texts.size());
  for (std::size_t t = 0; t < texts.size(); ++t) {
    const std::uint64_t base = mix_seed(seed_, fnv1a64(texts[t]));
    std::vector<double> v(dim_);
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      double u = static_cast<double>(hash64(base ^ (i * 0x9e3779b97f4a7c15ULL)) >> 11) *
                 0x1.0p-53;
      v[i] = 2.0 * u - 1.0;
      norm_sq += v[i] * v[i];
    }
    double inv = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;
    std::vector<float> row(dim_);
    for (std::size_t i = 0; i < dim_; ++i) row[i] = static_cast<float>(v[i] * inv);
    if (norm_sq == 0.0) row[0] = 1.0f;
    out[t] = std::move(row);
  }
  return out;
}

RemoteEmbeddingProvider::RemoteEmbeddingProvider(Config config)
    : config_(std::move(config)) {
  auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("embedding endpoint must be a full URL: " + config_.endpoint);
  }
  auto path_start = config_.endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    base_ = config_.endpoint;
    path_ = "/";
  } else {
    base_ = config_.endpoint.substr(0, path_start);
    path_ = config_.endpoint.substr(path_start);
  }
}

std::string RemoteEmbeddingProvider::id() const {
  return "remote-embed:" + config_.model + "-" + std::to_string(config_.dim);
}

std::vector<std::vector<float>> RemoteEmbeddingProvider::embed_batch(
    const std::vector<std::string>& texts) {
  nlohmann::json body{{"model", config_.model}, {"texts", texts}};

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client client(base_);
    httplib::Headers headers;
    if (!config_.auth_env.empty()) {
      if (const char* token = std::getenv(config_.auth_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
      }
    }
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (res && res->status == 200) {
      try {
        nlohmann::json j = nlohmann::json::parse(res->body);
        auto vectors = j.at("vectors").get<std::vector<std::vector<float>>>();
        if (vectors.size() != texts.size()) {
          throw IntegrityError("embedding endpoint returned " +
                               std::to_string(vectors.size()) + " vectors for " +
                               std::to_string(texts.size()) + " texts");
        }
        for (const auto& v : vectors) {
          if (v.size() != config_.dim) {
            throw IntegrityError("embedding dimension mismatch: expected " +
                                 std::to_string(config_.dim) + ", got " +
                                 std::to_string(v.size()));
          }
        }
        return vectors;
      } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed embedding payload: ") + e.what());
      }
    }
    last_error = res ? "status " + std::to_string(res->status)
                     : httplib::to_string(res.error());
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_base_ms << (attempt - 1)));
    }
  }
  throw TransportError("embedding request failed after " +
                       std::to_string(config_.max_attempts) + " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

EmbeddingCache::EmbeddingCache(std::filesystem::path path)
    : path_(std::move(path)), persistent_(true) {
  load();
}

std::string EmbeddingCache::key_of(const std::string& provider_id, const std::string& text) {
  return provider_id + '\x1f' + content_digest(text);
}

void EmbeddingCache::load() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) {
    // Fresh cache: write the header now so appends always follow a magic.
    std::ofstream out(path_, std::ios::binary);
    if (!out) throw ConfigError("cannot create embedding cache: " + path_.string());
    out.write(kMagic, sizeof(kMagic));
    return;
  }
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError("embedding cache has wrong magic/version: " + path_.string());
  }
  // Records: u32 key length, key bytes, u32 dim, dim float32. A truncated
  // tail (interrupted append) is ignored.
  for (;;) {
    std::uint32_t klen = 0;
    if (!in.read(reinterpret_cast<char*>(&klen), sizeof(klen))) break;
    std::string key(klen, '\0');
    if (!in.read(key.data(), klen)) break;
    std::uint32_t dim = 0;
    if (!in.read(reinterpret_cast<char*>(&dim), sizeof(dim))) break;
    std::vector<float> vec(dim);
    if (!in.read(reinterpret_cast<char*>(vec.data()),
                 static_cast<std::streamsize>(dim * sizeof(float)))) {
      break;
    }
    entries_[key] = std::move(vec);
  }
}

void EmbeddingCache::append_record(const std::string& key, const std::vector<float>& vector) {
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot append to embedding cache: " + path_.string());
  std::uint32_t klen = static_cast<std::uint32_t>(key.size());
  std::uint32_t dim = static_cast<std::uint32_t>(vector.size());
  out.write(reinterpret_cast<const char*>(&klen), sizeof(klen));
  out.write(key.data(), klen);
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(vector.data()),
            static_cast<std::streamsize>(vector.size() * sizeof(float)));
  out.flush();
}

std::optional<std::vector<float>> EmbeddingCache::get(const std::string& provider_id,
                                                      const std::string& text) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key_of(provider_id, text));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::put(const std::string& provider_id, const std::string& text,
                         const std::vector<float>& vector) {
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.emplace(key_of(provider_id, text), vector);
  if (inserted && persistent_) {
    append_record(it->first, vector);
  }
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

std::vector<float> embed(EmbeddingProvider& provider, const std::string& text,
                         EmbeddingCache* cache) {
  if (trim(text).empty()) {
    throw PreconditionError("embed: text must be nonempty");
  }
  if (cache) {
    if (auto hit = cache->get(provider.id(), text)) {
      if (hit->size() != provider.dim()) {
        throw IntegrityError("cached vector dimension " + std::to_string(hit->size()) +
                             " does not match provider dim " +
                             std::to_string(provider.dim()));
      }
      return *hit;
    }
  }
  auto vectors = provider.embed_batch({text});
  if (vectors.size() != 1 || vectors[0].size() != provider.dim()) {
    throw IntegrityError("provider " + provider.id() + " violated its dimension contract");
  }
  if (cache) cache->put(provider.id(), text, vectors[0]);
  return vectors[0];
}

std::vector<std::vector<float>> embed_all(EmbeddingProvider& provider,
                                          const std::vector<std::string>& texts,
                                          EmbeddingCache* cache) {
  std::vector<std::vector<float>> out(texts.size());
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (trim(texts[i]).empty()) {
      throw PreconditionError("embed: text must be nonempty");
    }
    if (cache) {
      if (auto hit = cache->get(provider.id(), texts[i])) {
        out[i] = std::move(*hit);
        continue;
      }
    }
    missing.push_back(i);
  }
  if (!missing.empty()) {
    std::vector<std::string> queries;
    queries.reserve(missing.size());
    for (std::size_t i : missing) queries.push_back(texts[i]);
    auto vectors = provider.embed_batch(queries);
    if (vectors.size() != queries.size()) {
      throw IntegrityError("provider " + provider.id() + " returned wrong batch size");
    }
    for (std::size_t j = 0; j < missing.size(); ++j) {
      if (vectors[j].size() != provider.dim()) {
        throw IntegrityError("provider " + provider.id() + " violated its dimension contract");
      }
      if (cache) cache->put(provider.id(), texts[missing[j]], vectors[j]);
      out[missing[j]] = std::move(vectors[j]);
    }
  }
  return out;
}

std::array<double, 2> one_hot(int label) {
  if (label != 0 && label != 1) {
    throw PreconditionError("one_hot: label must be 0 or 1");
  }
  return label == 0 ? std::array<double, 2>{1.0, 0.0} : std::array<double, 2>{0.0, 1.0};
}

nlohmann::json FeatureLayout::to_json() const {
  return nlohmann::json{
      {"prompt_dim", prompt_dim}, {"clause_dim", clause_dim}, {"label_dim", label_dim}};
}

FeatureLayout FeatureLayout::from_json(const nlohmann::json& j) {
  FeatureLayout l;
  l.prompt_dim = j.at("prompt_dim").get<std::size_t>();
  l.clause_dim = j.at("clause_dim").get<std::size_t>();
  l.label_dim = j.at("label_dim").get<std::size_t>();
  return l;
}

FeatureVector featurize(const std::string& prompt, const Clause& clause, int label,
                        EmbeddingProvider& provider, EmbeddingCache* cache) {
  auto prompt_vec = embed(provider, prompt, cache);
  auto clause_vec = embed(provider, clause.text, cache);
  auto label_vec = one_hot(label);

  FeatureVector f;
  f.layout = FeatureLayout{prompt_vec.size(), clause_vec.size(), 2};
  f.values.reserve(f.layout.total());
  for (float v : prompt_vec) f.values.push_back(static_cast<double>(v));
  for (float v : clause_vec) f.values.push_back(static_cast<double>(v));
  f.values.push_back(label_vec[0]);
  f.values.push_back(label_vec[1]);
  return f;
}

}  // namespace tosopt
