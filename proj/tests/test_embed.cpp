#include <doctest.h>

#include <cmath>
#include <thread>

#include <httplib.h>

#include "support.hpp"
#include "tosopt/embed.hpp"

using namespace tosopt;
using namespace testsup;

namespace {

/// Wraps a provider and counts embed_batch calls and texts.
class CountingProvider : public EmbeddingProvider {
 public:
  explicit CountingProvider(EmbeddingProvider& inner) : inner_(inner) {}
  std::string id() const override { return inner_.id(); }
  std::size_t dim() const override { return inner_.dim(); }
  std::vector<std::vector<float>> embed_batch(
      const std::vector<std::string>& texts) override {
    calls += 1;
    texts_seen += static_cast<long long>(texts.size());
    return inner_.embed_batch(texts);
  }

  long long calls = 0;
  long long texts_seen = 0;

 private:
  EmbeddingProvider& inner_;
};

class BadDimProvider : public EmbeddingProvider {
 public:
  std::string id() const override { return "bad-dim"; }
  std::size_t dim() const override { return 8; }
  std::vector<std::vector<float>> embed_batch(
      const std::vector<std::string>& texts) override {
    return std::vector<std::vector<float>>(texts.size(), std::vector<float>(3, 0.5f));
  }
};

}  // namespace

TEST_CASE("hash projection provider is deterministic and unit length") {
  HashProjectionProvider provider(16, 7);
  CHECK(provider.dim() == 16);
  auto a = provider.embed_batch({"abc"})[0];
  auto b = provider.embed_batch({"abc"})[0];
  CHECK(a == b);
  double norm = 0;
  for (float v : a) norm += static_cast<double>(v) * v;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));

  auto other = provider.embed_batch({"abd"})[0];
  CHECK(a != other);

  HashProjectionProvider reseeded(16, 8);
  CHECK(reseeded.embed_batch({"abc"})[0] != a);
  CHECK(provider.id() != reseeded.id());
}

TEST_CASE("one_hot") {
  CHECK(one_hot(0) == std::array<double, 2>{1.0, 0.0});
  CHECK(one_hot(1) == std::array<double, 2>{0.0, 1.0});
  CHECK(one_hot(0)[0] + one_hot(0)[1] == 1.0);
  CHECK_THROWS_AS(one_hot(2), PreconditionError);
}

TEST_CASE("second embed of the same text performs zero provider requests") {
  HashProjectionProvider inner(16, 1);
  CountingProvider provider(inner);
  EmbeddingCache cache;
  auto first = embed(provider, "hello clause", &cache);
  CHECK(provider.calls == 1);
  auto second = embed(provider, "hello clause", &cache);
  CHECK(provider.calls == 1);
  CHECK(first == second);
}

TEST_CASE("embed rejects empty text and dimension-contract violations") {
  HashProjectionProvider provider(4, 1);
  CHECK_THROWS_AS(embed(provider, "   ", nullptr), PreconditionError);

  BadDimProvider bad;
  CHECK_THROWS_AS(embed(bad, "text", nullptr), IntegrityError);
}

TEST_CASE("cache reload from disk returns bitwise-identical float32 vectors") {
  TempDir dir;
  auto cache_path = dir.path / "vectors.cache";
  HashProjectionProvider provider(32, 3);

  std::vector<float> original;
  {
    EmbeddingCache cache(cache_path);
    original = embed(provider, "persist me", &cache);
    embed(provider, "and me too", &cache);
    CHECK(cache.size() == 2);
  }
  {
    EmbeddingCache reloaded(cache_path);
    CHECK(reloaded.size() == 2);
    auto hit = reloaded.get(provider.id(), "persist me");
    REQUIRE(hit.has_value());
    CHECK(*hit == original);  // bitwise float32 equality
  }

  SUBCASE("wrong magic is rejected") {
    auto bogus = dir.path / "bogus.cache";
    write_text_file(bogus, "NOTACACHEFILE");
    CHECK_THROWS_AS(EmbeddingCache{bogus}, IntegrityError);
  }
}

TEST_CASE("cache keys separate providers") {
  HashProjectionProvider a(8, 1), b(8, 2);
  EmbeddingCache cache;
  auto va = embed(a, "same text", &cache);
  auto vb = embed(b, "same text", &cache);
  CHECK(va != vb);
  CHECK(cache.size() == 2);
}

TEST_CASE("concurrent embeds against one cache are consistent") {
  HashProjectionProvider provider(16, 5);
  EmbeddingCache cache;
  std::vector<std::thread> workers;
  std::vector<std::vector<float>> results(8);
  for (int t = 0; t < 8; ++t) {
    workers.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) {
        results[static_cast<std::size_t>(t)] =
            embed(provider, "shared text " + std::to_string(i % 5), &cache);
      }
    });
  }
  for (auto& w : workers) w.join();
  CHECK(cache.size() == 5);
}

TEST_CASE("featurize concatenates prompt, clause, and one-hot label") {
  HashProjectionProvider provider(16, 2);
  EmbeddingCache cache;
  Clause clause = make_clause("c1", 1, "The provider may remove any content.");

  FeatureVector f = featurize("base prompt", clause, 1, provider, &cache);
  CHECK(f.values.size() == 34);  // 16 + 16 + 2
  CHECK(f.layout.prompt_dim == 16);
  CHECK(f.layout.clause_dim == 16);
  CHECK(f.layout.total() == 34);
  CHECK(f.values[32] == 0.0);
  CHECK(f.values[33] == 1.0);

  FeatureVector again = featurize("base prompt", clause, 1, provider, &cache);
  CHECK(f.values == again.values);
}

TEST_CASE("embed_all computes only the misses in one batched call") {
  HashProjectionProvider inner(8, 9);
  CountingProvider provider(inner);
  EmbeddingCache cache;
  embed(provider, "warm", &cache);
  CHECK(provider.calls == 1);

  auto vectors = embed_all(provider, {"warm", "cold-1", "cold-2"}, &cache);
  CHECK(vectors.size() == 3);
  CHECK(provider.calls == 2);      // one extra batched call
  CHECK(provider.texts_seen == 3); // 1 warm + 2 cold
  CHECK(cache.size() == 3);
}

TEST_CASE("remote embedding provider round trip at the published dimension") {
  httplib::Server server;
  server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& text : body.at("texts")) {
      std::vector<float> v(384, 0.0f);
      v[0] = static_cast<float>(text.get<std::string>().size());
      vectors.push_back(v);
    }
    res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteEmbeddingProvider::Config cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/embed";
  cfg.model = "general-purpose";
  cfg.dim = 384;
  RemoteEmbeddingProvider provider(cfg);
  CHECK(provider.dim() == 384);

  EmbeddingCache cache;
  Clause clause = make_clause("r1", 0, "A remote-embedded clause.");
  FeatureVector f = featurize("remote prompt", clause, 0, provider, &cache);
  CHECK(f.values.size() == 770);  // 384 + 384 + 2

  server.stop();
  listener.join();
}
