#include <doctest.h>

#include <fstream>
#include <set>

#include "support.hpp"
#include "tosopt/corpus.hpp"

using namespace tosopt;
using namespace testsup;

namespace {

std::filesystem::path write_temp(const TempDir& dir, const std::string& name,
                                 const std::string& content) {
  auto path = dir.path / name;
  write_text_file(path, content);
  return path;
}

}  // namespace

TEST_CASE("load_corpus parses a small tsv file") {
  TempDir dir;
  auto path = write_temp(dir, "mini.tsv",
                         "id\tsplit\tlabel\tcategories\ttext\n"
                         "a1\ttrain\t0\t\tYou may cancel at any time.\n"
                         "a2\ttrain\t0\t\tRefunds are available.\n"
                         "a3\ttrain\t1\tarbitration\tDisputes go to binding arbitration.\n");
  Corpus corpus = load_corpus(path, CorpusFormat::Tsv);
  CHECK(corpus.split("train").size() == 3);
  CHECK(corpus.category_index().size() == 1);
  CHECK(corpus.category_index().at("arbitration") == std::vector<std::string>{"a3"});
  CHECK(corpus.split("train")[2].fairness == 1);
}

TEST_CASE("load_corpus rejects out-of-range labels with the line number") {
  TempDir dir;
  auto path = write_temp(dir, "bad.tsv",
                         "a1\ttrain\t0\t\tfine clause text\n"
                         "a2\ttrain\t2\t\tbad label here\n");
  try {
    load_corpus(path, CorpusFormat::Tsv);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("label out of range") != std::string::npos);
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("load_corpus rejects duplicate ids") {
  TempDir dir;
  auto path = write_temp(dir, "dup.tsv",
                         "a1\ttrain\t0\t\tclause one\n"
                         "a1\tval\t0\t\tclause two\n");
  CHECK_THROWS_AS(load_corpus(path, CorpusFormat::Tsv), IntegrityError);
}

TEST_CASE("load_corpus rejects categorized fair clauses and empty text") {
  TempDir dir;
  auto p1 = write_temp(dir, "catfair.tsv", "a1\ttrain\t0\tarbitration\tsome text\n");
  CHECK_THROWS_AS(load_corpus(p1, CorpusFormat::Tsv), ParseError);
  auto p2 = write_temp(dir, "empty.tsv", "a1\ttrain\t1\t\t   \n");
  CHECK_THROWS_AS(load_corpus(p2, CorpusFormat::Tsv), ParseError);
}

TEST_CASE("jsonl loading and malformed json lines") {
  TempDir dir;
  auto good = write_temp(
      dir, "ok.jsonl",
      R"({"id":"j1","split":"train","label":1,"categories":["jurisdiction"],"text":"Courts of the provider have exclusive jurisdiction."})"
      "\n"
      R"({"id":"j2","split":"val","label":0,"text":"You keep your content."})"
      "\n");
  Corpus corpus = load_corpus(good, CorpusFormat::Jsonl);
  CHECK(corpus.split("train").size() == 1);
  CHECK(corpus.split("val").size() == 1);

  auto bad = write_temp(dir, "bad.jsonl", "{not json}\n");
  try {
    load_corpus(bad, CorpusFormat::Jsonl);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }
}

TEST_CASE("save/load round trip is identity on the data model") {
  Corpus corpus = load_corpus(fixture_corpus_path(), CorpusFormat::Tsv);
  TempDir dir;
  for (auto format : {CorpusFormat::Tsv, CorpusFormat::Jsonl}) {
    auto path = dir.path / (format == CorpusFormat::Tsv ? "roundtrip.tsv" : "roundtrip.jsonl");
    save_corpus(corpus, path, format);
    Corpus back = load_corpus(path, format);
    REQUIRE(back.splits().size() == corpus.splits().size());
    for (const auto& [name, clauses] : corpus.splits()) {
      CHECK(back.split(name) == clauses);
    }
    CHECK(back.category_index() == corpus.category_index());
  }
}

TEST_CASE("loading a claudette-scale export reports the published split sizes") {
  TempDir dir;
  auto path = dir.path / "scale.jsonl";
  {
    std::ofstream out(path);
    int next = 0;
    auto emit = [&](const std::string& split, int n) {
      for (int i = 0; i < n; ++i) {
        bool unfair = (i % 10) == 0;
        nlohmann::json j{{"id", "c" + std::to_string(next++)},
                         {"split", split},
                         {"label", unfair ? 1 : 0},
                         {"text", "synthetic clause number " + std::to_string(next)}};
        if (unfair) j["categories"] = {"arbitration"};
        out << j.dump() << '\n';
      }
    };
    emit("train", 8354);
    emit("val", 8279);
    emit("test", 3784);
  }
  Corpus corpus = load_corpus(path, CorpusFormat::Jsonl);
  CHECK(corpus.split("train").size() == 8354);
  CHECK(corpus.split("val").size() == 8279);
  CHECK(corpus.split("test").size() == 3784);
}

TEST_CASE("gradient set: 20 clauses at 11 fair / 9 unfair, deterministic per seed") {
  Corpus corpus = synthetic_corpus(60, 4);
  ClauseBatch a = sample_gradient_set(corpus, 7);
  ClauseBatch b = sample_gradient_set(corpus, 7);
  CHECK(a.size() == 20);
  CHECK(a.fair_count() == 11);
  CHECK(a.unfair_count() == 9);
  REQUIRE(a.clauses.size() == b.clauses.size());
  for (std::size_t i = 0; i < a.clauses.size(); ++i) {
    CHECK(a.clauses[i].id == b.clauses[i].id);
  }

  std::set<std::string> ids;
  for (const auto& c : a.clauses) ids.insert(c.id);
  CHECK(ids.size() == 20);
}

TEST_CASE("gradient set covers one clause per category when the corpus permits") {
  Corpus corpus = synthetic_corpus(60, 4);
  ClauseBatch batch = sample_gradient_set(corpus, 3);
  std::set<std::string> covered;
  for (const auto& c : batch.clauses) {
    for (const auto& cat : c.categories) covered.insert(cat);
  }
  CHECK(covered.size() == 9);  // all nine categories represented
}

TEST_CASE("gradient set falls back when a category is missing") {
  // Only three categories exist; the other six quotas fall back to the
  // unconstrained unfair pool.
  Corpus corpus;
  int next = 0;
  auto markers = category_markers();
  for (int ci = 0; ci < 3; ++ci) {
    for (int i = 0; i < 5; ++i) {
      corpus.add_clause("train",
                        make_clause("u" + std::to_string(next++), 1,
                                    "Clause with " + markers[ci].second + " case " +
                                        std::to_string(i),
                                    {markers[ci].first}));
    }
  }
  for (int i = 0; i < 30; ++i) {
    corpus.add_clause("train", make_clause("f" + std::to_string(i), 0,
                                           "A fair clause number " + std::to_string(i)));
  }
  ClauseBatch batch = sample_gradient_set(corpus, 11);
  CHECK(batch.fair_count() == 11);
  CHECK(batch.unfair_count() == 9);
}

TEST_CASE("sampling errors name the deficient stratum") {
  Corpus no_unfair = synthetic_corpus(40, 0);
  try {
    sample_gradient_set(no_unfair, 1);
    FAIL("expected SamplingError");
  } catch (const SamplingError& e) {
    CHECK(std::string(e.what()).find("'unfair'") != std::string::npos);
  }
  Corpus no_fair = synthetic_corpus(0, 4);
  try {
    sample_gradient_set(no_fair, 1);
    FAIL("expected SamplingError");
  } catch (const SamplingError& e) {
    CHECK(std::string(e.what()).find("'fair'") != std::string::npos);
  }
}

TEST_CASE("score set: n=200 gives 110/90 and stays fixed for a seed") {
  Corpus corpus = synthetic_corpus(150, 12);
  ClauseBatch a = sample_score_set(corpus, 5, 200);
  CHECK(a.size() == 200);
  CHECK(a.fair_count() == 110);
  CHECK(a.unfair_count() == 90);
  ClauseBatch b = sample_score_set(corpus, 5, 200);
  CHECK(a.digest() == b.digest());

  SUBCASE("n=20 follows the gradient-set stratification") {
    ClauseBatch small = sample_score_set(corpus, 5, 20);
    CHECK(small.fair_count() == 11);
    CHECK(small.unfair_count() == 9);
  }
}

TEST_CASE("stratified counts are exact for any n divisible by 20") {
  Corpus corpus = synthetic_corpus(200, 15);
  for (std::size_t n : {20u, 40u, 100u, 200u}) {
    ClauseBatch batch = sample_score_set(corpus, 9, n);
    CHECK(batch.fair_count() == static_cast<long long>(11 * n / 20));
    CHECK(batch.unfair_count() == static_cast<long long>(9 * n / 20));
  }
}

TEST_CASE("distinct seeds resample distinct batches (Jaccard < 1)") {
  Corpus corpus = load_corpus(fixture_corpus_path(), CorpusFormat::Tsv);
  std::vector<std::set<std::string>> batches;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ClauseBatch b = sample_gradient_set(corpus, seed);
    std::set<std::string> ids;
    for (const auto& c : b.clauses) ids.insert(c.id);
    batches.push_back(std::move(ids));
  }
  for (std::size_t i = 0; i < batches.size(); ++i) {
    for (std::size_t j = i + 1; j < batches.size(); ++j) {
      std::set<std::string> inter;
      std::set_intersection(batches[i].begin(), batches[i].end(), batches[j].begin(),
                            batches[j].end(), std::inserter(inter, inter.begin()));
      std::set<std::string> uni = batches[i];
      uni.insert(batches[j].begin(), batches[j].end());
      double jaccard = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
      CHECK(jaccard < 1.0);
    }
  }
}

TEST_CASE("correctness set is balanced 50:50; unbalanced draw honors exclusions") {
  Corpus corpus = synthetic_corpus(100, 8);
  ClauseBatch balanced = sample_correctness_set(corpus, 3, 60);
  CHECK(balanced.kind == BatchKind::CorrectnessSet);
  CHECK(balanced.fair_count() == 30);
  CHECK(balanced.unfair_count() == 30);

  std::set<std::string> used;
  for (const auto& c : balanced.clauses) used.insert(c.id);
  ClauseBatch val = sample_unbalanced_set(corpus, 4, 40, {}, used);
  CHECK(val.size() == 40);
  for (const auto& c : val.clauses) CHECK(used.count(c.id) == 0);
}

TEST_CASE("the shipped fixture corpus supports the default sampler sizes") {
  Corpus corpus = load_corpus(fixture_corpus_path(), CorpusFormat::Tsv);
  CHECK(corpus.total_clauses() >= 200);
  ClauseBatch score = sample_score_set(corpus, 1, 200);
  CHECK(score.fair_count() == 110);
  ClauseBatch grad = sample_gradient_set(corpus, 1);
  CHECK(grad.unfair_count() == 9);
}
