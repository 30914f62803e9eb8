#include <doctest.h>

#include <cmath>
#include <map>

#include "support.hpp"
#include "tosopt/proxy.hpp"

using namespace tosopt;
using namespace testsup;

namespace {

/// Test-only provider mapping exact texts to fixed vectors.
class LookupProvider : public EmbeddingProvider {
 public:
  LookupProvider(std::string name, std::size_t dim,
                 std::map<std::string, std::vector<float>> table)
      : name_(std::move(name)), dim_(dim), table_(std::move(table)) {}
  std::string id() const override { return name_; }
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<float>> embed_batch(
      const std::vector<std::string>& texts) override {
    std::vector<std::vector<float>> out;
    for (const auto& t : texts) out.push_back(table_.at(t));
    return out;
  }

 private:
  std::string name_;
  std::size_t dim_;
  std::map<std::string, std::vector<float>> table_;
};

/// XOR of (prompt bit, clause bit): no linear model separates it, a small
/// MLP does. 2 prompts x 200 clauses, balanced.
struct XorFixture {
  CorrectnessDataset dataset;
  LookupProvider provider{"xor-lookup", 1, {}};

  XorFixture() {
    std::map<std::string, std::vector<float>> table{
        {"prompt-a", {0.0f}}, {"prompt-b", {1.0f}}, {"clause-u", {0.0f}}, {"clause-v", {1.0f}}};
    provider = LookupProvider("xor-lookup", 1, table);
    dataset.prompts = {"prompt-a", "prompt-b"};
    int next = 0;
    for (int p = 0; p < 2; ++p) {
      for (int j = 0; j < 200; ++j) {
        int x = j % 2;
        std::string clause_id = "x" + std::to_string(next++);
        dataset.clause_texts[clause_id] = x == 0 ? "clause-u" : "clause-v";
        CorrectnessRecord r;
        r.prompt_id = p;
        r.clause_id = clause_id;
        r.gold = 0;
        r.correct = p ^ x;
        r.predicted = r.correct ? r.gold : 1 - r.gold;
        dataset.records.push_back(r);
      }
    }
    dataset.validate();
  }
};

/// Correctness is the sign of the single clause coordinate; linearly
/// separable with a wide margin.
struct SeparableFixture {
  CorrectnessDataset dataset;
  LookupProvider provider{"sep-lookup", 1, {}};

  SeparableFixture() {
    std::map<std::string, std::vector<float>> table{{"the-prompt", {0.25f}},
                                                    {"pos-clause", {1.0f}},
                                                    {"neg-clause", {-1.0f}}};
    provider = LookupProvider("sep-lookup", 1, table);
    dataset.prompts = {"the-prompt"};
    for (int j = 0; j < 500; ++j) {
      int positive = j % 2;
      std::string clause_id = "s" + std::to_string(j);
      dataset.clause_texts[clause_id] = positive ? "pos-clause" : "neg-clause";
      CorrectnessRecord r;
      r.prompt_id = 0;
      r.clause_id = clause_id;
      r.gold = 0;
      r.correct = positive;
      r.predicted = r.correct ? r.gold : 1 - r.gold;
      dataset.records.push_back(r);
    }
    dataset.validate();
  }
};

ProxyModel random_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  ProxyModel model;
  model.variant = ProxyVariant::Multilayer;
  model.mlp.dims = dims;
  model.mlp.dropout = 0.0;
  SplitMix64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    std::vector<double> w(dims[l + 1] * dims[l]);
    std::vector<double> b(dims[l + 1]);
    for (auto& v : w) v = (2.0 * rng.next_unit() - 1.0) * 0.7;
    for (auto& v : b) v = (2.0 * rng.next_unit() - 1.0) * 0.3;
    model.mlp.weights.push_back(std::move(w));
    model.mlp.biases.push_back(std::move(b));
  }
  model.layout = FeatureLayout{1, 1, 2};  // reports only; loss path ignores it
  return model;
}

FeatureMatrix random_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  FeatureMatrix fm;
  fm.rows = rows;
  fm.cols = cols;
  fm.layout = FeatureLayout{cols - 2 - (cols - 2) / 2, (cols - 2) / 2, 2};
  SplitMix64 rng(seed);
  fm.values.resize(rows * cols);
  fm.targets.resize(rows);
  for (auto& v : fm.values) v = 2.0 * rng.next_unit() - 1.0;
  for (auto& t : fm.targets) t = rng.bounded(2) ? 1.0 : 0.0;
  return fm;
}

double directional_fd(ProxyModel& model, const FeatureMatrix& fm,
                      const std::vector<double>& params, const std::vector<double>& dir,
                      double eps) {
  std::vector<double> plus = params, minus = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    plus[i] += eps * dir[i];
    minus[i] -= eps * dir[i];
  }
  unflatten_params(model, plus);
  double lp = proxy_loss(model, fm);
  unflatten_params(model, minus);
  double lm = proxy_loss(model, fm);
  unflatten_params(model, params);
  return (lp - lm) / (2.0 * eps);
}

void check_gradients(ProxyModel model, const FeatureMatrix& fm, int points,
                     std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (int point = 0; point < points; ++point) {
    std::vector<double> params = flatten_params(model);
    for (auto& v : params) v = (2.0 * rng.next_unit() - 1.0) * 0.8;
    unflatten_params(model, params);

    std::vector<double> grad;
    proxy_loss_and_grad(model, fm, grad);
    REQUIRE(grad.size() == params.size());

    std::vector<double> dir(params.size());
    double norm = 0.0;
    for (auto& v : dir) {
      v = 2.0 * rng.next_unit() - 1.0;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;

    double analytic = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) analytic += grad[i] * dir[i];
    double numeric = directional_fd(model, fm, params, dir, 1e-6);
    double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    CHECK(std::fabs(analytic - numeric) / scale <= 1e-4);
  }
}

}  // namespace

TEST_CASE("build_correctness_dataset: perfect oracle labels everything correct") {
  MockBackend backend(perfect_oracle_rules(), 1);
  CostLedger ledger;
  LlmGateway gateway(backend, ledger);
  MetaPromptSet meta = MetaPromptSet::defaults();

  ClauseBatch clauses = manual_batch({{1, "Uses binding arbitration."},
                                      {0, "Plain fair clause."},
                                      {1, "May remove any content."}},
                                     BatchKind::CorrectnessSet);
  CorrectnessDataset ds =
      build_correctness_dataset({"p one", "p two"}, clauses, gateway, meta);
  CHECK(ds.records.size() == 6);
  for (const auto& r : ds.records) CHECK(r.correct == 1);
  CHECK(ledger.snapshot().count(Phase::CorrectnessBuild) == 6);
  CHECK(ds.provenance.requested == 6);
  CHECK(ds.provenance.excluded == 0);
  CHECK(ds.provenance.backend_id == backend.id());
}

TEST_CASE("build validates prompts, batch kind, and balance") {
  MockBackend backend(perfect_oracle_rules(), 1);
  CostLedger ledger;
  LlmGateway gateway(backend, ledger);
  MetaPromptSet meta = MetaPromptSet::defaults();

  ClauseBatch balanced = manual_batch({{1, "binding arbitration: yes"}, {0, "fair one"}},
                                      BatchKind::CorrectnessSet);
  CHECK_THROWS_AS(build_correctness_dataset({"dup", "dup"}, balanced, gateway, meta),
                  PreconditionError);

  ClauseBatch wrong_kind = manual_batch({{0, "text"}}, BatchKind::ScoreSet);
  CHECK_THROWS_AS(build_correctness_dataset({"p"}, wrong_kind, gateway, meta),
                  PreconditionError);

  ClauseBatch lopsided = manual_batch(
      {{0, "f1"}, {0, "f2"}, {0, "f3"}, {1, "binding arbitration"}}, BatchKind::CorrectnessSet);
  CHECK_THROWS_AS(build_correctness_dataset({"p"}, lopsided, gateway, meta),
                  PreconditionError);
  // The validation build passes unbalanced batches explicitly.
  CHECK_NOTHROW(build_correctness_dataset({"p"}, lopsided, gateway, meta,
                                          /*enforce_balance=*/false));
}

TEST_CASE("gateway parse failures are excluded and counted, not mislabeled") {
  MockRules rules = perfect_oracle_rules();
  rules.parse_fail_keyword = "garbled";
  MockBackend backend(rules, 1);
  CostLedger ledger;
  GatewayConfig gcfg;
  gcfg.classify_parse_retries = 0;
  LlmGateway gateway(backend, ledger, gcfg);
  MetaPromptSet meta = MetaPromptSet::defaults();

  ClauseBatch clauses = manual_batch(
      {{1, "binding arbitration applies"}, {0, "a garbled clause"}}, BatchKind::CorrectnessSet);
  CorrectnessDataset ds = build_correctness_dataset({"p"}, clauses, gateway, meta);
  CHECK(ds.records.size() == 1);
  CHECK(ds.provenance.excluded == 1);
  CHECK(ds.provenance.requested == 2);
}

TEST_CASE("dataset save/load round trip") {
  XorFixture fx;
  TempDir dir;
  auto records = dir.path / "ds.records.jsonl";
  auto sidecar = dir.path / "ds.sidecar.json";
  save_correctness_dataset(fx.dataset, records, sidecar);
  CorrectnessDataset back = load_correctness_dataset(records, sidecar);
  CHECK(back.records.size() == fx.dataset.records.size());
  CHECK(back.prompts == fx.dataset.prompts);
  CHECK(back.clause_texts == fx.dataset.clause_texts);
  CHECK(back.records[7].clause_id == fx.dataset.records[7].clause_id);
  CHECK(back.records[7].correct == fx.dataset.records[7].correct);
}

TEST_CASE("linear proxy reaches >= 0.99 validation accuracy on separable data") {
  SeparableFixture fx;
  TrainConfig cfg;
  cfg.variant = ProxyVariant::Linear;
  EmbeddingCache cache;
  ProxyModel model = train_proxy(fx.dataset, cfg, fx.provider, &cache);
  CHECK(model.report.val_accuracy >= 0.99);
  CHECK(model.report.train_loss.size() >= 2);
  CHECK(model.provider_id == "sep-lookup");
  CHECK(model.layout.total() == 4);
}

TEST_CASE("multilayer proxy cracks XOR where the linear variant stays near chance") {
  XorFixture fx;
  EmbeddingCache cache;

  TrainConfig linear_cfg;
  linear_cfg.variant = ProxyVariant::Linear;
  ProxyModel linear = train_proxy(fx.dataset, linear_cfg, fx.provider, &cache);
  CHECK(linear.report.val_accuracy <= 0.6);

  TrainConfig mlp_cfg;
  mlp_cfg.variant = ProxyVariant::Multilayer;
  mlp_cfg.hidden_dims = {32, 16};
  mlp_cfg.max_epochs = 120;
  ProxyModel mlp = train_proxy(fx.dataset, mlp_cfg, fx.provider, &cache);
  CHECK(mlp.report.val_accuracy >= 0.95);
}

TEST_CASE("no linear model exceeds 0.75 on the four XOR points (grid check)") {
  // Accuracy of sign(w1*a + w2*b + c) over the four equally weighted XOR
  // points, maximized over a dense grid and both orientations.
  double best = 0.0;
  for (double w1 = -2.0; w1 <= 2.0; w1 += 0.1) {
    for (double w2 = -2.0; w2 <= 2.0; w2 += 0.1) {
      for (double c = -2.0; c <= 2.0; c += 0.1) {
        int hits = 0;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            int want = a ^ b;
            int got = (w1 * a + w2 * b + c >= 0.0) ? 1 : 0;
            hits += (want == got);
          }
        }
        best = std::max(best, std::max(hits, 4 - hits) / 4.0);
      }
    }
  }
  CHECK(best == doctest::Approx(0.75));
}

TEST_CASE("predict_correctness basics") {
  ProxyModel model;
  model.variant = ProxyVariant::Linear;
  model.linear.weights = {0.0, 0.0, 0.0, 0.0};
  model.linear.bias = 0.0;
  model.layout = FeatureLayout{1, 1, 2};
  model.provider_id = "test";

  FeatureVector z;
  z.layout = model.layout;
  z.values = {0.3, -0.2, 1.0, 0.0};
  CHECK(predict_correctness(model, z) == doctest::Approx(0.5));

  SUBCASE("large margin saturates toward 1 but stays strictly inside (0,1)") {
    model.linear.weights = {4000.0, 0.0, 0.0, 0.0};
    double p = predict_correctness(model, z);
    CHECK(p > 0.999999);
    CHECK(p < 1.0);
    model.linear.weights = {-4000.0, 0.0, 0.0, 0.0};
    double q = predict_correctness(model, z);
    CHECK(q < 1e-6);
    CHECK(q > 0.0);
  }

  SUBCASE("layout mismatch is an integrity error") {
    FeatureVector bad;
    bad.layout = FeatureLayout{2, 1, 2};
    bad.values = {0.1, 0.2, 0.3, 1.0, 0.0};
    CHECK_THROWS_AS(predict_correctness(model, bad), IntegrityError);
  }

  SUBCASE("same input twice gives the identical output") {
    model.linear.weights = {0.7, -0.4, 0.1, 0.2};
    CHECK(predict_correctness(model, z) == predict_correctness(model, z));
  }
}

TEST_CASE("flip rule on hand-checked inputs") {
  SUBCASE("always-correct keeps every gold label") {
    ClauseBatch batch = manual_batch({{1, "a"}, {0, "b"}, {1, "c"}}, BatchKind::ScoreSet);
    MetricReport r = flip_rule_score(
        [](const std::string&, const Clause&, int) { return 1.0; }, "p", batch, 0.5);
    CHECK(r.accuracy == 1.0);
    CHECK(r.macro_f1 == 1.0);
  }
  SUBCASE("always-incorrect on an all-fair batch flips everything") {
    ClauseBatch batch = manual_batch({{0, "a"}, {0, "b"}}, BatchKind::ScoreSet);
    MetricReport r = flip_rule_score(
        [](const std::string&, const Clause&, int) { return 0.0; }, "p", batch, 0.5);
    CHECK(r.accuracy == 0.0);
    CHECK(r.per_class[0].f1 == 0.0);
    CHECK(r.macro_f1 == 0.0);
  }
  SUBCASE("threshold decides keeps vs flips") {
    ClauseBatch batch =
        manual_batch({{1, "a"}, {0, "b"}, {0, "c"}, {1, "d"}}, BatchKind::ScoreSet);
    std::vector<double> chat{0.9, 0.2, 0.8, 0.7};
    std::size_t i = 0;
    MetricReport r = flip_rule_score(
        [&](const std::string&, const Clause&, int) { return chat[i++]; }, "p", batch, 0.5);
    CHECK(r.accuracy == doctest::Approx(0.75));
  }
}

TEST_CASE("flip-rule identity: true correctness bits reproduce the backend's metrics") {
  MockRules rules;
  rules.classify = MockRules::Classify::Keyword;
  rules.keywords = {"trigger phrase"};
  MockBackend backend(rules, 1);
  CostLedger ledger;
  LlmGateway gateway(backend, ledger);
  MetaPromptSet meta = MetaPromptSet::defaults();

  SplitMix64 rng(314);
  for (int pair = 0; pair < 100; ++pair) {
    std::string prompt = "prompt variant " + std::to_string(pair);
    std::size_t n = 5 + rng.bounded(30);
    ClauseBatch batch;
    batch.kind = BatchKind::ScoreSet;
    for (std::size_t j = 0; j < n; ++j) {
      bool has_kw = rng.bounded(2) == 1;
      int gold = static_cast<int>(rng.bounded(2));
      std::string text = "clause " + std::to_string(pair) + "-" + std::to_string(j) +
                         (has_kw ? " with trigger phrase inside" : " plain");
      batch.clauses.push_back(make_clause("c" + std::to_string(j), gold, text));
    }

    BatchPredictions preds = classify_batch(gateway, meta, prompt, batch.clauses,
                                            Phase::ScoreEval, FailurePolicy::FlipAndFlag);
    std::vector<int> golds;
    for (const auto& c : batch.clauses) golds.push_back(c.fairness);
    MetricReport direct = compute_metrics(preds.predictions, golds);

    std::size_t cursor = 0;
    MetricReport via_flip = flip_rule_score(
        [&](const std::string&, const Clause& clause, int gold) {
          double c = preds.predictions[cursor] == gold ? 1.0 : 0.0;
          ++cursor;
          (void)clause;
          return c;
        },
        prompt, batch, 0.5);

    CHECK(via_flip.accuracy == direct.accuracy);
    CHECK(via_flip.macro_f1 == direct.macro_f1);
    for (int g = 0; g < 2; ++g) {
      for (int p = 0; p < 2; ++p) CHECK(via_flip.confusion[g][p] == direct.confusion[g][p]);
    }
  }
}

TEST_CASE("proxy_score performs zero gateway calls and checks provenance") {
  SeparableFixture fx;
  TrainConfig cfg;
  cfg.variant = ProxyVariant::Linear;
  EmbeddingCache cache;
  ProxyModel model = train_proxy(fx.dataset, cfg, fx.provider, &cache);

  ClauseBatch batch;
  batch.kind = BatchKind::ScoreSet;
  batch.clauses.push_back(make_clause("q1", 0, "pos-clause"));
  batch.clauses.push_back(make_clause("q2", 1, "neg-clause"));
  MetricReport r = proxy_score(model, "the-prompt", batch, fx.provider, &cache, 0.5);
  CHECK(r.n == 2);

  LookupProvider other("other-provider", 1, {{"x", {0.0f}}});
  CHECK_THROWS_AS(proxy_score(model, "the-prompt", batch, other, &cache, 0.5),
                  IntegrityError);
}

TEST_CASE("gradient check: linear variant (objective includes its L2 term)") {
  FeatureMatrix fm = random_features(25, 7, 0x51);
  ProxyModel model;
  model.variant = ProxyVariant::Linear;
  model.linear.weights.assign(7, 0.0);
  model.linear.inverse_reg_c = 1.0;
  check_gradients(model, fm, 100, 0xabc);
}

TEST_CASE("gradient check: multilayer variant") {
  FeatureMatrix fm = random_features(16, 6, 0x52);
  ProxyModel model = random_mlp({6, 12, 8, 1}, 0x53);
  check_gradients(model, fm, 100, 0xdef);
}

TEST_CASE("full-batch gradient descent with a small fixed step never increases the loss") {
  SeparableFixture fx;
  TrainConfig cfg;
  cfg.variant = ProxyVariant::Linear;
  cfg.linear_fixed_step = 0.005;
  cfg.linear_max_iterations = 300;
  EmbeddingCache cache;
  ProxyModel model = train_proxy(fx.dataset, cfg, fx.provider, &cache);
  const auto& curve = model.report.train_loss;
  REQUIRE(curve.size() >= 2);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i] <= curve[i - 1] + 1e-12);
  }
}

TEST_CASE("model serialization round trip preserves predictions bitwise") {
  XorFixture fx;
  TrainConfig cfg;
  cfg.variant = ProxyVariant::Multilayer;
  cfg.hidden_dims = {16, 8};
  cfg.max_epochs = 30;
  EmbeddingCache cache;
  ProxyModel model = train_proxy(fx.dataset, cfg, fx.provider, &cache);

  TempDir dir;
  auto path = dir.path / "model.bin";
  save_proxy_model(model, path);
  ProxyModel back = load_proxy_model(path);
  CHECK(back.provider_id == model.provider_id);
  CHECK(back.layout == model.layout);

  FeatureMatrix fm = assemble_features(fx.dataset, fx.provider, &cache);
  auto p1 = predict_correctness_batch(model, fm);
  auto p2 = predict_correctness_batch(back, fm);
  CHECK(p1 == p2);

  SUBCASE("linear model round trips too") {
    TrainConfig lin;
    lin.variant = ProxyVariant::Linear;
    ProxyModel lm = train_proxy(fx.dataset, lin, fx.provider, &cache);
    auto lp = dir.path / "linear.bin";
    save_proxy_model(lm, lp);
    ProxyModel lb = load_proxy_model(lp);
    auto q1 = predict_correctness_batch(lm, fm);
    auto q2 = predict_correctness_batch(lb, fm);
    CHECK(q1 == q2);
  }

  SUBCASE("garbage files are refused") {
    auto bogus = dir.path / "bogus.bin";
    write_text_file(bogus, "not a model file at all");
    CHECK_THROWS_AS(load_proxy_model(bogus), IntegrityError);
  }
}

TEST_CASE("probabilities stay strictly inside (0,1) across random models and inputs") {
  SplitMix64 rng(0x77);
  FeatureMatrix fm = random_features(40, 6, 0x78);
  ProxyModel model = random_mlp({6, 10, 1}, 0x79);
  model.layout = fm.layout;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> params = flatten_params(model);
    for (auto& v : params) v = (2.0 * rng.next_unit() - 1.0) * 50.0;
    unflatten_params(model, params);
    for (double p : predict_correctness_batch(model, fm)) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("validation dataset, when supplied, drives the reported accuracy") {
  SeparableFixture fx;
  // Validation set from the same rule but distinct clause ids.
  CorrectnessDataset val;
  val.prompts = fx.dataset.prompts;
  for (int j = 0; j < 100; ++j) {
    CorrectnessRecord r;
    r.prompt_id = 0;
    std::string id = "v" + std::to_string(j);
    val.clause_texts[id] = j % 2 ? "pos-clause" : "neg-clause";
    r.clause_id = id;
    r.gold = 0;
    r.correct = j % 2;
    r.predicted = r.correct ? 0 : 1;
    val.records.push_back(r);
  }
  val.validate();

  TrainConfig cfg;
  cfg.variant = ProxyVariant::Linear;
  EmbeddingCache cache;
  ProxyModel model = train_proxy(fx.dataset, cfg, fx.provider, &cache, &val);
  CHECK(model.report.val_records == 100);
  CHECK(model.report.val_accuracy >= 0.99);
}
