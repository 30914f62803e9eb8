#include <doctest.h>

#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include "support.hpp"
#include "tosopt/gateway.hpp"

using namespace tosopt;
using namespace testsup;

namespace {

/// Independent parse oracle: first standalone 0/1 token by regex.
std::optional<int> regex_parse_oracle(const std::string& s) {
  static const std::regex token("[0-9A-Za-z]+");
  for (auto it = std::sregex_iterator(s.begin(), s.end(), token);
       it != std::sregex_iterator(); ++it) {
    const std::string tok = it->str();
    if (tok == "0") return 0;
    if (tok == "1") return 1;
  }
  return std::nullopt;
}

LlmRequest classify_request(const std::string& prompt, const std::string& clause) {
  LlmRequest req;
  req.phase = Phase::ScoreEval;
  req.rendered = prompt + "\n" + clause;
  req.slots = {{"prompt", prompt}, {"clause", clause}};
  return req;
}

}  // namespace

TEST_CASE("template rendering resolves slots and rejects unknown ones") {
  CHECK(render_template("a {{x}} b {{y}}", {{"x", "1"}, {"y", "2"}}) == "a 1 b 2");
  CHECK_THROWS_AS(render_template("a {{missing}}", {{"x", "1"}}), TemplateError);
  CHECK_THROWS_AS(render_template("a {{unterminated", {}), TemplateError);
  // Repeated slots render everywhere.
  CHECK(render_template("{{p}}/{{p}}", {{"p", "z"}}) == "z/z");
}

TEST_CASE("parse_binary_answer on hand cases") {
  CHECK(parse_binary_answer("The answer is: 0.") == 0);
  CHECK(parse_binary_answer("1") == 1);
  CHECK(parse_binary_answer("Label = 1, confident") == 1);
  CHECK(parse_binary_answer("10 is not standalone but 0 is") == 0);
  CHECK_THROWS_AS(parse_binary_answer("fair"), ClassificationParseError);
  CHECK_THROWS_AS(parse_binary_answer(""), ClassificationParseError);
  CHECK_THROWS_AS(parse_binary_answer("01 10 210"), ClassificationParseError);
}

TEST_CASE("parse_binary_answer agrees with the regex oracle on all small strings") {
  const std::string alphabet = "01a .";
  std::vector<std::string> pool{""};
  for (int len = 0; len < 4; ++len) {
    std::vector<std::string> next;
    for (const auto& s : pool) {
      for (char c : alphabet) next.push_back(s + c);
    }
    for (const auto& s : next) {
      auto expected = regex_parse_oracle(s);
      if (expected) {
        CHECK(parse_binary_answer(s) == *expected);
      } else {
        CHECK_THROWS_AS(parse_binary_answer(s), ClassificationParseError);
      }
    }
    pool = std::move(next);
  }
}

TEST_CASE("parser totality on random strings") {
  SplitMix64 rng(99);
  const std::string alphabet = "01abcXYZ .,:;\n\t-?!";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    std::size_t len = rng.bounded(40);
    for (std::size_t i = 0; i < len; ++i) {
      s.push_back(alphabet[rng.bounded(alphabet.size())]);
    }
    try {
      int v = parse_binary_answer(s);
      CHECK((v == 0 || v == 1));
    } catch (const ClassificationParseError&) {
      // typed failure is the other allowed outcome
    }
  }
}

TEST_CASE("mock echo rule returns the request text") {
  MockRules rules;
  rules.classify = MockRules::Classify::Echo;
  MockBackend backend(rules, 3);
  CHECK(backend.complete(classify_request("P", "X")) == "P\nX");
}

TEST_CASE("mock keyword rule predicts 1 iff the clause carries the keyword") {
  MockRules rules;
  rules.classify = MockRules::Classify::Keyword;
  rules.keywords = {"sole discretion"};
  MockBackend backend(rules, 3);
  CostLedger ledger;
  LlmGateway gateway(backend, ledger);
  MetaPromptSet meta = MetaPromptSet::defaults();

  Clause unfair = make_clause("u", 1, "We may act at our sole discretion.");
  Clause fair = make_clause("f", 0, "You may cancel at any time.");
  CHECK(gateway.classify_clause(meta, "prompt", unfair, Phase::ScoreEval) == 1);
  CHECK(gateway.classify_clause(meta, "prompt", fair, Phase::ScoreEval) == 0);
}

TEST_CASE("mock determinism: same rules, seed, and request give the same output") {
  MockRules rules = perfect_oracle_rules();
  rules.rewrite = MockRules::Rewrite::Variants;
  MockBackend a(rules, 11), b(rules, 11);
  LlmRequest req;
  req.phase = Phase::GradientApply;
  req.rendered = "rewrite request body";
  req.slots = {{"prompt", "base prompt"}, {"k", "4"}};
  CHECK(a.complete(req) == b.complete(req));

  MockBackend other_seed(rules, 12);
  CHECK(a.complete(req) != other_seed.complete(req));
}

TEST_CASE("unparseable completions raise a typed error after retries") {
  MockRules rules;
  rules.classify = MockRules::Classify::Unparseable;
  MockBackend backend(rules, 3);
  CostLedger ledger;
  GatewayConfig cfg;
  cfg.classify_parse_retries = 1;
  LlmGateway gateway(backend, ledger, cfg);
  MetaPromptSet meta = MetaPromptSet::defaults();
  Clause clause = make_clause("c", 0, "Some clause.");
  CHECK_THROWS_AS(gateway.classify_clause(meta, "p", clause, Phase::ScoreEval),
                  ClassificationParseError);
  // one initial call plus one retry, both booked
  CHECK(ledger.snapshot().count(Phase::ScoreEval) == 2);
}

TEST_CASE("every successful completion books exactly one ledger entry in its phase") {
  MockRules rules;
  MockBackend backend(rules, 1);
  CostLedger ledger;
  LlmGateway gateway(backend, ledger);

  SplitMix64 rng(5);
  std::array<long long, kPhaseCount> expected{};
  for (int i = 0; i < 100; ++i) {
    Phase phase = static_cast<Phase>(rng.bounded(kPhaseCount));
    LlmRequest req = gateway.make_request(phase, "req " + std::to_string(i),
                                          {{"prompt", "p"}, {"clause", "c"}, {"k", "2"},
                                           {"gradient", "g"}});
    gateway.complete(req);
    expected[static_cast<std::size_t>(phase)]++;
  }
  auto snap = ledger.snapshot();
  for (std::size_t i = 0; i < kPhaseCount; ++i) CHECK(snap.counts[i] == expected[i]);
  CHECK(snap.total() == 100);
  CHECK(snap.total() == gateway.completions());
  CHECK(snap.total() == backend.attempts());
}

TEST_CASE("phase defaults pick evaluation and generation temperatures") {
  MockRules rules;
  MockBackend backend(rules, 1);
  CostLedger ledger;
  LlmGateway gateway(backend, ledger);
  CHECK(gateway.make_request(Phase::ScoreEval, "x", {}).temperature == 0.0);
  CHECK(gateway.make_request(Phase::GradientEval, "x", {}).temperature == 0.0);
  CHECK(gateway.make_request(Phase::CorrectnessBuild, "x", {}).temperature == 0.0);
  CHECK(gateway.make_request(Phase::GradientGen, "x", {}).temperature == 1.0);
  CHECK(gateway.make_request(Phase::GradientApply, "x", {}).temperature == 1.0);

  LlmRequest req = gateway.make_request(Phase::ScoreEval, "x", {});
  req.temperature = 3.5;  // out of range
  CHECK_THROWS_AS(gateway.complete(req), PreconditionError);
}

TEST_CASE("transient transport failures are retried with backoff") {
  MockRules rules;
  rules.fail_first_attempts = 2;
  MockBackend backend(rules, 1);
  CostLedger ledger;
  GatewayConfig cfg;
  cfg.max_attempts = 3;
  cfg.backoff_base_ms = 0;
  LlmGateway gateway(backend, ledger, cfg);

  LlmRequest req = gateway.make_request(Phase::ScoreEval, "x", {{"clause", "c"}});
  CHECK(gateway.complete(req) == rules.zero_text);
  CHECK(backend.attempts() == 3);
  CHECK(ledger.snapshot().total() == 1);
}

TEST_CASE("a dead endpoint raises a gateway error naming phase and attempts") {
  RemoteConfig rc;
  rc.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  rc.model = "m";
  rc.connect_timeout_s = 1;
  RemoteBackend backend(rc);
  CostLedger ledger;
  GatewayConfig cfg;
  cfg.max_attempts = 2;
  cfg.backoff_base_ms = 1;
  LlmGateway gateway(backend, ledger, cfg);

  LlmRequest req = gateway.make_request(Phase::GradientGen, "x", {});
  try {
    gateway.complete(req);
    FAIL("expected GatewayError");
  } catch (const GatewayError& e) {
    CHECK(e.attempts == 2);
    CHECK(e.phase == "gradient-gen");
  }
  CHECK(ledger.snapshot().total() == 0);
}

TEST_CASE("remote backend speaks the chat-completion protocol") {
  httplib::Server server;
  nlohmann::json seen_body;
  std::string seen_auth;
  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                seen_body = nlohmann::json::parse(req.body);
                if (req.has_header("Authorization")) {
                  seen_auth = req.get_header_value("Authorization");
                }
                nlohmann::json reply{
                    {"choices",
                     {{{"message", {{"role", "assistant"}, {"content", "The answer is: 1."}}}}}}};
                res.set_content(reply.dump(), "application/json");
              });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("TOSOPT_TEST_TOKEN", "sekrit", 1);
  RemoteConfig rc;
  rc.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  rc.model = "test-model";
  rc.auth_env = "TOSOPT_TEST_TOKEN";
  RemoteBackend backend(rc);
  CostLedger ledger;
  LlmGateway gateway(backend, ledger);
  MetaPromptSet meta = MetaPromptSet::defaults();

  Clause clause = make_clause("c", 1, "The provider decides at its sole discretion.");
  int prediction = gateway.classify_clause(meta, "base prompt", clause, Phase::ScoreEval);
  CHECK(prediction == 1);
  CHECK(seen_body.at("model") == "test-model");
  CHECK(seen_body.at("temperature").get<double>() == 0.0);
  CHECK(seen_body.at("messages").size() == 2);  // system + user
  CHECK(seen_auth == "Bearer sekrit");
  CHECK(ledger.snapshot().count(Phase::ScoreEval) == 1);

  server.stop();
  listener.join();
}

TEST_CASE("classify_batch orders results by batch position and flags parse failures") {
  MockRules rules;
  rules.classify = MockRules::Classify::Keyword;
  rules.keywords = {"sole discretion"};
  rules.parse_fail_keyword = "garbled";
  MockBackend backend(rules, 1);
  CostLedger ledger;
  GatewayConfig cfg;
  cfg.classify_parse_retries = 0;
  LlmGateway gateway(backend, ledger, cfg);
  MetaPromptSet meta = MetaPromptSet::defaults();

  std::vector<Clause> clauses{
      make_clause("a", 1, "Acts at sole discretion."),
      make_clause("b", 0, "A garbled clause."),
      make_clause("c", 0, "Plain fair clause."),
  };
  BatchPredictions out = classify_batch(gateway, meta, "p", clauses, Phase::ScoreEval,
                                        FailurePolicy::FlipAndFlag);
  CHECK(out.predictions == std::vector<int>{1, 1, 0});  // failure flipped to 1 - gold
  CHECK(out.parse_failed == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(out.parse_failures == 1);

  BatchPredictions excl = classify_batch(gateway, meta, "p", clauses, Phase::ScoreEval,
                                         FailurePolicy::Exclude);
  CHECK(excl.unavailable == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(excl.unavailable_count == 1);
}
