#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "tosopt/common.hpp"
#include "tosopt/corpus.hpp"
#include "tosopt/ledger.hpp"
#include "tosopt/templates.hpp"

namespace tosopt {

struct LlmRequest {
  std::string system;    // global context, sent as the system message
  std::string rendered;  // user message
  double temperature = 0.0;
  Phase phase = Phase::ScoreEval;
  int max_tokens = 512;
  /// Slot values the request was rendered from. Observability metadata; the
  /// mock backend keys its rulebook off these.
  std::map<std::string, std::string> slots;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  /// Raw completion for one request. Throws TransportError on failure.
  virtual std::string complete(const LlmRequest& request) = 0;
  virtual std::string id() const = 0;
  virtual bool remote() const { return false; }

  /// Raw attempt counter, including attempts that failed.
  long long attempts() const { return attempts_.load(); }

 protected:
  std::atomic<long long> attempts_{0};
};

/// Deterministic rulebook for the mock backend. Every response is a pure
/// function of (rules, seed, request), so offline runs replay bit-for-bit.
struct MockRules {
  enum class Classify {
    AlwaysZero,
    AlwaysOne,
    Keyword,       // predict 1 iff the clause contains any keyword
    MarkerRecall,  // predict 1 iff clause and prompt share a marker phrase
    Unparseable,   // reply with no standalone 0/1 token
    Echo,          // reply with the rendered request
  };
  enum class Rewrite {
    Variants,     // parent prompt plus a deterministic variant suffix
    PathCode,     // parent prompt + ".i"; encodes the tree path in the text
    MarkerHints,  // parent prompt plus a not-yet-mentioned marker phrase
    FixedList,    // the configured texts, verbatim
  };

  Classify classify = Classify::Keyword;
  Rewrite rewrite = Rewrite::Variants;
  std::vector<std::string> keywords = {"sole discretion"};
  std::vector<std::string> markers;
  std::vector<std::string> fixed_rewrites;
  std::string gradient_text;         // empty -> derived from the request digest
  std::string parse_fail_keyword;    // clauses containing this get an unparseable reply
  std::string zero_text = "The answer is: 0.";
  std::string one_text = "The answer is: 1.";
  std::string unparseable_text = "The clause appears fair to me.";
  int fail_first_attempts = 0;       // simulate transport failures, then succeed

  static MockRules from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

class MockBackend : public LlmBackend {
 public:
  MockBackend(MockRules rules, std::uint64_t seed);
  std::string complete(const LlmRequest& request) override;
  std::string id() const override;

 private:
  std::string classify_reply(const LlmRequest& request) const;
  std::string rewrite_reply(const LlmRequest& request) const;

  MockRules rules_;
  std::uint64_t seed_;
  std::atomic<int> failures_left_;
};

struct RemoteConfig {
  std::string endpoint;  // e.g. http://host:port/v1/chat/completions
  std::string model;
  std::string auth_env;  // name of the env var holding the bearer token
  int connect_timeout_s = 10;
  int read_timeout_s = 120;
};

/// JSON chat-completion client. One POST per call; the gateway layers
/// retries and concurrency limits on top.
class RemoteBackend : public LlmBackend {
 public:
  explicit RemoteBackend(RemoteConfig config);
  std::string complete(const LlmRequest& request) override;
  std::string id() const override;
  bool remote() const override { return true; }

 private:
  RemoteConfig config_;
  std::string base_;  // scheme://host:port
  std::string path_;
};

struct GatewayConfig {
  int max_attempts = 3;          // total attempts per call
  int backoff_base_ms = 250;     // doubled after each failed attempt
  int classify_parse_retries = 1;
  int max_concurrent = 4;        // in-flight remote requests
  std::array<double, kPhaseCount> temperatures = {0.0, 1.0, 1.0, 0.0, 0.0};
};

/// Single choke point for chat-completion traffic: renders requests, applies
/// the retry policy, books every call in the cost ledger.
class LlmGateway {
 public:
  LlmGateway(LlmBackend& backend, CostLedger& ledger, GatewayConfig config = {});

  std::string complete(const LlmRequest& request);

  /// Renders the classification template for (prompt, clause) and parses the
  /// completion into a binary prediction.
  int classify_clause(const MetaPromptSet& meta, const std::string& prompt,
                      const Clause& clause, Phase phase);

  LlmRequest make_request(Phase phase, std::string rendered,
                          std::map<std::string, std::string> slots,
                          const std::string& system = {}) const;

  long long completions() const { return completions_.load(); }
  LlmBackend& backend() { return backend_; }
  const GatewayConfig& config() const { return config_; }

 private:
  LlmBackend& backend_;
  CostLedger& ledger_;
  GatewayConfig config_;
  std::atomic<long long> completions_{0};

  std::mutex sem_mutex_;
  std::condition_variable sem_cv_;
  int sem_available_;
};

/// First standalone 0/1 wins; a standalone token is a maximal run of ASCII
/// alphanumerics. Throws ClassificationParseError when no such token exists.
int parse_binary_answer(std::string_view completion);

enum class FailurePolicy {
  FlipAndFlag,  // parse failure counts as a wrong prediction, flagged
  Exclude,      // parse/transport failure marks the position unavailable
};

struct BatchPredictions {
  std::vector<int> predictions;
  std::vector<std::uint8_t> parse_failed;
  std::vector<std::uint8_t> unavailable;
  long long parse_failures = 0;
  long long unavailable_count = 0;
};

/// Classifies every clause of a batch under one prompt. Fans out across
/// clauses; results are written by index so the output order is the batch
/// order regardless of scheduling.
BatchPredictions classify_batch(LlmGateway& gateway, const MetaPromptSet& meta,
                                const std::string& prompt,
                                const std::vector<Clause>& clauses, Phase phase,
                                FailurePolicy policy);

}  // namespace tosopt
