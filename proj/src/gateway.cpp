#include "tosopt/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <thread>

#include <httplib.h>

#include "tosopt/rng.hpp"

namespace tosopt {

namespace {

bool is_token_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

std::string find_slot(const LlmRequest& request, const std::string& name) {
  auto it = request.slots.find(name);
  return it == request.slots.end() ? std::string() : it->second;
}

struct SemaphoreGuard {
  std::mutex& mutex;
  std::condition_variable& cv;
  int& available;

  SemaphoreGuard(std::mutex& m, std::condition_variable& c, int& a)
      : mutex(m), cv(c), available(a) {
    std::unique_lock lock(mutex);
    cv.wait(lock, [&] { return available > 0; });
    --available;
  }
  ~SemaphoreGuard() {
    {
      std::lock_guard lock(mutex);
      ++available;
    }
    cv.notify_one();
  }
};

}  // namespace

int parse_binary_answer(std::string_view completion) {
  std::size_t i = 0;
  while (i < completion.size()) {
    if (!is_token_char(completion[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < completion.size() && is_token_char(completion[j])) ++j;
    if (j - i == 1 && (completion[i] == '0' || completion[i] == '1')) {
      return completion[i] - '0';
    }
    i = j;
  }
  std::string snippet(completion.substr(0, 80));
  throw ClassificationParseError("no standalone 0/1 token in completion: '" + snippet + "'");
}

// ---------------------------------------------------------------------------
// MockBackend
// ---------------------------------------------------------------------------

MockRules MockRules::from_json(const nlohmann::json& j) {
  MockRules r;
  const std::string classify = j.value("classify", "keyword");
  if (classify == "always-zero") r.classify = Classify::AlwaysZero;
  else if (classify == "always-one") r.classify = Classify::AlwaysOne;
  else if (classify == "keyword") r.classify = Classify::Keyword;
  else if (classify == "marker-recall") r.classify = Classify::MarkerRecall;
  else if (classify == "unparseable") r.classify = Classify::Unparseable;
  else if (classify == "echo") r.classify = Classify::Echo;
  else throw ConfigError("unknown mock classify rule: " + classify);

  const std::string rewrite = j.value("rewrite", "variants");
  if (rewrite == "variants") r.rewrite = Rewrite::Variants;
  else if (rewrite == "path-code") r.rewrite = Rewrite::PathCode;
  else if (rewrite == "marker-hints") r.rewrite = Rewrite::MarkerHints;
  else if (rewrite == "fixed-list") r.rewrite = Rewrite::FixedList;
  else throw ConfigError("unknown mock rewrite rule: " + rewrite);

  r.keywords = j.value("keywords", r.keywords);
  r.markers = j.value("markers", r.markers);
  r.fixed_rewrites = j.value("fixed_rewrites", r.fixed_rewrites);
  r.gradient_text = j.value("gradient_text", r.gradient_text);
  r.parse_fail_keyword = j.value("parse_fail_keyword", r.parse_fail_keyword);
  r.fail_first_attempts = j.value("fail_first_attempts", 0);
  return r;
}

nlohmann::json MockRules::to_json() const {
  auto classify_name = [this] {
    switch (classify) {
      case Classify::AlwaysZero: return "always-zero";
      case Classify::AlwaysOne: return "always-one";
      case Classify::Keyword: return "keyword";
      case Classify::MarkerRecall: return "marker-recall";
      case Classify::Unparseable: return "unparseable";
      case Classify::Echo: return "echo";
    }
    return "keyword";
  };
  auto rewrite_name = [this] {
    switch (rewrite) {
      case Rewrite::Variants: return "variants";
      case Rewrite::PathCode: return "path-code";
      case Rewrite::MarkerHints: return "marker-hints";
      case Rewrite::FixedList: return "fixed-list";
    }
    return "variants";
  };
  return nlohmann::json{{"classify", classify_name()},
                        {"rewrite", rewrite_name()},
                        {"keywords", keywords},
                        {"markers", markers},
                        {"fixed_rewrites", fixed_rewrites},
                        {"gradient_text", gradient_text},
                        {"parse_fail_keyword", parse_fail_keyword},
                        {"fail_first_attempts", fail_first_attempts}};
}

MockBackend::MockBackend(MockRules rules, std::uint64_t seed)
    : rules_(std::move(rules)), seed_(seed), failures_left_(rules_.fail_first_attempts) {}

std::string MockBackend::id() const { return "mock-" + to_hex(seed_); }

std::string MockBackend::classify_reply(const LlmRequest& request) const {
  const std::string clause = find_slot(request, "clause");
  const std::string prompt = find_slot(request, "prompt");
  if (!rules_.parse_fail_keyword.empty() &&
      clause.find(rules_.parse_fail_keyword) != std::string::npos) {
    return rules_.unparseable_text;
  }
  switch (rules_.classify) {
    case MockRules::Classify::AlwaysZero:
      return rules_.zero_text;
    case MockRules::Classify::AlwaysOne:
      return rules_.one_text;
    case MockRules::Classify::Keyword:
      for (const auto& kw : rules_.keywords) {
        if (clause.find(kw) != std::string::npos) return rules_.one_text;
      }
      return rules_.zero_text;
    case MockRules::Classify::MarkerRecall:
      for (const auto& marker : rules_.markers) {
        if (clause.find(marker) != std::string::npos &&
            prompt.find(marker) != std::string::npos) {
          return rules_.one_text;
        }
      }
      return rules_.zero_text;
    case MockRules::Classify::Unparseable:
      return rules_.unparseable_text;
    case MockRules::Classify::Echo:
      return request.rendered;
  }
  return rules_.zero_text;
}

std::string MockBackend::rewrite_reply(const LlmRequest& request) const {
  const std::string parent = find_slot(request, "prompt");
  int k = 1;
  try {
    k = std::max(1, std::stoi(find_slot(request, "k")));
  } catch (const std::exception&) {
    k = 1;
  }

  std::vector<std::string> items;
  switch (rules_.rewrite) {
    case MockRules::Rewrite::PathCode:
      for (int i = 0; i < k; ++i) items.push_back(parent + "." + std::to_string(i));
      break;
    case MockRules::Rewrite::FixedList:
      items = rules_.fixed_rewrites;
      break;
    case MockRules::Rewrite::MarkerHints: {
      std::vector<std::string> missing;
      for (const auto& marker : rules_.markers) {
        if (parent.find(marker) == std::string::npos) missing.push_back(marker);
      }
      std::uint64_t offset =
          missing.empty() ? 0 : fnv1a64(request.rendered) % missing.size();
      for (int i = 0; i < k; ++i) {
        if (missing.empty()) {
          items.push_back(parent + " (variant " +
                          to_hex(mix_seed(seed_, fnv1a64(parent) + i)).substr(0, 6) + ")");
        } else {
          const auto& marker = missing[(offset + i) % missing.size()];
          items.push_back(parent + " Watch for clauses mentioning \"" + marker + "\".");
        }
      }
      break;
    }
    case MockRules::Rewrite::Variants:
      for (int i = 0; i < k; ++i) {
        items.push_back(parent + " (variant " +
                        to_hex(mix_seed(seed_, fnv1a64(request.rendered) + i)).substr(0, 6) +
                        ")");
      }
      break;
  }

  std::string out = "Here are the improved prompts:\n";
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += std::to_string(i + 1) + ". " + items[i] + "\n";
  }
  return out;
}

std::string MockBackend::complete(const LlmRequest& request) {
  attempts_.fetch_add(1);
  int left = failures_left_.load();
  while (left > 0 && !failures_left_.compare_exchange_weak(left, left - 1)) {
  }
  if (left > 0) {
    throw TransportError("mock backend simulated transport failure");
  }

  switch (request.phase) {
    case Phase::GradientGen:
      if (!rules_.gradient_text.empty()) return rules_.gradient_text;
      return "The prompt misreads several clauses; weakness digest " +
             to_hex(fnv1a64(request.rendered)).substr(0, 8) + ".";
    case Phase::GradientApply:
      return rewrite_reply(request);
    case Phase::GradientEval:
    case Phase::ScoreEval:
    case Phase::CorrectnessBuild:
      return classify_reply(request);
  }
  return rules_.zero_text;
}

// ---------------------------------------------------------------------------
// RemoteBackend
// ---------------------------------------------------------------------------

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  const std::string& url = config_.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint must be a full URL: " + url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    base_ = url;
    path_ = "/";
  } else {
    base_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

std::string RemoteBackend::id() const { return "remote:" + config_.model; }

std::string RemoteBackend::complete(const LlmRequest& request) {
  attempts_.fetch_add(1);

  nlohmann::json messages = nlohmann::json::array();
  if (!request.system.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system}});
  }
  messages.push_back({{"role", "user"}, {"content", request.rendered}});
  nlohmann::json body{{"model", config_.model},
                      {"messages", messages},
                      {"temperature", request.temperature},
                      {"max_tokens", request.max_tokens}};

  httplib::Client client(base_);
  client.set_connection_timeout(config_.connect_timeout_s, 0);
  client.set_read_timeout(config_.read_timeout_s, 0);
  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    if (const char* token = std::getenv(config_.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("no response from " + base_ + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw TransportError("endpoint returned status " + std::to_string(res->status));
  }
  try {
    nlohmann::json j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed completion payload: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// LlmGateway
// ---------------------------------------------------------------------------

LlmGateway::LlmGateway(LlmBackend& backend, CostLedger& ledger, GatewayConfig config)
    : backend_(backend), ledger_(ledger), config_(config),
      sem_available_(std::max(1, config.max_concurrent)) {
  if (config_.max_attempts < 1) {
    throw ConfigError("gateway max_attempts must be >= 1");
  }
}

LlmRequest LlmGateway::make_request(Phase phase, std::string rendered,
                                    std::map<std::string, std::string> slots,
                                    const std::string& system) const {
  LlmRequest req;
  req.phase = phase;
  req.rendered = std::move(rendered);
  req.slots = std::move(slots);
  req.system = system;
  req.temperature = config_.temperatures[static_cast<std::size_t>(phase)];
  return req;
}

std::string LlmGateway::complete(const LlmRequest& request) {
  if (request.temperature < 0.0 || request.temperature > 2.0) {
    throw PreconditionError("temperature must lie in [0, 2]");
  }
  int attempt = 0;
  for (;;) {
    ++attempt;
    try {
      std::string text;
      if (backend_.remote()) {
        SemaphoreGuard guard(sem_mutex_, sem_cv_, sem_available_);
        text = backend_.complete(request);
      } else {
        text = backend_.complete(request);
      }
      ledger_.record(request.phase);
      completions_.fetch_add(1);
      return text;
    } catch (const TransportError& e) {
      if (attempt >= config_.max_attempts) {
        throw GatewayError(std::string("gateway call failed after ") +
                               std::to_string(attempt) + " attempts: " + e.what(),
                           to_string(request.phase), attempt);
      }
      int delay = config_.backoff_base_ms << (attempt - 1);
      if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
  }
}

int LlmGateway::classify_clause(const MetaPromptSet& meta, const std::string& prompt,
                                const Clause& clause, Phase phase) {
  if (phase != Phase::ScoreEval && phase != Phase::GradientEval &&
      phase != Phase::CorrectnessBuild) {
    throw PreconditionError("classify_clause phase must be an evaluation phase");
  }
  std::map<std::string, std::string> slots{{"prompt", prompt}, {"clause", clause.text}};
  LlmRequest req = make_request(phase, render_template(meta.classify_template, slots),
                                slots, meta.context);

  int tries = 1 + std::max(0, config_.classify_parse_retries);
  std::string last_error;
  for (int t = 0; t < tries; ++t) {
    std::string completion = complete(req);
    try {
      return parse_binary_answer(completion);
    } catch (const ClassificationParseError& e) {
      last_error = e.what();
    }
  }
  throw ClassificationParseError("clause " + clause.id + ": " + last_error);
}

BatchPredictions classify_batch(LlmGateway& gateway, const MetaPromptSet& meta,
                                const std::string& prompt,
                                const std::vector<Clause>& clauses, Phase phase,
                                FailurePolicy policy) {
  const std::size_t n = clauses.size();
  BatchPredictions out;
  out.predictions.assign(n, 0);
  out.parse_failed.assign(n, 0);
  out.unavailable.assign(n, 0);

  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;

#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      out.predictions[idx] =
          gateway.classify_clause(meta, prompt, clauses[idx], phase);
    } catch (const ClassificationParseError&) {
      out.parse_failed[idx] = 1;
      if (policy == FailurePolicy::Exclude) {
        out.unavailable[idx] = 1;
      } else {
        out.predictions[idx] = 1 - clauses[idx].fairness;
      }
    } catch (...) {
      if (policy == FailurePolicy::Exclude) {
        out.unavailable[idx] = 1;
      } else {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  }

  if (first_error) std::rethrow_exception(first_error);
  for (std::size_t i = 0; i < n; ++i) {
    out.parse_failures += out.parse_failed[i];
    out.unavailable_count += out.unavailable[i];
  }
  return out;
}

}  // namespace tosopt
