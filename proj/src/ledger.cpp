#include "tosopt/ledger.hpp"

#include "tosopt/common.hpp"

namespace tosopt {

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::GradientEval: return "gradient-eval";
    case Phase::GradientGen: return "gradient-gen";
    case Phase::GradientApply: return "gradient-apply";
    case Phase::ScoreEval: return "score-eval";
    case Phase::CorrectnessBuild: return "correctness-build";
  }
  return "unknown";
}

Phase phase_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    Phase p = static_cast<Phase>(i);
    if (name == to_string(p)) return p;
  }
  throw ConfigError("unknown phase name: " + name);
}

CostLedger::CostLedger() {
  for (auto& c : counts_) c.store(0);
  for (auto& c : paper_) c.store(0);
}

void CostLedger::record(Phase phase) {
  counts_[static_cast<std::size_t>(phase)].fetch_add(1, std::memory_order_relaxed);
}

void CostLedger::record_paper(Phase phase, long long n) {
  paper_[static_cast<std::size_t>(phase)].fetch_add(n, std::memory_order_relaxed);
}

CostLedger::Snapshot CostLedger::snapshot() const {
  Snapshot s;
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    s.counts[i] = counts_[i].load(std::memory_order_relaxed);
    s.paper_model[i] = paper_[i].load(std::memory_order_relaxed);
  }
  return s;
}

long long CostLedger::Snapshot::total() const {
  long long t = 0;
  for (long long c : counts) t += c;
  return t;
}

long long CostLedger::Snapshot::paper_total() const {
  long long t = 0;
  for (long long c : paper_model) t += c;
  return t;
}

nlohmann::json CostLedger::Snapshot::to_json() const {
  nlohmann::json actual = nlohmann::json::object();
  nlohmann::json paper = nlohmann::json::object();
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    const char* name = to_string(static_cast<Phase>(i));
    actual[name] = counts[i];
    paper[name] = paper_model[i];
  }
  return nlohmann::json{{"actual", actual},
                        {"actual_total", total()},
                        {"paper_model", paper},
                        {"paper_model_total", paper_total()}};
}

}  // namespace tosopt
