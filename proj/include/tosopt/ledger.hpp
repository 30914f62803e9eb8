#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <string>

#include <json.hpp>

namespace tosopt {

/// One entry per kind of chat-completion traffic. Every gateway call is
/// booked under exactly one phase.
enum class Phase {
  GradientEval,      // classifying the gradient set to collect errors
  GradientGen,       // producing the textual gradient
  GradientApply,     // rewriting the prompt into candidates
  ScoreEval,         // scoring a candidate on the score set
  CorrectnessBuild,  // labeling (prompt, clause) pairs for the proxy dataset
};

inline constexpr std::size_t kPhaseCount = 5;

const char* to_string(Phase phase);
Phase phase_from_string(const std::string& name);

/// Call-cost accounting. `counts` are the calls the gateway actually made;
/// `paper_model` books expansions under the (gradient + meta + score) * k
/// cost model so the two accountings can be compared side by side.
class CostLedger {
 public:
  CostLedger();

  void record(Phase phase);
  void record_paper(Phase phase, long long n);

  struct Snapshot {
    std::array<long long, kPhaseCount> counts{};
    std::array<long long, kPhaseCount> paper_model{};

    long long total() const;
    long long paper_total() const;
    long long count(Phase phase) const { return counts[static_cast<std::size_t>(phase)]; }
    long long paper(Phase phase) const { return paper_model[static_cast<std::size_t>(phase)]; }
    nlohmann::json to_json() const;
  };

  Snapshot snapshot() const;

 private:
  std::array<std::atomic<long long>, kPhaseCount> counts_;
  std::array<std::atomic<long long>, kPhaseCount> paper_;
};

}  // namespace tosopt
