#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tosopt/corpus.hpp"
#include "tosopt/gateway.hpp"

namespace tosopt {

struct ErrorExample {
  Clause clause;
  int gold = 0;
  int predicted = 0;
  bool parse_failure = false;  // prediction synthesized as 1 - gold
};

/// Natural-language critique of a prompt, derived from its error examples.
struct TextualGradient {
  std::string text;
  std::string source_prompt_digest;
};

struct CandidateSet {
  std::string parent_prompt;
  std::vector<std::string> candidates;
  TextualGradient gradient;
  bool truncated = false;  // fewer parseable rewrites than requested
};

struct GradientEngineOptions {
  std::size_t error_char_budget = 400;  // per-clause truncation inside the critique request
};

/// The prompt-update loop: evaluate on a gradient set, summarize the
/// failures as a textual gradient, apply it to produce k candidate prompts.
/// Success path costs |batch| + 2 gateway calls.
class GradientEngine {
 public:
  GradientEngine(LlmGateway& gateway, const MetaPromptSet& meta,
                 GradientEngineOptions options = {});

  std::vector<ErrorExample> collect_errors(const std::string& prompt,
                                           const ClauseBatch& batch);

  /// Empty optional signals "no gradient": the prompt made no errors and the
  /// caller should treat it as locally optimal.
  std::optional<TextualGradient> generate_gradient(const std::string& prompt,
                                                   const std::vector<ErrorExample>& errors);

  std::optional<CandidateSet> expand_prompt(const std::string& prompt,
                                            const ClauseBatch& batch, int k);

  LlmGateway& gateway() { return gateway_; }
  const MetaPromptSet& meta() const { return meta_; }

 private:
  std::string render_errors(const std::vector<ErrorExample>& errors) const;

  LlmGateway& gateway_;
  const MetaPromptSet& meta_;
  GradientEngineOptions options_;
};

/// Splits a completion into the items of a numbered list ("1. ...", "2) ..."),
/// tolerating prose around the list and multi-line items.
std::vector<std::string> parse_numbered_list(const std::string& text);

}  // namespace tosopt
