#include "tosopt/gradient.hpp"

#include <cctype>
#include <sstream>

namespace tosopt {

namespace {

std::string truncate(const std::string& text, std::size_t budget) {
  if (text.size() <= budget) return text;
  return text.substr(0, budget) + "...";
}

/// Returns the item text if the line opens a numbered item, else nullopt.
std::optional<std::string> numbered_item(const std::string& line) {
  std::size_t i = 0;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  std::size_t digits_begin = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == digits_begin) return std::nullopt;
  if (i >= line.size() || (line[i] != '.' && line[i] != ')')) return std::nullopt;
  ++i;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  return line.substr(i);
}

}  // namespace

std::vector<std::string> parse_numbered_list(const std::string& text) {
  std::vector<std::string> items;
  std::string current;
  bool in_item = false;

  std::istringstream stream(text);
  std::string line;
  while (std::getline(stream, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (auto item = numbered_item(line)) {
      if (in_item) items.push_back(trim(current));
      current = *item;
      in_item = true;
    } else if (in_item) {
      current += "\n" + line;
    }
  }
  if (in_item) items.push_back(trim(current));

  std::vector<std::string> out;
  for (auto& item : items) {
    if (!item.empty()) out.push_back(std::move(item));
  }
  return out;
}

GradientEngine::GradientEngine(LlmGateway& gateway, const MetaPromptSet& meta,
                               GradientEngineOptions options)
    : gateway_(gateway), meta_(meta), options_(options) {}

std::vector<ErrorExample> GradientEngine::collect_errors(const std::string& prompt,
                                                         const ClauseBatch& batch) {
  if (batch.kind != BatchKind::GradientSet) {
    throw PreconditionError("collect_errors expects a gradient-set batch, got " +
                            std::string(to_string(batch.kind)));
  }
  BatchPredictions preds = classify_batch(gateway_, meta_, prompt, batch.clauses,
                                          Phase::GradientEval, FailurePolicy::FlipAndFlag);
  std::vector<ErrorExample> errors;
  for (std::size_t i = 0; i < batch.clauses.size(); ++i) {
    if (preds.predictions[i] != batch.clauses[i].fairness) {
      errors.push_back({batch.clauses[i], batch.clauses[i].fairness, preds.predictions[i],
                        preds.parse_failed[i] != 0});
    }
  }
  return errors;
}

std::string GradientEngine::render_errors(const std::vector<ErrorExample>& errors) const {
  std::string out;
  for (const auto& e : errors) {
    out += "Clause: " + truncate(e.clause.text, options_.error_char_budget) + "\n";
    out += "Gold label: " + std::to_string(e.gold) + "\n";
    out += "Predicted: " + std::to_string(e.predicted) + "\n\n";
  }
  return out;
}

std::optional<TextualGradient> GradientEngine::generate_gradient(
    const std::string& prompt, const std::vector<ErrorExample>& errors) {
  if (errors.empty()) {
    return std::nullopt;
  }
  std::map<std::string, std::string> slots{{"prompt", prompt},
                                           {"errors", render_errors(errors)}};
  LlmRequest req = gateway_.make_request(
      Phase::GradientGen, render_template(meta_.gradient_template, slots), slots,
      meta_.context);
  std::string text = gateway_.complete(req);
  if (trim(text).empty()) {
    throw ExpansionError("gradient completion was empty");
  }
  return TextualGradient{text, content_digest(prompt)};
}

std::optional<CandidateSet> GradientEngine::expand_prompt(const std::string& prompt,
                                                          const ClauseBatch& batch, int k) {
  if (k < 1) {
    throw PreconditionError("expand_prompt: k must be >= 1");
  }
  auto errors = collect_errors(prompt, batch);
  auto gradient = generate_gradient(prompt, errors);
  if (!gradient) {
    return std::nullopt;
  }

  std::map<std::string, std::string> slots{
      {"prompt", prompt}, {"gradient", gradient->text}, {"k", std::to_string(k)}};
  LlmRequest req = gateway_.make_request(
      Phase::GradientApply, render_template(meta_.edit_template, slots), slots,
      meta_.context);
  std::string completion = gateway_.complete(req);

  std::vector<std::string> parsed = parse_numbered_list(completion);
  CandidateSet set;
  set.parent_prompt = prompt;
  set.gradient = *gradient;
  for (auto& candidate : parsed) {
    if (candidate == prompt) continue;  // dedup against the parent
    set.candidates.push_back(std::move(candidate));
    if (set.candidates.size() == static_cast<std::size_t>(k)) break;
  }
  if (set.candidates.empty()) {
    throw ExpansionError("no parseable rewrites in completion: '" +
                         truncate(completion, 120) + "'");
  }
  set.truncated = set.candidates.size() < static_cast<std::size_t>(k);
  return set;
}

}  // namespace tosopt
