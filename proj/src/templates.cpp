#include "tosopt/templates.hpp"

#include <cctype>

#include "tosopt/common.hpp"

namespace tosopt {

namespace {

const char* kDefaultContext =
    "You are a prompt optimizer for legal documents. The task is to classify clauses of "
    "Terms of Service documents according to the given prompt.";

const char* kDefaultClassify =
    "{{prompt}}\n"
    "\n"
    "Unfair clause types to consider: binding arbitration requirements, unilateral removal "
    "of user content, one-sided choice of jurisdiction or governing law, changes or "
    "termination at the provider's sole discretion, broad limitations of liability, and "
    "terms accepted by mere use of the service.\n"
    "\n"
    "Clause:\n"
    "\"\"\"\n"
    "{{clause}}\n"
    "\"\"\"\n"
    "\n"
    "Answer with a single number and nothing else: 1 if the clause is unfair to the "
    "consumer, 0 if it is fair.";

const char* kDefaultGradient =
    "The current classification prompt is:\n"
    "\"\"\"\n"
    "{{prompt}}\n"
    "\"\"\"\n"
    "\n"
    "It produced wrong predictions on the following clauses:\n"
    "{{errors}}\n"
    "Write a short critique of the prompt: summarize its weaknesses on these clauses and "
    "suggest concrete improvements.";

const char* kDefaultEdit =
    "The current classification prompt is:\n"
    "\"\"\"\n"
    "{{prompt}}\n"
    "\"\"\"\n"
    "\n"
    "A critique of this prompt:\n"
    "\"\"\"\n"
    "{{gradient}}\n"
    "\"\"\"\n"
    "\n"
    "Rewrite the prompt so the identified weaknesses are fixed. Produce exactly {{k}} "
    "improved prompt variants as a numbered list (1. 2. 3. ...), one variant per item, "
    "and nothing else.";

}  // namespace

MetaPromptSet MetaPromptSet::defaults() {
  return {kDefaultContext, kDefaultClassify, kDefaultGradient, kDefaultEdit};
}

MetaPromptSet MetaPromptSet::from_files(const std::filesystem::path& context_path,
                                        const std::filesystem::path& classify_path,
                                        const std::filesystem::path& gradient_path,
                                        const std::filesystem::path& edit_path) {
  return {read_text_file(context_path), read_text_file(classify_path),
          read_text_file(gradient_path), read_text_file(edit_path)};
}

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    std::size_t open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    std::size_t close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw TemplateError("unterminated slot at offset " + std::to_string(open));
    }
    std::string name(tmpl.substr(open + 2, close - open - 2));
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw TemplateError("unresolved template slot: {{" + name + "}}");
    }
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

}  // namespace tosopt
