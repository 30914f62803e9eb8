#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace tosopt {

/// The four meta-prompt texts driving the optimizer: a global context, the
/// classification template, the critique (gradient) template, and the
/// rewrite template. Slots use {{name}} syntax and must all resolve at
/// render time.
struct MetaPromptSet {
  std::string context;
  std::string classify_template;  // slots: prompt, clause
  std::string gradient_template;  // slots: prompt, errors
  std::string edit_template;      // slots: prompt, gradient, k

  static MetaPromptSet defaults();
  static MetaPromptSet from_files(const std::filesystem::path& context_path,
                                  const std::filesystem::path& classify_path,
                                  const std::filesystem::path& gradient_path,
                                  const std::filesystem::path& edit_path);
};

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& slots);

}  // namespace tosopt
