#pragma once

// Prompt templates. Placeholders are written {name}; render() substitutes
// only the names it is given, in a single pass, so braces elsewhere in a
// template (\boxed{true}) and braces inside substituted values are left
// alone. Substituted values are inserted verbatim, with no escaping.

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace formaforge::prompts {

struct Template {
  std::string_view name;
  std::string_view text;
};

/// RL formalization prompt; sent as a single user message.
const Template& formalization();
/// Consistency-check (judge) prompt.
const Template& consistency();
/// Problem-extraction system prompt; the chunk text is the user message.
const Template& extraction();
/// Problem-validation prompt.
const Template& validation();
/// Perturbation prompt used to build incorrect translations for the
/// specificity estimate.
const Template& perturbation();

const std::vector<const Template*>& all();

using Substitutions = std::vector<std::pair<std::string_view, std::string_view>>;

std::string render(std::string_view tmpl, const Substitutions& values);

std::string render_formalization(std::string_view nl_statement);
std::string render_consistency(std::string_view nl_statement,
                               std::string_view fl_statement);
std::string render_validation(std::string_view problem, std::string_view category);
std::string render_perturbation(std::string_view nl_statement,
                                std::string_view fl_statement);

/// SHA-256 of the raw template text.
std::string template_hash(const Template& t);
std::map<std::string, std::string> template_hashes(
    const std::vector<const Template*>& used);

}  // namespace formaforge::prompts
