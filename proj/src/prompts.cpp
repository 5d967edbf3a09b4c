#include "formaforge/prompts.hpp"

#include <stdexcept>

#include "formaforge/hash.hpp"

namespace formaforge::prompts {

namespace {

constexpr std::string_view kFormalization =
    "Translate the statement of this math problem into a single theorem in "
    "formal language Lean4. Do not write any proof steps for this theorem or "
    "try to solve this problem, you should focus on the translation and simply "
    "use `sorry` as a place holder of the detailed proof. For example, 1+1=2 is "
    "translated into ```lean\nexample: 1+1=2 := sorry\n```.\n"
    "\n"
    "### Natural Language Problem\n"
    "{nl_statement}";

constexpr std::string_view kConsistency =
    "Here is a natural language math problem and a translation in formal "
    "language Lean 4. You need to carefully analyse these problems and figure "
    "out wether they are equivalent or not. These problems must have exactly "
    "the same conditions and conclusions, they should be marked false if they "
    "violate any of these requirements. You should reply false if the given "
    "formal statement is empty or in a weird format.\n"
    "\n"
    "**Natural Language Problem**\n"
    "\n"
    "{nl_statement}\n"
    "\n"
    "```lean\n"
    "{fl_statement}\n"
    "```\n"
    "\n"
    "State your answer as $\\boxed{true}$ or $\\boxed{false}$ at the end of "
    "your response.";

// The first line ends with a space; keep it.
constexpr std::string_view kExtraction =
    "You are a helpful assistant that extracts complete math problems from "
    "text and formats them into a JSON list. \n"
    "\n"
    "Format requirements:\n"
    "- Each problem must include symbol definitions\n"
    "- JSON keys: \"problem\" (description) and \"type\" (\"proof\"/\"ans\")\n"
    "\n"
    "Output format:\n"
    "[\n"
    "  {\"problem\": \"...\", \"type\": \"...\"},\n"
    "  {\"problem\": \"...\", \"type\": \"...\"}\n"
    "]";

constexpr std::string_view kValidation =
    "You are a mathematical problem validator. Your task is to check whether a "
    "given mathematical problem meets the following criteria:\n"
    "\n"
    "1. The problem should not be a definition, or descriptive statement.\n"
    "2. The problem must explicitly state all necessary conditions and clearly "
    "state the conclusion to be proven or solved.\n"
    "3. All symbols mentioned in the problem must be clearly defined and "
    "explained, except for standard mathematical terms and symbols in the "
    "{category} field that are conventionally understood. If the problem "
    "relies on well-known theorems or concepts, they should be referenced "
    "explicitly, but their detailed definitions need not be repeated.\n"
    "\n"
    "If the problem meets all the criteria, return `true` for the `valid` "
    "field. Otherwise, return `false`. State your answer as $\\boxed{true}$ or "
    "$\\boxed{false}$ at the end of your response.\n"
    "\n"
    "Now, validate the following mathematical problem:\n"
    "\n"
    "{problem}\n"
    "\n"
    "Please think step by step and provide a detailed explanation before "
    "giving your final answer.";

constexpr std::string_view kPerturbation =
    "Below is a natural language math problem together with a correct "
    "formalization of it in Lean 4.\n"
    "\n"
    "**Natural Language Problem**\n"
    "\n"
    "{nl_statement}\n"
    "\n"
    "```lean\n"
    "{fl_statement}\n"
    "```\n"
    "\n"
    "Rewrite the Lean 4 statement so that it no longer matches the problem. "
    "Drop one of its hypotheses, introduce an extra assumption, or change what "
    "is being concluded. The result should still look like a well-formed Lean "
    "4 theorem with `sorry` as its proof. Reply with the modified statement "
    "inside a single ```lean code block.";

const Template kFormalizationT{"formalization", kFormalization};
const Template kConsistencyT{"consistency", kConsistency};
const Template kExtractionT{"extraction", kExtraction};
const Template kValidationT{"validation", kValidation};
const Template kPerturbationT{"perturbation", kPerturbation};

void require_non_empty(std::string_view value, const char* what) {
  if (value.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw std::invalid_argument(std::string(what) + " must be non-empty");
  }
}

}  // namespace

const Template& formalization() { return kFormalizationT; }
const Template& consistency() { return kConsistencyT; }
const Template& extraction() { return kExtractionT; }
const Template& validation() { return kValidationT; }
const Template& perturbation() { return kPerturbationT; }

const std::vector<const Template*>& all() {
  static const std::vector<const Template*> templates{
      &kFormalizationT, &kConsistencyT, &kExtractionT, &kValidationT,
      &kPerturbationT};
  return templates;
}

std::string render(std::string_view tmpl, const Substitutions& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string_view name = tmpl.substr(i + 1, close - i - 1);
        bool substituted = false;
        for (const auto& [key, value] : values) {
          if (key == name) {
            out.append(value);
            substituted = true;
            break;
          }
        }
        if (substituted) {
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::string render_formalization(std::string_view nl_statement) {
  require_non_empty(nl_statement, "nl_statement");
  return render(kFormalization, {{"nl_statement", nl_statement}});
}

std::string render_consistency(std::string_view nl_statement,
                               std::string_view fl_statement) {
  require_non_empty(nl_statement, "nl_statement");
  require_non_empty(fl_statement, "fl_statement");
  return render(kConsistency,
                {{"nl_statement", nl_statement}, {"fl_statement", fl_statement}});
}

std::string render_validation(std::string_view problem, std::string_view category) {
  require_non_empty(problem, "problem");
  require_non_empty(category, "category");
  return render(kValidation, {{"problem", problem}, {"category", category}});
}

std::string render_perturbation(std::string_view nl_statement,
                                std::string_view fl_statement) {
  require_non_empty(nl_statement, "nl_statement");
  require_non_empty(fl_statement, "fl_statement");
  return render(kPerturbation,
                {{"nl_statement", nl_statement}, {"fl_statement", fl_statement}});
}

std::string template_hash(const Template& t) { return sha256_hex(t.text); }

std::map<std::string, std::string> template_hashes(
    const std::vector<const Template*>& used) {
  std::map<std::string, std::string> out;
  for (const Template* t : used) out.emplace(std::string(t->name), template_hash(*t));
  return out;
}

}  // namespace formaforge::prompts
