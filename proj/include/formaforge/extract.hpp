#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "formaforge/datastore.hpp"

namespace formaforge {

/// Value of the last `\boxed{true}` or `\boxed{false}` token in `text`
/// (case-insensitive, whitespace allowed inside the braces, surrounding `$`
/// irrelevant). Anything else is `unparsed`.
CcResult extract_boxed_answer(std::string_view text);

/// Body of the first ```lean (or ```lean4) fence, case-insensitive. Falls
/// back to the first untagged fence whose body mentions theorem, example or
/// lemma. Leading blank lines and trailing whitespace are trimmed; an empty
/// body counts as no code. A fence left open at the end of the response runs
/// to the end of the text.
std::optional<std::string> extract_lean_block(std::string_view response);

/// Whitespace runs collapsed to a single space, ends trimmed.
std::string normalize_whitespace(std::string_view text);

}  // namespace formaforge
