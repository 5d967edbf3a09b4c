#include "formaforge/extract.hpp"

#include <cctype>
#include <regex>

namespace formaforge {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string trim_block(std::string_view body) {
  // Drop whole leading blank lines, keep the first line's indentation.
  for (;;) {
    const std::size_t nl = body.find('\n');
    if (nl == std::string_view::npos) break;
    if (!trim(body.substr(0, nl)).empty()) break;
    body.remove_prefix(nl + 1);
  }
  while (!body.empty() && is_space(body.back())) body.remove_suffix(1);
  if (trim(body).empty()) return {};
  return std::string(body);
}

struct Fence {
  std::string tag;
  std::string_view body;
};

std::vector<Fence> scan_fences(std::string_view text) {
  std::vector<Fence> fences;
  std::size_t pos = 0;
  while ((pos = text.find("```", pos)) != std::string_view::npos) {
    const std::size_t info_start = pos + 3;
    const std::size_t eol = text.find('\n', info_start);
    if (eol == std::string_view::npos) break;
    Fence f;
    f.tag = lower(trim(text.substr(info_start, eol - info_start)));
    const std::size_t body_start = eol + 1;
    const std::size_t close = text.find("```", body_start);
    if (close == std::string_view::npos) {
      f.body = text.substr(body_start);
      fences.push_back(std::move(f));
      break;
    }
    f.body = text.substr(body_start, close - body_start);
    fences.push_back(std::move(f));
    pos = close + 3;
  }
  return fences;
}

}  // namespace

CcResult extract_boxed_answer(std::string_view text) {
  static const std::regex boxed(R"(\\boxed\s*\{\s*(true|false)\s*\})",
                                std::regex::icase);
  CcResult result = CcResult::unparsed;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), boxed);
       it != std::sregex_iterator(); ++it) {
    result = lower((*it)[1].str()) == "true" ? CcResult::accepted
                                             : CcResult::rejected;
  }
  return result;
}

std::optional<std::string> extract_lean_block(std::string_view response) {
  static const std::regex decl(R"(\b(theorem|example|lemma)\b)");
  const auto fences = scan_fences(response);
  for (const auto& f : fences) {
    if (f.tag == "lean" || f.tag == "lean4") {
      std::string body = trim_block(f.body);
      if (body.empty()) return std::nullopt;
      return body;
    }
  }
  for (const auto& f : fences) {
    if (!f.tag.empty()) continue;
    const std::string body(f.body);
    if (std::regex_search(body, decl)) {
      std::string trimmed = trim_block(body);
      if (!trimmed.empty()) return trimmed;
    }
  }
  return std::nullopt;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace formaforge
