#include "formaforge/consistency.hpp"

#include <spdlog/spdlog.h>

#include <cctype>
#include <mutex>

#include "formaforge/extract.hpp"
#include "formaforge/parallel.hpp"
#include "formaforge/prompts.hpp"

namespace formaforge {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_ident(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || c == '\'' || c == '.' || u >= 0x80;
}

bool at_line_start(const std::string& out) {
  for (auto it = out.rbegin(); it != out.rend(); ++it) {
    if (*it == '\n') return true;
    if (*it != ' ' && *it != '\t') return false;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Length of a char literal starting at `i` ('a' or '\n' style), or 0.
std::size_t char_literal_length(std::string_view s, std::size_t i) {
  if (i + 2 < s.size() && s[i + 1] != '\\' && s[i + 2] == '\'') return 3;
  if (i + 3 < s.size() && s[i + 1] == '\\') {
    const std::size_t close = s.find('\'', i + 2);
    if (close != std::string_view::npos && close - i <= 10) return close - i + 1;
  }
  return 0;
}

std::string cc_key(std::string_view nl, std::string_view fl) {
  return join_key({nl, fl});
}

// One past the closing quote of the string at `i`, or n if unterminated.
std::size_t skip_string(std::string_view in, std::size_t i) {
  std::size_t j = i + 1;
  while (j < in.size()) {
    if (in[j] == '\\' && j + 1 < in.size()) {
      j += 2;
      continue;
    }
    if (in[j++] == '"') break;
  }
  return j;
}

// Second pass, on comment-free text: drop line-leading @[...] attributes.
std::string strip_attributes(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  const std::size_t n = in.size();
  std::size_t i = 0;
  while (i < n) {
    const char c = in[i];
    if (c == '"') {
      const std::size_t j = skip_string(in, i);
      out.append(in.substr(i, j - i));
      i = j;
      continue;
    }
    if (c == '\'' && (out.empty() || !is_ident(out.back()))) {
      if (const std::size_t len = char_literal_length(in, i); len != 0) {
        out.append(in.substr(i, len));
        i += len;
        continue;
      }
    }
    if (c == '@' && i + 1 < n && in[i + 1] == '[' && at_line_start(out)) {
      int depth = 0;
      std::size_t j = i + 1;
      for (; j < n; ++j) {
        if (in[j] == '"') {
          j = skip_string(in, j) - 1;
          continue;
        }
        if (in[j] == '[') ++depth;
        if (in[j] == ']' && --depth == 0) break;
      }
      if (j < n) {
        i = j + 1;
        while (i < n && is_space(in[i])) ++i;
        continue;
      }
    }
    out.push_back(c);
    ++i;
  }
  return std::string(trim(out));
}

}  // namespace

StrippedCode strip_comments_and_metadata(std::string_view in) {
  StrippedCode result;
  std::string& out = result.code;
  out.reserve(in.size());
  const std::size_t n = in.size();
  std::size_t i = 0;
  while (i < n) {
    const char c = in[i];
    const char next = i + 1 < n ? in[i + 1] : '\0';

    if (c == '/' && next == '-') {
      std::size_t j = i + 2;
      int depth = 1;
      while (j < n && depth > 0) {
        if (in[j] == '/' && j + 1 < n && in[j + 1] == '-') {
          ++depth;
          j += 2;
        } else if (in[j] == '-' && j + 1 < n && in[j + 1] == '/') {
          --depth;
          j += 2;
        } else {
          ++j;
        }
      }
      if (depth > 0) result.unterminated_comment = true;
      if (!out.empty() && !is_space(out.back()) && j < n && !is_space(in[j])) {
        out.push_back(' ');
      }
      i = j;
      continue;
    }

    if (c == '-' && next == '-') {
      while (i < n && in[i] != '\n') ++i;
      continue;
    }

    if (c == '"') {
      out.push_back(c);
      std::size_t j = i + 1;
      while (j < n) {
        out.push_back(in[j]);
        if (in[j] == '\\' && j + 1 < n) {
          out.push_back(in[j + 1]);
          j += 2;
          continue;
        }
        if (in[j++] == '"') break;
      }
      i = j;
      continue;
    }

    if (c == '\'' && (out.empty() || !is_ident(out.back()))) {
      if (const std::size_t len = char_literal_length(in, i); len != 0) {
        out.append(in.substr(i, len));
        i += len;
        continue;
      }
    }

    out.push_back(c);
    ++i;
  }
  out = strip_attributes(out);
  return result;
}

CCVerdict check_consistency(const CCRequest& req, ChatEndpoint& judge,
                            const RetryPolicy& retry) {
  if (trim(req.nl_statement).empty()) {
    throw std::invalid_argument("check_consistency: empty natural-language statement");
  }
  CCVerdict v;
  v.judge_identity = judge.identity();
  if (trim(req.fl_statement).empty()) {
    v.verdict = CcResult::rejected;
    v.transcript = "empty formal statement; judge not called";
    return v;
  }

  ChatRequest chat;
  chat.template_name = std::string(prompts::consistency().name);
  chat.fingerprint_key = cc_key(req.nl_statement, req.fl_statement);
  chat.messages.push_back(
      {"user", prompts::render_consistency(req.nl_statement, req.fl_statement)});
  chat.temperature = req.sampling.temperature;
  chat.min_p = req.sampling.min_p;
  chat.max_tokens = req.sampling.max_tokens;

  const int votes = req.sampling.votes < 1 ? 1 : req.sampling.votes;
  std::vector<std::string> answers;
  try {
    if (votes == 1 || judge.supports_n()) {
      chat.n = votes;
      const ChatResponse r = with_retries(retry, [&] { return judge.complete(chat); });
      for (const auto& c : r.choices) answers.push_back(c.text);
    } else {
      for (int k = 0; k < votes; ++k) {
        const ChatResponse r = with_retries(retry, [&] { return judge.complete(chat); });
        if (!r.choices.empty()) answers.push_back(r.choices.front().text);
      }
    }
  } catch (const TransportError& e) {
    spdlog::warn("consistency check: judge {} failed: {}", v.judge_identity, e.what());
    v.verdict = CcResult::unparsed;
    v.transcript = std::string("transport failure: ") + e.what();
    return v;
  }

  int yes = 0;
  int parsed = 0;
  for (std::size_t k = 0; k < answers.size(); ++k) {
    const CcResult r = extract_boxed_answer(answers[k]);
    yes += r == CcResult::accepted ? 1 : 0;
    parsed += r != CcResult::unparsed ? 1 : 0;
    if (k != 0) v.transcript += "\n\n=====\n\n";
    v.transcript += answers[k];
  }
  if (2 * yes > votes) {
    v.verdict = CcResult::accepted;
  } else if (parsed > 0) {
    v.verdict = CcResult::rejected;
  } else {
    v.verdict = CcResult::unparsed;
  }
  return v;
}

std::string perturb_statement(std::string_view nl, std::string_view ground_truth_fl,
                              ChatEndpoint& generator, int budget,
                              const RetryPolicy& retry) {
  ChatRequest chat;
  chat.template_name = std::string(prompts::perturbation().name);
  chat.fingerprint_key = cc_key(nl, ground_truth_fl);
  chat.messages.push_back({"user", prompts::render_perturbation(nl, ground_truth_fl)});
  chat.temperature = 0.6;
  chat.max_tokens = 2048;

  const std::string original =
      normalize_whitespace(strip_comments_and_metadata(ground_truth_fl).code);
  std::string last_problem = "no attempts made";
  for (int attempt = 0; attempt < budget; ++attempt) {
    ChatResponse r;
    try {
      r = with_retries(retry, [&] { return generator.complete(chat); });
    } catch (const TransportError& e) {
      last_problem = std::string("transport failure: ") + e.what();
      continue;
    }
    if (r.choices.empty()) {
      last_problem = "generator returned no choices";
      continue;
    }
    auto code = extract_lean_block(r.choices.front().text);
    if (!code) {
      last_problem = "no lean block in generator reply";
      continue;
    }
    if (normalize_whitespace(strip_comments_and_metadata(*code).code) == original) {
      last_problem = "generator echoed the original statement";
      continue;
    }
    return *code;
  }
  throw PerturbationError("perturbation budget exhausted: " + last_problem);
}

QualificationReport qualify_recall(const std::vector<StatementPair>& pairs,
                                   ChatEndpoint& judge,
                                   const QualificationOptions& opts) {
  if (pairs.empty()) throw std::invalid_argument("qualify_recall: no pairs");
  std::vector<CcResult> verdicts(pairs.size(), CcResult::unparsed);
  parallel_for(pairs.size(), opts.parallelism, [&](std::size_t i) {
    CCRequest req{pairs[i].nl, strip_comments_and_metadata(pairs[i].fl).code,
                  opts.sampling};
    verdicts[i] = check_consistency(req, judge, opts.retry).verdict;
    if (verdicts[i] == CcResult::unparsed) {
      spdlog::warn("qualify_recall: pair '{}' got no parseable verdict", pairs[i].id);
    }
  });
  QualificationReport rep;
  rep.evaluated = pairs.size();
  for (CcResult v : verdicts) {
    if (v == CcResult::accepted) {
      ++rep.accepted;
    } else {
      ++rep.rejected;
    }
  }
  rep.rate = static_cast<double>(rep.accepted) / static_cast<double>(rep.evaluated);
  return rep;
}

QualificationReport qualify_specificity(const std::vector<StatementPair>& pairs,
                                        ChatEndpoint& generator, ChatEndpoint& judge,
                                        const QualificationOptions& opts) {
  if (pairs.empty()) throw std::invalid_argument("qualify_specificity: no pairs");
  enum class Outcome { skipped, accepted, rejected };
  std::vector<Outcome> outcomes(pairs.size(), Outcome::skipped);
  parallel_for(pairs.size(), opts.parallelism, [&](std::size_t i) {
    std::string perturbed;
    try {
      perturbed = perturb_statement(pairs[i].nl, pairs[i].fl, generator,
                                    opts.perturbation_budget, opts.retry);
    } catch (const PerturbationError& e) {
      spdlog::warn("qualify_specificity: skipping pair '{}': {}", pairs[i].id, e.what());
      return;
    }
    CCRequest req{pairs[i].nl, strip_comments_and_metadata(perturbed).code, opts.sampling};
    outcomes[i] = check_consistency(req, judge, opts.retry).verdict == CcResult::accepted
                      ? Outcome::accepted
                      : Outcome::rejected;
  });
  QualificationReport rep;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    switch (outcomes[i]) {
      case Outcome::skipped: rep.skipped_ids.push_back(pairs[i].id); break;
      case Outcome::accepted: ++rep.accepted; break;
      case Outcome::rejected: ++rep.rejected; break;
    }
  }
  rep.evaluated = rep.accepted + rep.rejected;
  if (rep.evaluated == 0) {
    throw std::runtime_error("qualify_specificity: every pair was skipped");
  }
  rep.rate = static_cast<double>(rep.rejected) / static_cast<double>(rep.evaluated);
  return rep;
}

}  // namespace formaforge
