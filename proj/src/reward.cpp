#include "formaforge/reward.hpp"

#include <algorithm>
#include <stdexcept>

#include "formaforge/parallel.hpp"

namespace formaforge {

namespace {

bool has_code(const Candidate& c) {
  return c.extracted_code &&
         c.extracted_code->find_first_not_of(" \t\r\n") != std::string::npos;
}

ScStatus to_sc_status(SyntaxStatus s) {
  switch (s) {
    case SyntaxStatus::pass: return ScStatus::pass;
    case SyntaxStatus::fail: return ScStatus::fail;
    case SyntaxStatus::timeout: return ScStatus::timeout;
    case SyntaxStatus::worker_error: return ScStatus::error;
  }
  return ScStatus::error;
}

Verdict no_code_verdict(const RewardConfig& cfg) {
  Verdict v;
  if (cfg.mode != RewardMode::cc_only) {
    v.sc = ScStatus::fail;
    v.sc_diagnostics.push_back({Severity::error, std::nullopt, "no code extracted"});
  }
  v.reward = 0.0;
  return v;
}

// A worker error gets one retry on a (recycled) worker before it counts.
SyntaxVerdict run_sc(SyntaxChecker& checker, const Candidate& c, const RewardConfig& cfg) {
  CheckRequest req{c.problem_id + "#" + std::to_string(c.sample_index),
                   strip_imports(*c.extracted_code), cfg.sc_timeout};
  if (req.code.find_first_not_of(" \t\r\n") == std::string::npos) {
    return {SyntaxStatus::fail, {{Severity::error, std::nullopt, "only imports in code"}}};
  }
  SyntaxVerdict v = checker.check(req);
  if (v.status == SyntaxStatus::worker_error) v = checker.check(req);
  return v;
}

void apply_cc(Verdict& v, const Candidate& c, std::string_view nl,
              const RewardConfig& cfg, ChatEndpoint& judge) {
  const StrippedCode stripped = strip_comments_and_metadata(strip_imports(*c.extracted_code));
  const CCVerdict cc = check_consistency(
      CCRequest{std::string(nl), stripped.code, cfg.cc_sampling}, judge, cfg.cc_retry);
  v.cc = cc.verdict;
  v.cc_transcript = cc.transcript;
  if (stripped.unterminated_comment) {
    v.cc_transcript = "[unterminated block comment stripped to end of input]\n" +
                      *v.cc_transcript;
  }
}

void require_backends(const RewardConfig& cfg, const RewardBackends& b) {
  if (cfg.mode != RewardMode::cc_only && b.checker == nullptr) {
    throw std::invalid_argument("reward mode needs a syntax checker");
  }
  if (cfg.mode != RewardMode::sc_only && b.judge == nullptr) {
    throw std::invalid_argument("reward mode needs a judge endpoint");
  }
}

}  // namespace

std::string_view to_string(RewardMode m) {
  switch (m) {
    case RewardMode::sc_and_cc: return "sc_and_cc";
    case RewardMode::sc_only: return "sc_only";
    case RewardMode::cc_only: return "cc_only";
  }
  return "sc_and_cc";
}

RewardMode parse_reward_mode(std::string_view s) {
  if (s == "sc_and_cc") return RewardMode::sc_and_cc;
  if (s == "sc_only") return RewardMode::sc_only;
  if (s == "cc_only") return RewardMode::cc_only;
  throw std::invalid_argument("unknown reward mode '" + std::string(s) + "'");
}

Verdict score_candidate(const Candidate& candidate, std::string_view nl,
                        const RewardConfig& cfg, const RewardBackends& backends) {
  return score_candidates({candidate}, nl, cfg, backends).front();
}

std::vector<Verdict> score_candidates(const std::vector<Candidate>& candidates,
                                      std::string_view nl, const RewardConfig& cfg,
                                      const RewardBackends& backends) {
  require_backends(cfg, backends);
  const std::size_t n = candidates.size();
  std::vector<Verdict> verdicts(n);
  std::vector<bool> needs_cc(n, false);

  for (std::size_t i = 0; i < n; ++i) {
    if (!has_code(candidates[i])) verdicts[i] = no_code_verdict(cfg);
  }

  if (cfg.mode == RewardMode::cc_only) {
    for (std::size_t i = 0; i < n; ++i) needs_cc[i] = has_code(candidates[i]);
  } else {
    parallel_for(n, cfg.sc_parallelism, [&](std::size_t i) {
      if (!has_code(candidates[i])) return;
      const SyntaxVerdict sv = run_sc(*backends.checker, candidates[i], cfg);
      verdicts[i].sc = to_sc_status(sv.status);
      verdicts[i].sc_diagnostics = sv.diagnostics;
      const bool passed = sv.status == SyntaxStatus::pass;
      if (cfg.mode == RewardMode::sc_only) {
        verdicts[i].reward = passed ? 1.0 : 0.0;
      } else {
        needs_cc[i] = passed;
      }
    });
  }

  if (cfg.mode != RewardMode::sc_only) {
    parallel_for(n, cfg.cc_parallelism, [&](std::size_t i) {
      if (!needs_cc[i]) return;
      apply_cc(verdicts[i], candidates[i], nl, cfg, *backends.judge);
      verdicts[i].reward = verdicts[i].cc == CcResult::accepted ? 1.0 : 0.0;
    });
  }
  return verdicts;
}

std::vector<double> score_group(const RolloutGroup& group, std::string_view nl,
                                const RewardConfig& cfg,
                                const RewardBackends& backends) {
  if (group.candidates.empty()) throw std::invalid_argument("score_group: empty group");
  const auto verdicts = score_candidates(group.candidates, nl, cfg, backends);
  std::vector<double> rewards;
  rewards.reserve(verdicts.size());
  for (const auto& v : verdicts) rewards.push_back(v.reward);
  return rewards;
}

}  // namespace formaforge
