#pragma once

// Scalar reward for one candidate: syntax check, then consistency check,
// reward 1.0 only when both accept (SC_AND_CC). SC_ONLY and CC_ONLY drop one
// stage for ablations.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "formaforge/chat.hpp"
#include "formaforge/consistency.hpp"
#include "formaforge/datastore.hpp"
#include "formaforge/lean_check.hpp"

namespace formaforge {

enum class RewardMode { sc_and_cc, sc_only, cc_only };

std::string_view to_string(RewardMode m);
/// Accepts "sc_and_cc", "sc_only", "cc_only".
RewardMode parse_reward_mode(std::string_view s);

struct RewardConfig {
  RewardMode mode = RewardMode::sc_and_cc;
  Seconds sc_timeout{120.0};
  CCSampling cc_sampling;
  RetryPolicy cc_retry;
  std::size_t sc_parallelism = 4;
  std::size_t cc_parallelism = 16;
};

/// Checkers a reward computation may call. `judge` may be null under
/// SC_ONLY and `checker` may be null under CC_ONLY.
struct RewardBackends {
  SyntaxChecker* checker = nullptr;
  ChatEndpoint* judge = nullptr;
};

Verdict score_candidate(const Candidate& candidate, std::string_view nl_statement,
                        const RewardConfig& cfg, const RewardBackends& backends);

/// Verdicts in candidate order. SC requests run concurrently, then CC
/// requests for the SC passers run concurrently.
std::vector<Verdict> score_candidates(const std::vector<Candidate>& candidates,
                                      std::string_view nl_statement,
                                      const RewardConfig& cfg,
                                      const RewardBackends& backends);

/// rewards[i] = score_candidate(group.candidates[i]).reward.
std::vector<double> score_group(const RolloutGroup& group,
                                std::string_view nl_statement,
                                const RewardConfig& cfg,
                                const RewardBackends& backends);

}  // namespace formaforge
