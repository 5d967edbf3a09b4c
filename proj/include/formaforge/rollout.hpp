#pragma once

// Rollouts: sample G candidates per problem, score them, standardize the
// rewards within the group and write the batch the trainer consumes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "formaforge/chat.hpp"
#include "formaforge/datastore.hpp"
#include "formaforge/grpo.hpp"
#include "formaforge/reward.hpp"

namespace formaforge {

enum class SeedPolicy { endpoint_default, fixed_base_seed };

struct SamplingConfig {
  int group_size = 4;
  double temperature = 0.9;
  std::optional<double> min_p;
  int max_completion_tokens = 2048;
  SeedPolicy seed_policy = SeedPolicy::endpoint_default;
  std::uint64_t base_seed = 0;
  bool request_logprobs = true;
  RetryPolicy retry;
  /// Problems processed concurrently.
  std::size_t problem_parallelism = 8;
};

std::string render_formalization_prompt(const Problem& problem);

/// `count` candidates for one problem, sample_index 0..count-1 in request
/// order. Uses a single n-sampling request when the endpoint supports it and
/// falls back to one request per missing sample. A completion that still
/// fails after retries becomes an empty candidate, so the result always has
/// exactly `count` entries.
std::vector<Candidate> sample_candidates(const Problem& problem, int count,
                                         const SamplingConfig& cfg,
                                         ChatEndpoint& endpoint);

/// sample_candidates with count = cfg.group_size; rewards and advantages
/// are left empty.
RolloutGroup sample_group(const Problem& problem, const SamplingConfig& cfg,
                          ChatEndpoint& endpoint);

struct RolloutBackends {
  ChatEndpoint* policy = nullptr;
  SyntaxChecker* checker = nullptr;
  ChatEndpoint* judge = nullptr;
};

struct RolloutOutput {
  std::vector<RolloutGroup> groups;
  /// verdicts[g][i] belongs to groups[g].candidates[i].
  std::vector<std::vector<Verdict>> verdicts;
  RunManifest manifest;
};

struct RolloutPaths {
  std::filesystem::path batch;
  /// Per-candidate verdicts, one line per group. Skipped when empty.
  std::filesystem::path verdicts;
  /// Manifest stream; one line is appended per run. Skipped when empty.
  std::filesystem::path manifest;
};

/// Returns the UTC timestamp recorded in manifests.
using Clock = std::function<std::string()>;

RolloutOutput run_rollout(const std::vector<Problem>& problems,
                          const SamplingConfig& sampling,
                          const RewardConfig& reward_cfg,
                          const grpo::GrpoConfig& grpo_cfg,
                          const RolloutBackends& backends, const RolloutPaths& paths,
                          const Clock& clock = utc_now_iso8601);

/// Recovers the natural-language statement from a rendered formalization
/// prompt. Throws DataError if the prompt was not rendered from the
/// formalization template.
std::string statement_from_prompt(std::string_view prompt);

}  // namespace formaforge
