#pragma once

// Group-relative advantages and the clipped token-mean surrogate objective.
//
// Aggregation follows the per-sequence token mean, then the mean over the
// group:  J = (1/G) sum_i (1/|o_i|) sum_t min(r_it * A_i, clip(r_it) * A_i)
// with r_it = exp(new_it - old_it). There is no KL term unless kl_beta > 0,
// and even then kl_penalty is reported separately for the caller to subtract.

#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace formaforge::grpo {

class GrpoError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GrpoConfig {
  double clip_epsilon = 0.2;
  double kl_beta = 0.0;
  /// Added to the group std before dividing. Unit tests use 0.
  double std_floor = 1e-4;
};

struct GroupLogprobs {
  std::vector<std::vector<double>> new_logprobs;
  std::vector<std::vector<double>> old_logprobs;
  std::vector<double> advantages;  // one per sequence
};

using TokenGrid = std::vector<std::vector<double>>;

/// A_i = (r_i - mean) / (std + std_floor) with population mean and std.
/// A group with zero spread and no floor gets exact zeros.
std::vector<double> group_advantages(std::span<const double> rewards,
                                     const GrpoConfig& cfg);

double clipped_surrogate(const GroupLogprobs& lp, const GrpoConfig& cfg);

/// d objective / d new_it. On the clip boundary the unclipped branch is taken.
TokenGrid surrogate_gradient(const GroupLogprobs& lp, const GrpoConfig& cfg);

/// kl_beta * mean_i mean_t k3(ref_it - new_it), k3(x) = e^x - x - 1.
/// Returns 0 when kl_beta == 0 without inspecting the inputs.
double kl_penalty(const GroupLogprobs& lp, const TokenGrid& ref_logprobs,
                  const GrpoConfig& cfg);

/// Throws GrpoError on a shape mismatch, an empty sequence or a non-finite
/// log-probability or advantage.
void validate(const GroupLogprobs& lp);

/// Cross-component fixture: one group plus the objective it must produce.
struct Fixture {
  GroupLogprobs logprobs;
  double clip_epsilon = 0.2;
  double expected_objective = 0.0;
};

Fixture load_fixture(const std::filesystem::path& path);
void save_fixture(const Fixture& f, const std::filesystem::path& path);

}  // namespace formaforge::grpo
