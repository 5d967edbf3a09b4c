#pragma once

// pass@k evaluation. A problem counts toward the SC pass rate if any of its
// first k candidates passes SC. Only the first SC-passing candidate (lowest
// sample_index) is sent to CC, and the problem counts toward the final pass
// rate iff that one candidate is judged consistent. A later candidate that
// would have passed CC does not rescue the problem.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "formaforge/chat.hpp"
#include "formaforge/consistency.hpp"
#include "formaforge/datastore.hpp"
#include "formaforge/lean_check.hpp"
#include "formaforge/rollout.hpp"

namespace formaforge {

struct CandidateRecord {
  int sample_index = 0;
  std::optional<std::string> extracted_code;
  ScStatus sc = ScStatus::fail;
  /// Recorded for the candidate that was judged; may be present on others
  /// in hand-built tables, where it is ignored.
  std::optional<CcResult> cc;
};

struct ProblemVerdicts {
  std::string problem_id;
  std::vector<CandidateRecord> candidates;  // in sample_index order
};

using VerdictTable = std::vector<ProblemVerdicts>;

struct ProblemOutcome {
  std::string problem_id;
  std::optional<int> first_sc_pass_index;
  std::optional<CcResult> cc_on_first;
};

struct EvalResult {
  std::string label;
  int k = 1;
  std::size_t n_problems = 0;
  double sc_pass_rate = 0.0;
  double final_pass_rate = 0.0;
  std::vector<ProblemOutcome> per_problem;
};

struct EvalBackends {
  ChatEndpoint* policy = nullptr;
  SyntaxChecker* checker = nullptr;
  ChatEndpoint* judge = nullptr;
};

struct EvalConfig {
  std::string label = "model";
  /// Generation settings for the k samples; defaults to the CC sampling
  /// parameters (temperature 0.6, min_p 0.05, 2048 tokens).
  SamplingConfig sampling = [] {
    SamplingConfig s;
    s.temperature = 0.6;
    s.min_p = 0.05;
    s.request_logprobs = false;
    return s;
  }();
  CCSampling cc_sampling;
  RetryPolicy cc_retry;
  Seconds sc_timeout{120.0};
  std::size_t sc_parallelism = 4;
  std::size_t cc_parallelism = 16;
};

struct Evaluation {
  EvalResult result;
  VerdictTable table;
};

/// Samples k candidates per problem, checks every one with SC and judges the
/// first SC passer only.
Evaluation evaluate(const std::vector<Problem>& problems, int k,
                    const EvalConfig& cfg, const EvalBackends& backends);

/// Recomputes rates from the first k candidates of each problem without any
/// endpoint calls. Throws DataError naming a problem with fewer than k
/// candidates, or whose first SC passer has no recorded CC verdict.
EvalResult pass_at_k_from_verdicts(const VerdictTable& table, int k,
                                   const std::string& label = "model");

enum class ReportFormat { markdown_table, csv };

/// One row per result, in input order; rates as percentages with two
/// decimals. Throws std::invalid_argument on an empty list.
std::string render_report(const std::vector<EvalResult>& results, ReportFormat format);

json to_json(const ProblemVerdicts& p);
ProblemVerdicts problem_verdicts_from_json(const json& j);
void write_verdict_table(const VerdictTable& table, const std::filesystem::path& path);
VerdictTable read_verdict_table(const std::filesystem::path& path);

}  // namespace formaforge
