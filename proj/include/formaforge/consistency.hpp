#pragma once

// Consistency check (CC): ask a judge LLM whether a formal statement means
// the same as the natural-language problem.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "formaforge/chat.hpp"
#include "formaforge/datastore.hpp"

namespace formaforge {

struct StrippedCode {
  std::string code;
  /// A block comment was still open at end of input; it was stripped to the
  /// end.
  bool unterminated_comment = false;
};

/// Removes `--` line comments, nestable `/- ... -/` block comments and
/// `@[...]` attributes that start a line. String literals are left intact.
/// A removed block comment between two non-space characters leaves one space
/// so that no new token forms. The result is trimmed; the operation is
/// idempotent.
StrippedCode strip_comments_and_metadata(std::string_view code);

struct CCSampling {
  double temperature = 0.6;
  double min_p = 0.05;
  int max_tokens = 2048;
  /// Judge samples per check. With more than one, the verdict is true only
  /// on a strict majority of true answers.
  int votes = 1;
};

struct CCRequest {
  std::string nl_statement;
  std::string fl_statement;  // already stripped
  CCSampling sampling;
};

struct CCVerdict {
  CcResult verdict = CcResult::unparsed;
  std::string transcript;
  std::string judge_identity;
};

/// Never throws on transport failures: after the retry budget the verdict is
/// unparsed and the transcript holds the error.
CCVerdict check_consistency(const CCRequest& req, ChatEndpoint& judge,
                            const RetryPolicy& retry = {});

struct StatementPair {
  std::string id;
  std::string nl;
  std::string fl;
};

class PerturbationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Asks the generator for an inequivalent variant of `ground_truth_fl`.
/// Attempts that yield no lean block, fail in transport, or only echo the
/// original (compared after comment stripping and whitespace normalization)
/// are retried; after `budget` attempts PerturbationError is thrown.
std::string perturb_statement(std::string_view nl, std::string_view ground_truth_fl,
                              ChatEndpoint& generator, int budget = 3,
                              const RetryPolicy& retry = {});

struct QualificationOptions {
  CCSampling sampling;
  RetryPolicy retry;
  int perturbation_budget = 3;
  std::size_t parallelism = 16;
};

struct QualificationReport {
  double rate = 0.0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  /// Pairs that entered the denominator.
  std::size_t evaluated = 0;
  /// Pairs dropped because no perturbation could be produced.
  std::vector<std::string> skipped_ids;
};

/// Fraction of ground-truth pairs the judge accepts.
QualificationReport qualify_recall(const std::vector<StatementPair>& pairs,
                                   ChatEndpoint& judge,
                                   const QualificationOptions& opts = {});

/// Fraction of perturbed pairs the judge rejects. Pairs that could not be
/// perturbed are skipped and excluded from the denominator.
QualificationReport qualify_specificity(const std::vector<StatementPair>& pairs,
                                        ChatEndpoint& generator, ChatEndpoint& judge,
                                        const QualificationOptions& opts = {});

}  // namespace formaforge
