#pragma once

// Persisted record schemas and their JSONL load/validate/save operations.
//
// Every record stream is newline-delimited JSON. Readers are strict: a
// missing required field is an error naming the field and line, never a
// silent default. Writers validate the whole input before touching the
// output file, so an invalid record means nothing is written.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace formaforge {

using json = nlohmann::json;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ProblemType { proof, ans };

struct Problem {
  std::string id;
  std::string statement;
  std::string category;
  ProblemType type = ProblemType::proof;
  std::string source;

  bool operator==(const Problem&) const = default;
};

struct Candidate {
  std::string problem_id;
  int sample_index = 0;
  std::string raw_response;
  std::optional<std::string> extracted_code;
  std::optional<std::vector<double>> token_logprobs;

  bool operator==(const Candidate&) const = default;
};

enum class ScStatus { pass, fail, timeout, error };
enum class Severity { error, warning, info };
/// Serialized as the JSON strings "true", "false" and "unparsed".
enum class CcResult { accepted, rejected, unparsed };

struct SourcePosition {
  int line = 0;
  int column = 0;
  bool operator==(const SourcePosition&) const = default;
};

struct Diagnostic {
  Severity severity = Severity::error;
  std::optional<SourcePosition> position;
  std::string text;

  bool operator==(const Diagnostic&) const = default;
};

struct Verdict {
  /// Absent when the reward mode skipped the syntax check (CC_ONLY).
  std::optional<ScStatus> sc;
  std::vector<Diagnostic> sc_diagnostics;
  /// Present only if the reward mode ran CC on this candidate.
  std::optional<CcResult> cc;
  std::optional<std::string> cc_transcript;
  double reward = 0.0;

  bool operator==(const Verdict&) const = default;
};

struct RolloutGroup {
  std::string problem_id;
  std::string prompt;
  std::vector<Candidate> candidates;
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const { return candidates.size(); }
  bool operator==(const RolloutGroup&) const = default;
};

struct RunManifest {
  std::string run_id;
  std::string created_at;  // UTC ISO-8601
  json config_snapshot = json::object();
  std::map<std::string, std::string> prompt_template_hashes;
  std::map<std::string, std::string> endpoints;
  json metrics = json::object();
};

std::string_view to_string(ProblemType t);
std::string_view to_string(ScStatus s);
std::string_view to_string(Severity s);
std::string_view to_string(CcResult c);
ProblemType parse_problem_type(std::string_view s);
ScStatus parse_sc_status(std::string_view s);
Severity parse_severity(std::string_view s);
CcResult parse_cc_result(std::string_view s);

// Per-record JSON conversion. The from_json functions throw DataError naming
// the first missing or mistyped field.
json to_json(const Problem& p);
Problem problem_from_json(const json& j);
json to_json(const Diagnostic& d);
Diagnostic diagnostic_from_json(const json& j);
json to_json(const Verdict& v);
Verdict verdict_from_json(const json& j);
json to_json(const RolloutGroup& g);
RolloutGroup rollout_group_from_json(const json& j);
json to_json(const RunManifest& m);
RunManifest manifest_from_json(const json& j);

/// Content-derived problem id: identical (statement, source) pairs always map
/// to the same id.
std::string content_id(std::string_view statement, std::string_view source);

/// Throws DataError if `p` violates the Problem invariants.
void validate_problem(const Problem& p);

/// Throws DataError if `c` violates the Candidate invariants.
void validate_candidate(const Candidate& c);

/// Throws DataError if the group violates the RolloutGroup invariants.
/// `std_floor` is the GRPO floor the advantages were computed with; the
/// expected population std of the advantages is std(r) / (std(r) + floor),
/// which is exactly 1 when the floor is 0.
void validate_group(const RolloutGroup& g, double std_floor = 0.0);

std::vector<Problem> load_problem_file(const std::filesystem::path& path);
void write_problem_file(const std::vector<Problem>& problems,
                        const std::filesystem::path& path);

void write_rollout_batch(const std::vector<RolloutGroup>& groups,
                         const std::filesystem::path& path,
                         double std_floor = 0.0);
std::vector<RolloutGroup> read_rollout_batch(const std::filesystem::path& path);

/// Reads every non-empty line of a JSONL file. Malformed JSON throws
/// DataError naming the 1-based line number.
std::vector<std::pair<std::size_t, json>> read_jsonl(
    const std::filesystem::path& path);
void write_jsonl(const std::vector<json>& records,
                 const std::filesystem::path& path);

/// Appends one manifest line. Existing lines are never rewritten.
void append_manifest(const RunManifest& m, const std::filesystem::path& path);
std::vector<RunManifest> read_manifests(const std::filesystem::path& path);

std::string utc_now_iso8601();

}  // namespace formaforge
