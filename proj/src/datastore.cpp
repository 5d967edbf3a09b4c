#include "formaforge/datastore.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "formaforge/hash.hpp"

namespace formaforge {

namespace {

const json& require(const json& j, const char* field) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  auto it = j.find(field);
  if (it == j.end()) {
    throw DataError(std::string("missing required field '") + field + "'");
  }
  return *it;
}

std::string require_string(const json& j, const char* field) {
  const json& v = require(j, field);
  if (!v.is_string()) {
    throw DataError(std::string("field '") + field + "' must be a string");
  }
  return v.get<std::string>();
}

double require_number(const json& v, const char* field) {
  if (!v.is_number()) {
    throw DataError(std::string("field '") + field + "' must be a number");
  }
  return v.get<double>();
}

std::vector<double> require_number_array(const json& j, const char* field) {
  const json& v = require(j, field);
  if (!v.is_array()) {
    throw DataError(std::string("field '") + field + "' must be an array");
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(require_number(x, field));
  return out;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  });
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

std::string_view to_string(ProblemType t) {
  return t == ProblemType::proof ? "proof" : "ans";
}

std::string_view to_string(ScStatus s) {
  switch (s) {
    case ScStatus::pass: return "pass";
    case ScStatus::fail: return "fail";
    case ScStatus::timeout: return "timeout";
    case ScStatus::error: return "error";
  }
  return "error";
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::error: return "error";
    case Severity::warning: return "warning";
    case Severity::info: return "info";
  }
  return "error";
}

std::string_view to_string(CcResult c) {
  switch (c) {
    case CcResult::accepted: return "true";
    case CcResult::rejected: return "false";
    case CcResult::unparsed: return "unparsed";
  }
  return "unparsed";
}

ProblemType parse_problem_type(std::string_view s) {
  if (s == "proof") return ProblemType::proof;
  if (s == "ans") return ProblemType::ans;
  throw DataError("invalid problem type '" + std::string(s) + "'");
}

ScStatus parse_sc_status(std::string_view s) {
  if (s == "pass") return ScStatus::pass;
  if (s == "fail") return ScStatus::fail;
  if (s == "timeout") return ScStatus::timeout;
  if (s == "error") return ScStatus::error;
  throw DataError("invalid sc status '" + std::string(s) + "'");
}

Severity parse_severity(std::string_view s) {
  if (s == "error") return Severity::error;
  if (s == "warning") return Severity::warning;
  if (s == "info" || s == "information") return Severity::info;
  throw DataError("invalid severity '" + std::string(s) + "'");
}

CcResult parse_cc_result(std::string_view s) {
  if (s == "true") return CcResult::accepted;
  if (s == "false") return CcResult::rejected;
  if (s == "unparsed") return CcResult::unparsed;
  throw DataError("invalid cc verdict '" + std::string(s) + "'");
}

json to_json(const Problem& p) {
  return json{{"id", p.id},
              {"problem", p.statement},
              {"type", to_string(p.type)},
              {"category", p.category},
              {"source", p.source}};
}

Problem problem_from_json(const json& j) {
  Problem p;
  p.id = require_string(j, "id");
  p.statement = require_string(j, "problem");
  p.type = parse_problem_type(require_string(j, "type"));
  p.category = require_string(j, "category");
  p.source = require_string(j, "source");
  validate_problem(p);
  return p;
}

json to_json(const Diagnostic& d) {
  json j{{"severity", to_string(d.severity)}, {"text", d.text}};
  if (d.position) {
    j["position"] = {{"line", d.position->line}, {"column", d.position->column}};
  }
  return j;
}

Diagnostic diagnostic_from_json(const json& j) {
  Diagnostic d;
  d.severity = parse_severity(require_string(j, "severity"));
  d.text = require_string(j, "text");
  if (auto it = j.find("position"); it != j.end() && !it->is_null()) {
    d.position = SourcePosition{require(*it, "line").get<int>(),
                                require(*it, "column").get<int>()};
  }
  return d;
}

json to_json(const Verdict& v) {
  json diags = json::array();
  for (const auto& d : v.sc_diagnostics) diags.push_back(to_json(d));
  json out{{"sc", v.sc ? json(to_string(*v.sc)) : json(nullptr)},
           {"sc_diagnostics", std::move(diags)}};
  // cc keys only when the judge ran
  if (v.cc) out["cc"] = to_string(*v.cc);
  if (v.cc_transcript) out["cc_transcript"] = *v.cc_transcript;
  out["reward"] = v.reward;
  return out;
}

Verdict verdict_from_json(const json& j) {
  Verdict v;
  const json& sc = require(j, "sc");
  if (!sc.is_null()) v.sc = parse_sc_status(sc.get<std::string>());
  const json& diags = require(j, "sc_diagnostics");
  if (!diags.is_array()) throw DataError("field 'sc_diagnostics' must be an array");
  for (const auto& d : diags) v.sc_diagnostics.push_back(diagnostic_from_json(d));
  if (auto it = j.find("cc"); it != j.end() && !it->is_null()) {
    v.cc = parse_cc_result(it->get<std::string>());
  }
  if (auto it = j.find("cc_transcript"); it != j.end() && !it->is_null()) {
    v.cc_transcript = it->get<std::string>();
  }
  v.reward = require_number(require(j, "reward"), "reward");
  if (v.reward != 0.0 && v.reward != 1.0) throw DataError("reward must be 0 or 1");
  return v;
}

json to_json(const RolloutGroup& g) {
  json candidates = json::array();
  for (const auto& c : g.candidates) {
    candidates.push_back(
        {{"sample_index", c.sample_index},
         {"raw_response", c.raw_response},
         {"extracted_code",
          c.extracted_code ? json(*c.extracted_code) : json(nullptr)},
         {"token_logprobs",
          c.token_logprobs ? json(*c.token_logprobs) : json(nullptr)}});
  }
  return json{{"problem_id", g.problem_id},
              {"prompt", g.prompt},
              {"candidates", std::move(candidates)},
              {"rewards", g.rewards},
              {"advantages", g.advantages}};
}

RolloutGroup rollout_group_from_json(const json& j) {
  RolloutGroup g;
  g.problem_id = require_string(j, "problem_id");
  g.prompt = require_string(j, "prompt");
  const json& candidates = require(j, "candidates");
  if (!candidates.is_array()) throw DataError("field 'candidates' must be an array");
  for (const auto& cj : candidates) {
    Candidate c;
    c.problem_id = g.problem_id;
    const json& idx = require(cj, "sample_index");
    if (!idx.is_number_integer()) {
      throw DataError("field 'sample_index' must be an integer");
    }
    c.sample_index = idx.get<int>();
    c.raw_response = require_string(cj, "raw_response");
    const json& code = require(cj, "extracted_code");
    if (!code.is_null()) {
      if (!code.is_string()) throw DataError("field 'extracted_code' must be a string or null");
      c.extracted_code = code.get<std::string>();
    }
    const json& lps = require(cj, "token_logprobs");
    if (!lps.is_null()) c.token_logprobs = require_number_array(cj, "token_logprobs");
    g.candidates.push_back(std::move(c));
  }
  g.rewards = require_number_array(j, "rewards");
  g.advantages = require_number_array(j, "advantages");
  return g;
}

json to_json(const RunManifest& m) {
  return json{{"run_id", m.run_id},
              {"created_at", m.created_at},
              {"config_snapshot", m.config_snapshot},
              {"prompt_template_hashes", m.prompt_template_hashes},
              {"endpoints", m.endpoints},
              {"metrics", m.metrics}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.run_id = require_string(j, "run_id");
  m.created_at = require_string(j, "created_at");
  m.config_snapshot = require(j, "config_snapshot");
  m.prompt_template_hashes =
      require(j, "prompt_template_hashes").get<std::map<std::string, std::string>>();
  m.endpoints = require(j, "endpoints").get<std::map<std::string, std::string>>();
  m.metrics = require(j, "metrics");
  return m;
}

std::string content_id(std::string_view statement, std::string_view source) {
  std::string key(statement);
  key.push_back('\0');
  key.append(source);
  return sha256_hex(key).substr(0, 16);
}

void validate_problem(const Problem& p) {
  if (p.id.empty()) throw DataError("problem id is empty");
  if (blank(p.statement)) {
    throw DataError("problem '" + p.id + "' has an empty statement");
  }
}

void validate_candidate(const Candidate& c) {
  if (c.sample_index < 0) throw DataError("sample_index must be >= 0");
  if (c.extracted_code && c.extracted_code->find("```") != std::string::npos) {
    throw DataError("extracted_code contains a Markdown fence");
  }
  if (c.token_logprobs) {
    for (double lp : *c.token_logprobs) {
      if (!(lp <= 0.0)) throw DataError("token_logprobs must all be <= 0");
    }
  }
}

void validate_group(const RolloutGroup& g, double std_floor) {
  const std::string ctx = "group '" + g.problem_id + "': ";
  const std::size_t n = g.candidates.size();
  if (n < 2) throw DataError(ctx + "group size must be >= 2");
  if (g.rewards.size() != n) throw DataError(ctx + "|rewards| != G");
  if (g.advantages.size() != n) throw DataError(ctx + "|advantages| != G");

  std::set<int> seen;
  for (const auto& c : g.candidates) {
    validate_candidate(c);
    if (!seen.insert(c.sample_index).second) {
      throw DataError(ctx + "duplicate sample_index " +
                      std::to_string(c.sample_index));
    }
  }
  for (double a : g.advantages) {
    if (!std::isfinite(a)) throw DataError(ctx + "non-finite advantage");
  }

  const bool all_equal = std::all_of(g.rewards.begin(), g.rewards.end(),
                                     [&](double r) { return r == g.rewards[0]; });
  if (all_equal) {
    for (double a : g.advantages) {
      if (a != 0.0) throw DataError(ctx + "equal rewards need zero advantages");
    }
    return;
  }

  const double dn = static_cast<double>(n);
  double r_mean = 0.0;
  for (double r : g.rewards) r_mean += r;
  r_mean /= dn;
  double r_var = 0.0;
  for (double r : g.rewards) r_var += (r - r_mean) * (r - r_mean);
  const double r_std = std::sqrt(r_var / dn);

  double a_mean = 0.0;
  for (double a : g.advantages) a_mean += a;
  a_mean /= dn;
  double a_var = 0.0;
  for (double a : g.advantages) a_var += (a - a_mean) * (a - a_mean);
  const double a_std = std::sqrt(a_var / dn);

  const double expected_std = r_std / (r_std + std_floor);
  if (std::abs(a_mean) > 1e-9) throw DataError(ctx + "advantages do not have zero mean");
  if (std::abs(a_std - expected_std) > 1e-9) {
    throw DataError(ctx + "advantages are not standardized");
  }
}

std::vector<std::pair<std::size_t, json>> read_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::pair<std::size_t, json>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) continue;
    try {
      out.emplace_back(lineno, json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) +
                      ": malformed JSON: " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::vector<json>& records,
                 const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Problem> load_problem_file(const std::filesystem::path& path) {
  std::vector<Problem> problems;
  std::unordered_map<std::string, std::size_t> first_line;
  for (auto& [lineno, j] : read_jsonl(path)) {
    Problem p;
    try {
      p = problem_from_json(j);
    } catch (const DataError& e) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + ": " +
                      e.what());
    }
    auto [it, inserted] = first_line.emplace(p.id, lineno);
    if (!inserted) {
      throw DataError(path.string() + ": duplicate id '" + p.id + "' on lines " +
                      std::to_string(it->second) + " and " +
                      std::to_string(lineno));
    }
    problems.push_back(std::move(p));
  }
  return problems;
}

void write_problem_file(const std::vector<Problem>& problems,
                        const std::filesystem::path& path) {
  std::set<std::string> ids;
  std::vector<json> lines;
  lines.reserve(problems.size());
  for (const auto& p : problems) {
    validate_problem(p);
    if (!ids.insert(p.id).second) throw DataError("duplicate id '" + p.id + "'");
    lines.push_back(to_json(p));
  }
  write_jsonl(lines, path);
}

void write_rollout_batch(const std::vector<RolloutGroup>& groups,
                         const std::filesystem::path& path, double std_floor) {
  std::vector<json> lines;
  lines.reserve(groups.size());
  for (const auto& g : groups) {
    validate_group(g, std_floor);
    lines.push_back(to_json(g));
  }
  write_jsonl(lines, path);
}

std::vector<RolloutGroup> read_rollout_batch(const std::filesystem::path& path) {
  std::vector<RolloutGroup> groups;
  for (auto& [lineno, j] : read_jsonl(path)) {
    try {
      groups.push_back(rollout_group_from_json(j));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + ": " +
                      e.what());
    }
  }
  return groups;
}

void append_manifest(const RunManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot open " + path.string() + " for append");
  out << to_json(m).dump() << '\n';
}

std::vector<RunManifest> read_manifests(const std::filesystem::path& path) {
  std::vector<RunManifest> out;
  for (auto& [lineno, j] : read_jsonl(path)) {
    try {
      out.push_back(manifest_from_json(j));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + ": " +
                      e.what());
    }
  }
  return out;
}

std::string utc_now_iso8601() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace formaforge
