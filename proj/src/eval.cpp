#include "formaforge/eval.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "formaforge/parallel.hpp"

namespace formaforge {

namespace {

std::string percent(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", rate * 100.0);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

}  // namespace

EvalResult pass_at_k_from_verdicts(const VerdictTable& table, int k,
                                   const std::string& label) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  EvalResult r;
  r.label = label;
  r.k = k;
  r.n_problems = table.size();
  std::size_t sc = 0;
  std::size_t fin = 0;
  for (const auto& p : table) {
    if (p.candidates.size() < static_cast<std::size_t>(k)) {
      throw DataError("problem '" + p.problem_id + "' has " +
                      std::to_string(p.candidates.size()) + " candidates, need " +
                      std::to_string(k));
    }
    ProblemOutcome o{p.problem_id, std::nullopt, std::nullopt};
    for (int i = 0; i < k; ++i) {
      const auto& c = p.candidates[static_cast<std::size_t>(i)];
      if (c.sc != ScStatus::pass) continue;
      if (!c.cc) {
        throw DataError("problem '" + p.problem_id + "': first SC passer (index " +
                        std::to_string(c.sample_index) + ") has no CC verdict");
      }
      o.first_sc_pass_index = c.sample_index;
      o.cc_on_first = c.cc;
      break;
    }
    if (o.first_sc_pass_index) {
      ++sc;
      if (o.cc_on_first == CcResult::accepted) ++fin;
    }
    r.per_problem.push_back(std::move(o));
  }
  if (r.n_problems != 0) {
    r.sc_pass_rate = static_cast<double>(sc) / static_cast<double>(r.n_problems);
    r.final_pass_rate = static_cast<double>(fin) / static_cast<double>(r.n_problems);
  }
  return r;
}

Evaluation evaluate(const std::vector<Problem>& problems, int k, const EvalConfig& cfg,
                    const EvalBackends& backends) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (!backends.policy || !backends.checker || !backends.judge) {
    throw std::invalid_argument("evaluate needs policy, checker and judge");
  }
  ThrottledEndpoint judge(*backends.judge, static_cast<int>(cfg.cc_parallelism));

  Evaluation ev;
  ev.table.resize(problems.size());
  parallel_for(problems.size(), cfg.sampling.problem_parallelism, [&](std::size_t pi) {
    const Problem& p = problems[pi];
    const auto candidates = sample_candidates(p, k, cfg.sampling, *backends.policy);

    ProblemVerdicts& row = ev.table[pi];
    row.problem_id = p.id;
    std::vector<CheckRequest> reqs;
    std::vector<std::size_t> req_owner;
    for (const auto& c : candidates) {
      CandidateRecord rec;
      rec.sample_index = c.sample_index;
      rec.extracted_code = c.extracted_code;
      rec.sc = ScStatus::fail;
      if (c.extracted_code) {
        std::string code = strip_imports(*c.extracted_code);
        if (code.find_first_not_of(" \t\r\n") != std::string::npos) {
          reqs.push_back({p.id + "#" + std::to_string(c.sample_index), std::move(code),
                          cfg.sc_timeout});
          req_owner.push_back(row.candidates.size());
        }
      }
      row.candidates.push_back(std::move(rec));
    }
    const auto verdicts = check_batch(*backends.checker, reqs, cfg.sc_parallelism);
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
      auto& rec = row.candidates[req_owner[i]];
      switch (verdicts[i].status) {
        case SyntaxStatus::pass: rec.sc = ScStatus::pass; break;
        case SyntaxStatus::fail: rec.sc = ScStatus::fail; break;
        case SyntaxStatus::timeout: rec.sc = ScStatus::timeout; break;
        case SyntaxStatus::worker_error: rec.sc = ScStatus::error; break;
      }
    }
    for (auto& rec : row.candidates) {
      if (rec.sc != ScStatus::pass) continue;
      const auto stripped = strip_comments_and_metadata(strip_imports(*rec.extracted_code));
      rec.cc = check_consistency({p.statement, stripped.code, cfg.cc_sampling}, judge,
                                 cfg.cc_retry)
                   .verdict;
      break;
    }
  });
  ev.result = pass_at_k_from_verdicts(ev.table, k, cfg.label);
  return ev;
}

std::string render_report(const std::vector<EvalResult>& results, ReportFormat format) {
  if (results.empty()) throw std::invalid_argument("render_report: no results");
  std::ostringstream out;
  if (format == ReportFormat::markdown_table) {
    out << "| Model | k | SC Pass Rate | Final Pass Rate |\n";
    out << "|---|---:|---:|---:|\n";
    for (const auto& r : results) {
      out << "| " << md_cell(r.label) << " | " << r.k << " | " << percent(r.sc_pass_rate)
          << " | " << percent(r.final_pass_rate) << " |\n";
    }
  } else {
    out << "model,k,sc_pass_rate,final_pass_rate\r\n";
    for (const auto& r : results) {
      out << csv_field(r.label) << ',' << r.k << ',' << percent(r.sc_pass_rate) << ','
          << percent(r.final_pass_rate) << "\r\n";
    }
  }
  return out.str();
}

json to_json(const ProblemVerdicts& p) {
  json cands = json::array();
  for (const auto& c : p.candidates) {
    cands.push_back(
        {{"sample_index", c.sample_index},
         {"extracted_code", c.extracted_code ? json(*c.extracted_code) : json(nullptr)},
         {"sc", to_string(c.sc)},
         {"cc", c.cc ? json(to_string(*c.cc)) : json(nullptr)}});
  }
  return {{"problem_id", p.problem_id}, {"candidates", std::move(cands)}};
}

ProblemVerdicts problem_verdicts_from_json(const json& j) {
  ProblemVerdicts p;
  if (!j.contains("problem_id")) throw DataError("missing required field 'problem_id'");
  if (!j.contains("candidates")) throw DataError("missing required field 'candidates'");
  p.problem_id = j["problem_id"].get<std::string>();
  for (const auto& cj : j["candidates"]) {
    CandidateRecord c;
    for (const char* f : {"sample_index", "sc"}) {
      if (!cj.contains(f)) throw DataError(std::string("missing required field '") + f + "'");
    }
    c.sample_index = cj["sample_index"].get<int>();
    c.sc = parse_sc_status(cj["sc"].get<std::string>());
    if (cj.contains("extracted_code") && !cj["extracted_code"].is_null()) {
      c.extracted_code = cj["extracted_code"].get<std::string>();
    }
    if (cj.contains("cc") && !cj["cc"].is_null()) {
      c.cc = parse_cc_result(cj["cc"].get<std::string>());
    }
    p.candidates.push_back(std::move(c));
  }
  return p;
}

void write_verdict_table(const VerdictTable& table, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.reserve(table.size());
  for (const auto& p : table) lines.push_back(to_json(p));
  write_jsonl(lines, path);
}

VerdictTable read_verdict_table(const std::filesystem::path& path) {
  VerdictTable table;
  for (auto& [lineno, j] : read_jsonl(path)) {
    try {
      table.push_back(problem_verdicts_from_json(j));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

}  // namespace formaforge
