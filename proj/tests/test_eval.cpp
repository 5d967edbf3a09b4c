#include <doctest.h>

#include <random>

#include "formaforge/eval.hpp"
#include "formaforge/mock.hpp"
#include "test_util.hpp"

using namespace formaforge;
using namespace formaforge::mock;

namespace {

// One character per candidate: T = SC pass, CC true; X = SC pass, CC false;
// F = SC fail; N = no code block.
const std::vector<std::string> kRows{
    "TFFFFFFFFFFFFFFF", "FFFFXFTFFFFFFFFF", "FFFFFFFFFFFFFFFF", "NNNNNNNNNNTFFFFF",
    "XTTTTTTTTTTTTTTT", "FTFFFFFFFFFFFFFF", "FFFFFFFXFFFFFFFF", "FFFFFFFFTFFFFFFF",
    "TTTTTTTTTTTTTTTT", "NFNFNFNFNFNFNFNX"};

struct Expected {
  int k;
  double sc, fin;
};
// Worked out by hand from kRows.
const Expected kExpected[] = {{1, 0.3, 0.2}, {8, 0.6, 0.3}, {16, 0.9, 0.5}};

std::string statement(std::size_t i) { return "Problem number " + std::to_string(i) + "."; }
std::string ok_code(std::size_t i) { return "theorem p" + std::to_string(i) + "_ok : True := sorry"; }
std::string bad_code(std::size_t i) { return "theorem p" + std::to_string(i) + "_bad : False := sorry"; }

VerdictTable hand_table() {
  VerdictTable t;
  for (std::size_t i = 0; i < kRows.size(); ++i) {
    ProblemVerdicts p{"p" + std::to_string(i), {}};
    for (std::size_t j = 0; j < kRows[i].size(); ++j) {
      CandidateRecord c;
      c.sample_index = static_cast<int>(j);
      switch (kRows[i][j]) {
        case 'T': c.sc = ScStatus::pass; c.cc = CcResult::accepted; break;
        case 'X': c.sc = ScStatus::pass; c.cc = CcResult::rejected; break;
        default: c.sc = ScStatus::fail;
      }
      p.candidates.push_back(c);
    }
    t.push_back(std::move(p));
  }
  return t;
}

struct Fixture {
  std::vector<Problem> problems;
  Script policy, judge;
};

Fixture mock_fixture() {
  Fixture f;
  for (std::size_t i = 0; i < kRows.size(); ++i) {
    f.problems.push_back({"p" + std::to_string(i), statement(i), "Algebra", ProblemType::proof, "t"});
    std::vector<ScriptedResponse> rs;
    for (char c : kRows[i]) {
      switch (c) {
        case 'T': rs.push_back({"```lean\n" + ok_code(i) + "\n```"}); break;
        case 'X': rs.push_back({"```lean\n" + bad_code(i) + "\n```"}); break;
        case 'F': rs.push_back({"```lean\ntheorem f : True := by trivial\n```"}); break;
        default: rs.push_back({"I cannot formalize this."});
      }
    }
    f.policy.add("formalization", statement(i), rs);
    f.judge.add("consistency", join_key({statement(i), ok_code(i)}), {{"$\\boxed{true}$"}});
    f.judge.add("consistency", join_key({statement(i), bad_code(i)}), {{"$\\boxed{false}$"}});
  }
  return f;
}

EvalConfig fast_config() {
  EvalConfig cfg;
  cfg.sampling.retry = {1, std::chrono::milliseconds(0)};
  cfg.sampling.problem_parallelism = 3;
  cfg.cc_retry = {1, std::chrono::milliseconds(0)};
  return cfg;
}

// Minimal RFC 4180 reader.
std::vector<std::vector<std::string>> read_csv(const std::string& s) {
  std::vector<std::vector<std::string>> rows(1);
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quoted) {
      if (c == '"' && i + 1 < s.size() && s[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      rows.back().push_back(field);
      field.clear();
    } else if (c == '\r' && i + 1 < s.size() && s[i + 1] == '\n') {
      rows.back().push_back(field);
      field.clear();
      rows.emplace_back();
      ++i;
    } else {
      field += c;
    }
  }
  if (rows.back().empty() && field.empty()) rows.pop_back();
  return rows;
}

}  // namespace

TEST_CASE("hand-computed fixture from stored verdicts") {
  const VerdictTable t = hand_table();
  for (const auto& e : kExpected) {
    CAPTURE(e.k);
    const EvalResult r = pass_at_k_from_verdicts(t, e.k);
    CHECK(r.n_problems == 10);
    CHECK(r.sc_pass_rate == e.sc);
    CHECK(r.final_pass_rate == e.fin);
  }
  const EvalResult r8 = pass_at_k_from_verdicts(t, 8);
  CHECK(r8.per_problem[1].first_sc_pass_index == 4);
  CHECK(r8.per_problem[1].cc_on_first == CcResult::rejected);
  CHECK_FALSE(r8.per_problem[2].first_sc_pass_index.has_value());
  CHECK_THROWS_AS(pass_at_k_from_verdicts(t, 17), DataError);
  CHECK_THROWS_AS(pass_at_k_from_verdicts(t, 0), std::invalid_argument);
}

TEST_CASE("evaluate against mocks reproduces the hand-computed rates") {
  const Fixture f = mock_fixture();
  for (const auto& e : kExpected) {
    CAPTURE(e.k);
    MockChatEndpoint policy(f.policy), judge(f.judge);
    MockChecker checker;
    const Evaluation ev = evaluate(f.problems, e.k, fast_config(), {&policy, &checker, &judge});
    CHECK(ev.result.sc_pass_rate == e.sc);
    CHECK(ev.result.final_pass_rate == e.fin);
    // Exactly one judgment per SC-passing problem.
    CHECK(judge.total_calls() ==
          static_cast<std::size_t>(std::lround(e.sc * 10)));
    // Replay over the stored table gives the same numbers.
    const EvalResult replay = pass_at_k_from_verdicts(ev.table, e.k);
    CHECK(replay.sc_pass_rate == ev.result.sc_pass_rate);
    CHECK(replay.final_pass_rate == ev.result.final_pass_rate);
    for (const auto& row : ev.table) CHECK(row.candidates.size() == static_cast<std::size_t>(e.k));
  }
}

TEST_CASE("smaller k recomputed from a k=16 table") {
  const Fixture f = mock_fixture();
  MockChatEndpoint policy(f.policy), judge(f.judge);
  MockChecker checker;
  const Evaluation ev = evaluate(f.problems, 16, fast_config(), {&policy, &checker, &judge});
  fftest::TempDir dir;
  write_verdict_table(ev.table, dir / "v.jsonl");
  const VerdictTable back = read_verdict_table(dir / "v.jsonl");
  for (const auto& e : kExpected) {
    const EvalResult r = pass_at_k_from_verdicts(back, e.k);
    CHECK(r.sc_pass_rate == e.sc);
    CHECK(r.final_pass_rate == e.fin);
  }
}

TEST_CASE("first SC passer rule") {
  // Candidates 0-3 fail SC, 4 passes SC but fails CC, 6 would pass CC.
  const std::string nl = "Show that the thing holds.";
  const std::string c4 = "theorem four : False := sorry";
  const std::string c6 = "theorem six : True := sorry";
  Script policy, jscript;
  std::vector<ScriptedResponse> rs(8, ScriptedResponse{"```lean\ntheorem f : True := by simp\n```"});
  rs[4] = {"```lean\n" + c4 + "\n```"};
  rs[6] = {"```lean\n" + c6 + "\n```"};
  policy.add("formalization", nl, rs);
  jscript.add("consistency", join_key({nl, c4}), {{"\\boxed{false}"}});
  jscript.add("consistency", join_key({nl, c6}), {{"\\boxed{true}"}});
  MockChatEndpoint pol(policy), judge(jscript);
  MockChecker checker;
  const Evaluation ev = evaluate({{"q", nl, "Algebra", ProblemType::proof, "t"}}, 8,
                                 fast_config(), {&pol, &checker, &judge});
  CHECK(ev.result.sc_pass_rate == 1.0);
  CHECK(ev.result.final_pass_rate == 0.0);
  CHECK(ev.result.per_problem[0].first_sc_pass_index == 4);
  CHECK(judge.total_calls() == 1);
  CHECK_FALSE(ev.table[0].candidates[6].cc.has_value());
}

TEST_CASE("k=1 single problem passing both") {
  const std::string nl = "One.";
  const std::string code = "theorem one : 1 = 1 := sorry";
  Script policy, jscript;
  policy.add("formalization", nl, {{"```lean\n" + code + "\n```"}});
  jscript.add("consistency", join_key({nl, code}), {{"\\boxed{true}"}});
  MockChatEndpoint pol(policy), judge(jscript);
  MockChecker checker;
  const Evaluation ev = evaluate({{"one", nl, "Algebra", ProblemType::proof, "t"}}, 1,
                                 fast_config(), {&pol, &checker, &judge});
  CHECK(ev.result.sc_pass_rate == 1.0);
  CHECK(ev.result.final_pass_rate == 1.0);
}

TEST_CASE("saturation and boundary tables") {
  VerdictTable all_pass, all_fail;
  for (int i = 0; i < 5; ++i) {
    ProblemVerdicts a{"a" + std::to_string(i), {}}, b{"b" + std::to_string(i), {}};
    for (int j = 0; j < 16; ++j) {
      a.candidates.push_back({j, "x", ScStatus::pass, CcResult::accepted});
      b.candidates.push_back({j, "x", j == 0 ? ScStatus::fail : ScStatus::pass, CcResult::accepted});
    }
    all_pass.push_back(a);
    all_fail.push_back(b);
  }
  for (int k : {1, 8, 16}) {
    const auto r = pass_at_k_from_verdicts(all_pass, k);
    CHECK(r.sc_pass_rate == 1.0);
    CHECK(r.final_pass_rate == 1.0);
  }
  const auto r1 = pass_at_k_from_verdicts(all_fail, 1);
  CHECK(r1.sc_pass_rate == 0.0);
  CHECK(r1.final_pass_rate == 0.0);

  VerdictTable missing{{"m", {{0, "x", ScStatus::pass, std::nullopt}}}};
  CHECK_THROWS_AS(pass_at_k_from_verdicts(missing, 1), DataError);
}

TEST_CASE("random tables: dominance and k-monotonicity") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> n_problems(1, 12), cell(0, 3);
  for (int rep = 0; rep < 200; ++rep) {
    VerdictTable t;
    const int n = n_problems(rng);
    for (int i = 0; i < n; ++i) {
      ProblemVerdicts p{"r" + std::to_string(i), {}};
      for (int j = 0; j < 16; ++j) {
        const int v = cell(rng);
        CandidateRecord c{j, "x", v >= 2 ? ScStatus::pass : ScStatus::fail, std::nullopt};
        if (v >= 2) c.cc = v == 3 ? CcResult::accepted : CcResult::rejected;
        p.candidates.push_back(c);
      }
      t.push_back(std::move(p));
    }
    double prev_sc = -1.0;
    for (int k = 1; k <= 16; ++k) {
      const auto r = pass_at_k_from_verdicts(t, k);
      CHECK(r.final_pass_rate <= r.sc_pass_rate);
      CHECK(r.sc_pass_rate >= prev_sc);
      CHECK((r.sc_pass_rate >= 0.0 && r.sc_pass_rate <= 1.0));
      prev_sc = r.sc_pass_rate;
    }
  }
}

TEST_CASE("report rendering") {
  EvalResult r;
  r.label = "formarl";
  r.k = 1;
  r.sc_pass_rate = 0.186;
  r.final_pass_rate = 0.096;
  const std::string md = render_report({r}, ReportFormat::markdown_table);
  CHECK(md.find("18.60% | 9.60%") != std::string::npos);
  CHECK(md ==
        "| Model | k | SC Pass Rate | Final Pass Rate |\n"
        "|---|---:|---:|---:|\n"
        "| formarl | 1 | 18.60% | 9.60% |\n");
  CHECK(render_report({r}, ReportFormat::markdown_table) == md);
  CHECK_THROWS_AS(render_report({}, ReportFormat::csv), std::invalid_argument);

  EvalResult odd = r;
  odd.label = "model \"a\", v2";
  odd.k = 16;
  odd.sc_pass_rate = 1.0;
  odd.final_pass_rate = 0.0;
  const auto rows = read_csv(render_report({r, odd}, ReportFormat::csv));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"model", "k", "sc_pass_rate", "final_pass_rate"});
  CHECK(rows[1] == std::vector<std::string>{"formarl", "1", "18.60%", "9.60%"});
  CHECK(rows[2] == std::vector<std::string>{"model \"a\", v2", "16", "100.00%", "0.00%"});
}

TEST_CASE("verdict table io errors") {
  fftest::TempDir dir;
  fftest::spit(dir / "bad.jsonl", "{\"problem_id\":\"a\",\"candidates\":[]}\n{\"candidates\":[]}\n");
  try {
    read_verdict_table(dir / "bad.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("problem_id") != std::string::npos);
  }
}
