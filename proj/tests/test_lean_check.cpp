#include <doctest.h>

#include <chrono>
#include <string>
#include <vector>

#include "formaforge/lean_check.hpp"

using namespace formaforge;
using nlohmann::json;

namespace {

ReplConfig fake_config(std::size_t workers, bool reuse = true) {
  ReplConfig cfg;
  cfg.command = {FF_FAKE_REPL};
  cfg.project_dir = ".";
  cfg.workers = workers;
  cfg.reuse_header_env = reuse;
  cfg.startup_timeout = Seconds(10.0);
  return cfg;
}

CheckRequest req(std::string code, double timeout = 10.0) {
  return CheckRequest{"c", std::move(code), Seconds(timeout)};
}

const std::string kGood = "theorem t (n : ℕ) : n + 0 = n := sorry";
const std::string kBad = "theorem t : 1+1=3 := by simp";

}  // namespace

TEST_CASE("wrap_with_header") {
  const std::string w = wrap_with_header("theorem x : True := sorry");
  CHECK(w.starts_with("import Mathlib\nimport Aesop\nset_option maxHeartbeats 0\n"));
  CHECK(w.ends_with("open Rat\n\ntheorem x : True := sorry"));
  CHECK(w == std::string(lean_header()) + "\n\ntheorem x : True := sorry");
  CHECK_THROWS_AS(wrap_with_header(""), std::invalid_argument);
  // Header occupies lines 1-8, line 9 is blank, code starts on line 10.
  int newlines = 0;
  for (char c : std::string(lean_header())) newlines += c == '\n';
  CHECK(newlines == 7);
}

TEST_CASE("strip_imports") {
  CHECK(strip_imports("import Mathlib\nimport Aesop\ntheorem x : True := sorry") ==
        "theorem x : True := sorry");
  CHECK(strip_imports("set_option maxHeartbeats 400000\nopen Real\ntheorem x : True := sorry") ==
        "open Real\ntheorem x : True := sorry");
  // Lines after the first declaration are untouched.
  const std::string after = "theorem x : True := sorry\nimport Foo\n";
  CHECK(strip_imports(after) == after);
  CHECK(strip_imports("") == "");
  const std::string plain = "lemma y (a : ℝ) : a = a := by\n  rfl\n";
  CHECK(strip_imports(plain) == plain);
  CHECK(strip_imports("import A\r\nimport B\r\n@[simp] theorem z : True := trivial") ==
        "@[simp] theorem z : True := trivial");
}

TEST_CASE("classify_repl_response") {
  SUBCASE("sorry warning passes") {
    const json r = {{"env", 1},
                    {"messages",
                     {{{"severity", "warning"},
                       {"pos", {{"line", 10}, {"column", 8}}},
                       {"data", "declaration uses 'sorry'"}}}}};
    const SyntaxVerdict v = classify_repl_response(r, 9);
    CHECK(v.status == SyntaxStatus::pass);
    REQUIRE(v.diagnostics.size() == 1);
    CHECK(v.diagnostics[0].severity == Severity::warning);
    CHECK(v.diagnostics[0].position == SourcePosition{1, 8});
  }
  SUBCASE("error fails") {
    const json r = {{"env", 1},
                    {"messages",
                     {{{"severity", "warning"}, {"data", "w"}},
                      {{"severity", "error"},
                       {"pos", {{"line", 3}, {"column", 0}}},
                       {"data", "unknown identifier 'foo'"}}}}};
    const SyntaxVerdict v = classify_repl_response(r);
    CHECK(v.status == SyntaxStatus::fail);
    REQUIRE(v.diagnostics.size() == 2);
    CHECK(v.diagnostics[1].text == "unknown identifier 'foo'");
    CHECK(!v.diagnostics[0].position.has_value());
  }
  SUBCASE("no messages is a pass") {
    CHECK(classify_repl_response(json{{"env", 4}}).status == SyntaxStatus::pass);
    CHECK(classify_repl_response(json{{"env", 4}, {"messages", json::array()}}).status ==
          SyntaxStatus::pass);
  }
  SUBCASE("info messages pass") {
    const json r = {{"env", 2}, {"messages", {{{"severity", "info"}, {"data", "x"}}}}};
    CHECK(classify_repl_response(r).status == SyntaxStatus::pass);
  }
  SUBCASE("malformed") {
    const SyntaxVerdict v = classify_repl_response(json{{"message", "Unknown environment."}});
    CHECK(v.status == SyntaxStatus::worker_error);
    REQUIRE(v.diagnostics.size() == 1);
    CHECK(v.diagnostics[0].text == "Unknown environment.");
    CHECK(classify_repl_response(json::array()).status == SyntaxStatus::worker_error);
    CHECK(classify_repl_response(json{{"messages", "oops"}}).status ==
          SyntaxStatus::worker_error);
  }
}

TEST_CASE("repl session speaks the blank-line protocol") {
  ReplSession s(fake_config(1));
  REQUIRE(s.alive());
  REQUIRE(s.header_env().has_value());
  CHECK(*s.header_env() == 0);
  const auto r = s.send({{"cmd", kGood}, {"env", 0}}, Seconds(5.0));
  REQUIRE(r.outcome == ReplSession::Outcome::ok);
  CHECK(r.body["env"] == 1);
  CHECK(r.body["messages"][0]["data"] == "declaration uses 'sorry'");
}

TEST_CASE("repl pool verdicts") {
  for (bool reuse : {true, false}) {
    CAPTURE(reuse);
    ReplPool pool(fake_config(1, reuse));
    const SyntaxVerdict good = pool.check(req(kGood));
    CHECK(good.status == SyntaxStatus::pass);

    const SyntaxVerdict bad = pool.check(req(kBad));
    CHECK(bad.status == SyntaxStatus::fail);
    REQUIRE(!bad.diagnostics.empty());
    // Positions are relative to the candidate code either way.
    REQUIRE(bad.diagnostics[0].position.has_value());
    CHECK(bad.diagnostics[0].position->line == 1);
    CHECK(bad.diagnostics[0].position->column == 12);

    const SyntaxVerdict unk =
        pool.check(req("theorem u : NonexistentIdent 3 := sorry"));
    CHECK(unk.status == SyntaxStatus::fail);
    CHECK(unk.diagnostics[0].text.find("unknown identifier") != std::string::npos);

    CHECK(pool.check(req("")).status == SyntaxStatus::fail);
    CHECK_THROWS_AS(pool.check(req(kGood, 0.0)), std::invalid_argument);
    CHECK(pool.sessions_started() == 1);
  }
}

TEST_CASE("timeout kills and the next request gets a fresh session") {
  ReplPool pool(fake_config(1));
  const auto t0 = std::chrono::steady_clock::now();
  const SyntaxVerdict v = pool.check(req("theorem h : HANG := sorry", 0.5));
  const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(v.status == SyntaxStatus::timeout);
  CHECK(took < 5.0);
  CHECK(pool.check(req(kGood)).status == SyntaxStatus::pass);
  CHECK(pool.sessions_started() == 2);
}

TEST_CASE("crash is a worker error and the pool recovers") {
  ReplPool pool(fake_config(1));
  CHECK(pool.check(req("theorem c : CRASH := sorry")).status == SyntaxStatus::worker_error);
  CHECK(pool.check(req(kGood)).status == SyntaxStatus::pass);
  CHECK(pool.sessions_started() == 2);
  CHECK(pool.check(req("GARBAGE")).status == SyntaxStatus::worker_error);
  CHECK(pool.check(req(kBad)).status == SyntaxStatus::fail);
  CHECK(pool.sessions_started() == 3);
}

TEST_CASE("a REPL that cannot start is a worker error") {
  ReplConfig cfg = fake_config(1);
  cfg.command = {"/nonexistent/repl-binary"};
  ReplPool pool(cfg);
  CHECK(pool.check(req(kGood)).status == SyntaxStatus::worker_error);
}

TEST_CASE("batch preserves input order under parallelism") {
  ReplPool pool(fake_config(4));
  std::vector<CheckRequest> reqs;
  for (int i = 0; i < 40; ++i) reqs.push_back(req(i % 3 == 0 ? kBad : kGood));
  const auto out = check_batch(pool, reqs, 4);
  REQUIRE(out.size() == reqs.size());
  for (int i = 0; i < 40; ++i) {
    CHECK(out[i].status == (i % 3 == 0 ? SyntaxStatus::fail : SyntaxStatus::pass));
  }
  CHECK(pool.sessions_started() <= 4);
  CHECK_THROWS_AS(check_batch(pool, reqs, 0), std::invalid_argument);
}

TEST_CASE("identical requests give identical verdicts") {
  ReplPool pool(fake_config(8));
  std::vector<CheckRequest> reqs(100, req(kGood));
  const auto out = check_batch(pool, reqs, 8);
  for (const auto& v : out) {
    CHECK(v.status == SyntaxStatus::pass);
    CHECK(v.diagnostics == out.front().diagnostics);
  }
}

TEST_CASE("a timed-out item does not affect its neighbours") {
  ReplPool pool(fake_config(2));
  std::vector<CheckRequest> reqs;
  for (int i = 0; i < 10; ++i) reqs.push_back(req(kGood, 5.0));
  reqs[4] = req("theorem h : HANG := sorry", 0.5);
  reqs[7] = req(kBad, 5.0);
  const auto out = check_batch(pool, reqs, 2);
  for (int i = 0; i < 10; ++i) {
    CAPTURE(i);
    const SyntaxStatus want = i == 4 ? SyntaxStatus::timeout
                              : i == 7 ? SyntaxStatus::fail
                                       : SyntaxStatus::pass;
    CHECK(out[i].status == want);
  }
}
