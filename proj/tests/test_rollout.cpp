#include <doctest.h>

#include "formaforge/mock.hpp"
#include "formaforge/prompts.hpp"
#include "formaforge/rollout.hpp"
#include "test_util.hpp"

using namespace formaforge;
using namespace formaforge::mock;

namespace {

Problem problem(std::string id, std::string statement) {
  return Problem{std::move(id), std::move(statement), "Algebra", ProblemType::proof, "test"};
}

std::string fenced(const std::string& code) { return "```lean\n" + code + "\n```"; }

ScriptedResponse with_lp(std::string text, std::vector<double> lps) {
  return ScriptedResponse{std::move(text), std::move(lps), false};
}

SamplingConfig fast_sampling() {
  SamplingConfig s;
  s.retry = {2, std::chrono::milliseconds(0)};
  s.problem_parallelism = 2;
  return s;
}

RewardConfig fast_reward() {
  RewardConfig r;
  r.cc_retry = {1, std::chrono::milliseconds(0)};
  return r;
}

grpo::GrpoConfig exact_grpo() {
  grpo::GrpoConfig g;
  g.std_floor = 0.0;
  return g;
}

}  // namespace

TEST_CASE("sampling defaults") {
  const SamplingConfig s;
  CHECK(s.group_size == 4);
  CHECK(s.max_completion_tokens == 2048);
  CHECK(s.seed_policy == SeedPolicy::endpoint_default);
}

TEST_CASE("render_formalization_prompt") {
  const std::string p = render_formalization_prompt(problem("x", "1+1=2"));
  CHECK(p.find("```lean\nexample: 1+1=2 := sorry\n```") != std::string::npos);
  CHECK(p == render_formalization_prompt(problem("y", "1+1=2")));
  CHECK(statement_from_prompt(p) == "1+1=2");
  CHECK_THROWS(render_formalization_prompt(problem("x", "")));
  CHECK_THROWS_AS(statement_from_prompt("hello"), DataError);
}

TEST_CASE("sample_group in scripted order") {
  const Problem p = problem("p1", "Show that 2 = 2.");
  Script s;
  s.add("formalization", p.statement,
        {with_lp(fenced("theorem a : 2 = 2 := sorry"), {-0.1, -0.2}), {"no fence"},
         {fenced("theorem c : 2 = 2 := sorry")}, {fenced("theorem d : 2 = 2 := sorry")}});
  MockChatEndpoint ep(s);
  const RolloutGroup g = sample_group(p, fast_sampling(), ep);
  REQUIRE(g.size() == 4);
  CHECK(ep.total_calls() == 1);
  CHECK(g.prompt == render_formalization_prompt(p));
  for (int i = 0; i < 4; ++i) CHECK(g.candidates[i].sample_index == i);
  CHECK(g.candidates[0].extracted_code == "theorem a : 2 = 2 := sorry");
  CHECK(g.candidates[0].token_logprobs == std::vector<double>{-0.1, -0.2});
  CHECK_FALSE(g.candidates[1].extracted_code.has_value());
  CHECK(g.candidates[1].raw_response == "no fence");
  CHECK_FALSE(g.candidates[2].token_logprobs.has_value());
  CHECK(g.candidates[3].extracted_code == "theorem d : 2 = 2 := sorry");
}

TEST_CASE("sampling without n support issues one request per sample") {
  const Problem p = problem("p1", "Show that 3 = 3.");
  Script s;
  s.supports_n = false;
  s.add("formalization", p.statement, {{"a"}, {"b"}, {"c"}, {"d"}});
  MockChatEndpoint ep(s);
  const RolloutGroup g = sample_group(p, fast_sampling(), ep);
  CHECK(ep.total_calls() == 4);
  CHECK(g.candidates[2].raw_response == "c");
}

TEST_CASE("a permanently failing completion pads the group") {
  const Problem p = problem("p1", "Show that 4 = 4.");
  Script s;
  s.supports_n = false;
  ScriptedResponse down;
  down.transport_error = true;
  s.add("formalization", p.statement, {{"a"}, {"b"}, down, down, {"d"}});
  MockChatEndpoint ep(s);
  auto cfg = fast_sampling();
  cfg.problem_parallelism = 1;
  const RolloutGroup g = sample_group(p, cfg, ep);
  REQUIRE(g.size() == 4);
  CHECK(g.candidates[2].raw_response.empty());
  CHECK_FALSE(g.candidates[2].extracted_code.has_value());
  CHECK(g.candidates[3].raw_response == "d");
}

TEST_CASE("invalid logprobs are dropped") {
  const Problem p = problem("p1", "Show that 5 = 5.");
  Script s;
  s.add("formalization", p.statement, {with_lp("x", {-0.1, 0.5})});
  MockChatEndpoint ep(s);
  auto cfg = fast_sampling();
  cfg.group_size = 2;
  const RolloutGroup g = sample_group(p, cfg, ep);
  CHECK_FALSE(g.candidates[0].token_logprobs.has_value());
}

TEST_CASE("run_rollout composition") {
  const std::vector<Problem> ps{problem("p1", "Show that 1 = 1."),
                                problem("p2", "Show that 0 < 1.")};
  const std::string good1 = "theorem g (x : ℕ) : 1 = 1 := sorry";
  const std::string other1 = "theorem o : 1 = 2 := sorry";
  Script policy;
  policy.add("formalization", ps[0].statement,
             {{fenced(good1)}, {fenced(other1)}, {fenced("theorem f : 1 = 1 := by rfl")}, {"none"}});
  policy.add("formalization", ps[1].statement, {{"none"}});
  Script jscript;
  jscript.add("consistency", join_key({ps[0].statement, good1}), {{"\\boxed{true}"}});
  jscript.add("consistency", join_key({ps[0].statement, other1}), {{"\\boxed{false}"}});
  MockChatEndpoint pol(policy, "policy"), judge(jscript, "judge");
  MockChecker checker;

  fftest::TempDir dir;
  const RolloutPaths paths{dir / "batch.jsonl", dir / "verdicts.jsonl", dir / "manifest.jsonl"};
  const RolloutOutput out = run_rollout(ps, fast_sampling(), fast_reward(), exact_grpo(),
                                        {&pol, &checker, &judge}, paths, fftest::fixed_clock);
  REQUIRE(out.groups.size() == 2);
  CHECK(out.groups[0].rewards == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK(out.groups[0].advantages[0] == doctest::Approx(1.7320508075688772));
  CHECK(out.groups[1].rewards == std::vector<double>{0.0, 0.0, 0.0, 0.0});
  CHECK(out.groups[1].advantages == std::vector<double>{0.0, 0.0, 0.0, 0.0});
  CHECK(judge.total_calls() == 2);

  const auto batch = read_rollout_batch(paths.batch);
  CHECK(batch == out.groups);
  for (const auto& g : batch) {
    CHECK(g.size() == 4);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g.candidates[i].extracted_code) CHECK(g.rewards[i] == 0.0);
    }
  }
  CHECK(read_jsonl(paths.verdicts).size() == 2);

  const auto ms = read_manifests(paths.manifest);
  REQUIRE(ms.size() == 1);
  CHECK(ms[0].created_at == "2025-01-01T00:00:00Z");
  CHECK(ms[0].run_id.size() == 16);
  CHECK(ms[0].endpoints.at("policy") == "mock:policy");
  CHECK(ms[0].endpoints.at("judge") == "mock:judge");
  CHECK(ms[0].endpoints.at("checker") == "mock-checker");
  CHECK(ms[0].prompt_template_hashes.at("formalization") ==
        prompts::template_hash(prompts::formalization()));
  CHECK(ms[0].prompt_template_hashes.count("consistency") == 1);
  CHECK(ms[0].metrics.at("groups") == 2);
  CHECK(ms[0].metrics.at("sc_pass") == 2);
  CHECK(ms[0].metrics.at("degenerate_groups") == 1);
  CHECK(ms[0].metrics.at("mean_reward").get<double>() == doctest::Approx(1.0 / 8.0));

  SUBCASE("rerun is byte-identical") {
    MockChatEndpoint pol2(policy, "policy"), judge2(jscript, "judge");
    fftest::TempDir dir2;
    const RolloutPaths p2{dir2 / "batch.jsonl", dir2 / "verdicts.jsonl", dir2 / "manifest.jsonl"};
    run_rollout(ps, fast_sampling(), fast_reward(), exact_grpo(), {&pol2, &checker, &judge2}, p2,
                fftest::fixed_clock);
    CHECK(fftest::slurp(p2.batch) == fftest::slurp(paths.batch));
    CHECK(fftest::slurp(p2.verdicts) == fftest::slurp(paths.verdicts));
    CHECK(fftest::slurp(p2.manifest) == fftest::slurp(paths.manifest));
  }
}

TEST_CASE("run_rollout boundaries") {
  MockChatEndpoint pol(Script{});
  MockChecker checker;
  fftest::TempDir dir;
  const RolloutPaths paths{dir / "batch.jsonl", {}, dir / "manifest.jsonl"};
  const auto out = run_rollout({}, fast_sampling(), fast_reward(), exact_grpo(),
                               {&pol, &checker, &pol}, paths, fftest::fixed_clock);
  CHECK(out.groups.empty());
  CHECK(fftest::slurp(paths.batch).empty());
  CHECK(read_manifests(paths.manifest).size() == 1);

  auto one = fast_sampling();
  one.group_size = 1;
  CHECK_THROWS_AS(run_rollout({}, one, fast_reward(), exact_grpo(), {&pol, &checker, &pol},
                              paths, fftest::fixed_clock),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_rollout({}, fast_sampling(), fast_reward(), exact_grpo(),
                              {nullptr, &checker, &pol}, paths, fftest::fixed_clock),
                  std::invalid_argument);
}

TEST_CASE("fixed seed policy sends seeds") {
  // The mock ignores seeds; this only checks that sampling still works.
  const Problem p = problem("p1", "Show that 6 = 6.");
  Script s;
  s.supports_n = false;
  s.add("formalization", p.statement, {{"a"}});
  MockChatEndpoint ep(s);
  auto cfg = fast_sampling();
  cfg.seed_policy = SeedPolicy::fixed_base_seed;
  cfg.base_seed = 42;
  CHECK(sample_group(p, cfg, ep).size() == 4);
}
