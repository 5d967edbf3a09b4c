// formaforge command-line front end.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "formaforge/config.hpp"
#include "formaforge/consistency.hpp"
#include "formaforge/curation.hpp"
#include "formaforge/eval.hpp"
#include "formaforge/grpo.hpp"
#include "formaforge/hash.hpp"
#include "formaforge/lean_check.hpp"
#include "formaforge/prompts.hpp"
#include "formaforge/reward.hpp"
#include "formaforge/rollout.hpp"

namespace fs = std::filesystem;
using namespace formaforge;

namespace {

struct Globals {
  std::string config_path;
  std::string timestamp;
  std::string log_level = "info";
};

Clock make_clock(const Globals& g) {
  if (g.timestamp.empty()) return utc_now_iso8601;
  return [ts = g.timestamp] { return ts; };
}

PipelineConfig load_config(const Globals& g) {
  if (g.config_path.empty()) throw ConfigError("--config is required for this command");
  return PipelineConfig::load(g.config_path);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::string require_string(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw DataError("line " + std::to_string(line) + ": missing string field '" + key + "'");
  }
  return j[key].get<std::string>();
}

// ---- check ---------------------------------------------------------------

int cmd_check(const Globals& g, const std::string& input, const std::string& out,
              double timeout, std::size_t jobs) {
  auto cfg = load_config(g);
  std::vector<CheckRequest> reqs;
  const Seconds t = timeout > 0 ? Seconds(timeout) : cfg.lean().timeout;
  for (const auto& [line, j] : read_jsonl(input)) {
    CheckRequest r;
    r.candidate_id = j.contains("candidate_id") ? require_string(j, "candidate_id", line)
                                                : require_string(j, "id", line);
    r.code = require_string(j, "code", line);
    r.timeout = t;
    reqs.push_back(std::move(r));
  }
  const auto verdicts = check_batch(cfg.checker(), reqs, jobs);
  std::vector<json> lines;
  std::size_t passed = 0;
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    json diags = json::array();
    for (const auto& d : verdicts[i].diagnostics) diags.push_back(to_json(d));
    lines.push_back({{"candidate_id", reqs[i].candidate_id},
                     {"status", to_string(verdicts[i].status)},
                     {"diagnostics", std::move(diags)}});
    passed += verdicts[i].status == SyntaxStatus::pass ? 1 : 0;
  }
  write_jsonl(lines, out);
  spdlog::info("checked {} statements, {} passed", reqs.size(), passed);
  return 0;
}

// ---- cc / qualify-cc -----------------------------------------------------

std::vector<StatementPair> load_pairs(const std::string& path) {
  std::vector<StatementPair> pairs;
  for (const auto& [line, j] : read_jsonl(path)) {
    pairs.push_back({require_string(j, "id", line), require_string(j, "nl", line),
                     require_string(j, "fl", line)});
  }
  return pairs;
}

int cmd_cc(const Globals& g, const std::string& input, const std::string& judge_name,
           const std::string& out, int votes) {
  auto cfg = load_config(g);
  ChatEndpoint& judge = cfg.endpoint(judge_name);
  const auto pairs = load_pairs(input);
  CCSampling sampling;
  sampling.votes = votes;
  std::vector<json> lines;
  for (const auto& p : pairs) {
    const CCRequest req{p.nl, strip_comments_and_metadata(p.fl).code, sampling};
    const CCVerdict v = check_consistency(req, judge);
    lines.push_back({{"id", p.id},
                     {"cc", to_string(v.verdict)},
                     {"judge", v.judge_identity},
                     {"transcript", v.transcript}});
  }
  if (out.empty()) {
    for (const auto& l : lines) std::cout << l.dump() << '\n';
  } else {
    write_jsonl(lines, out);
  }
  return 0;
}

json report_json(const QualificationReport& r) {
  return {{"rate", r.rate},
          {"accepted", r.accepted},
          {"rejected", r.rejected},
          {"evaluated", r.evaluated},
          {"skipped_ids", r.skipped_ids}};
}

int cmd_qualify(const Globals& g, const std::string& pairs_path, const std::string& judge_name,
                const std::string& generator_name, int budget) {
  auto cfg = load_config(g);
  const auto pairs = load_pairs(pairs_path);
  QualificationOptions opts;
  opts.perturbation_budget = budget;
  ChatEndpoint& judge = cfg.endpoint(judge_name);
  json out = {{"judge", judge.identity()}, {"recall", report_json(qualify_recall(pairs, judge, opts))}};
  if (!generator_name.empty()) {
    ChatEndpoint& gen = cfg.endpoint(generator_name);
    out["generator"] = gen.identity();
    out["specificity"] = report_json(qualify_specificity(pairs, gen, judge, opts));
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

// ---- reward ----------------------------------------------------------------

RewardBackends reward_backends(PipelineConfig& cfg, RewardMode mode, const std::string& judge) {
  RewardBackends b;
  if (mode != RewardMode::cc_only) b.checker = &cfg.checker();
  if (mode != RewardMode::sc_only) {
    if (judge.empty()) throw ConfigError("--judge is required unless --mode sc_only");
    b.judge = &cfg.endpoint(judge);
  }
  return b;
}

int cmd_reward(const Globals& g, const std::string& input, const std::string& out,
               const std::string& mode_s, const std::string& judge,
               const std::string& problems_path, double std_floor) {
  auto cfg = load_config(g);
  RewardConfig rc;
  rc.mode = parse_reward_mode(mode_s);
  rc.sc_timeout = cfg.lean().timeout;
  const RewardBackends b = reward_backends(cfg, rc.mode, judge);
  std::map<std::string, std::string> statements;
  if (!problems_path.empty()) {
    for (const auto& p : load_problem_file(problems_path)) statements[p.id] = p.statement;
  }
  grpo::GrpoConfig gc;
  gc.std_floor = std_floor;
  std::vector<json> lines;
  for (auto& group : read_rollout_batch(input)) {
    const auto it = statements.find(group.problem_id);
    const std::string nl =
        it != statements.end() ? it->second : statement_from_prompt(group.prompt);
    const auto verdicts = score_candidates(group.candidates, nl, rc, b);
    group.rewards.clear();
    for (const auto& v : verdicts) group.rewards.push_back(v.reward);
    group.advantages = grpo::group_advantages(group.rewards, gc);
    validate_group(group, gc.std_floor);
    json line = to_json(group);
    json vs = json::array();
    for (const auto& v : verdicts) vs.push_back(to_json(v));
    line["verdicts"] = std::move(vs);
    lines.push_back(std::move(line));
  }
  write_jsonl(lines, out);
  return 0;
}

// ---- rollout ---------------------------------------------------------------

struct RolloutArgs {
  std::string problems, out, endpoint, judge, mode = "sc_and_cc", verdicts, manifest;
  int group_size = 4;
  double temperature = 0.9;
  std::optional<std::uint64_t> seed;
  double std_floor = 1e-4;
};

int cmd_rollout(const Globals& g, const RolloutArgs& a) {
  auto cfg = load_config(g);
  SamplingConfig s;
  s.group_size = a.group_size;
  s.temperature = a.temperature;
  if (a.seed) {
    s.seed_policy = SeedPolicy::fixed_base_seed;
    s.base_seed = *a.seed;
  }
  RewardConfig rc;
  rc.mode = parse_reward_mode(a.mode);
  rc.sc_timeout = cfg.lean().timeout;
  const RewardBackends rb = reward_backends(cfg, rc.mode, a.judge);
  grpo::GrpoConfig gc;
  gc.std_floor = a.std_floor;
  const RolloutBackends backends{&cfg.endpoint(a.endpoint), rb.checker, rb.judge};
  const fs::path out(a.out);
  const RolloutPaths paths{
      out, a.verdicts.empty() ? fs::path(out).replace_extension(".verdicts.jsonl") : fs::path(a.verdicts),
      a.manifest.empty() ? fs::path(out).replace_extension(".manifest.jsonl") : fs::path(a.manifest)};
  const auto res = run_rollout(load_problem_file(a.problems), s, rc, gc, backends, paths,
                               make_clock(g));
  spdlog::info("rollout {}: {}", res.manifest.run_id, res.manifest.metrics.dump());
  return 0;
}

// ---- eval ------------------------------------------------------------------

std::vector<int> parse_k_list(const std::string& s) {
  std::vector<int> ks;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || k < 1) throw CLI::ValidationError("--k", "bad value '" + item + "'");
    ks.push_back(k);
  }
  if (ks.empty()) throw CLI::ValidationError("--k", "empty list");
  return ks;
}

struct EvalArgs {
  std::string problems, k = "1,8,16", endpoint, judge, report = "md", out, label;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  auto cfg = load_config(g);
  const auto ks = parse_k_list(a.k);
  const int kmax = *std::max_element(ks.begin(), ks.end());
  EvalConfig ec;
  ec.label = a.label.empty() ? a.endpoint : a.label;
  ec.sc_timeout = cfg.lean().timeout;
  if (a.seed) {
    ec.sampling.seed_policy = SeedPolicy::fixed_base_seed;
    ec.sampling.base_seed = *a.seed;
  }
  if (a.judge.empty()) throw ConfigError("--judge is required");
  const EvalBackends backends{&cfg.endpoint(a.endpoint), &cfg.checker(), &cfg.endpoint(a.judge)};
  const auto problems = load_problem_file(a.problems);
  const Evaluation ev = evaluate(problems, kmax, ec, backends);

  std::vector<EvalResult> results;
  for (int k : ks) results.push_back(pass_at_k_from_verdicts(ev.table, k, ec.label));

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const bool csv = a.report == "csv";
  write_file(dir / (csv ? "report.csv" : "report.md"),
             render_report(results, csv ? ReportFormat::csv : ReportFormat::markdown_table));
  write_verdict_table(ev.table, dir / "verdicts.jsonl");

  RunManifest m;
  m.created_at = make_clock(g)();
  m.config_snapshot = {{"command", "eval"},
                       {"k", ks},
                       {"label", ec.label},
                       {"temperature", ec.sampling.temperature},
                       {"min_p", ec.sampling.min_p.value_or(0.0)},
                       {"max_completion_tokens", ec.sampling.max_completion_tokens},
                       {"problems", problems.size()}};
  m.prompt_template_hashes =
      prompts::template_hashes({&prompts::formalization(), &prompts::consistency()});
  m.endpoints = {{"policy", backends.policy->identity()},
                 {"checker", backends.checker->identity()},
                 {"judge", backends.judge->identity()}};
  json metrics = json::array();
  for (const auto& r : results) {
    metrics.push_back({{"k", r.k},
                       {"sc_pass_rate", r.sc_pass_rate},
                       {"final_pass_rate", r.final_pass_rate}});
  }
  m.metrics = {{"results", std::move(metrics)}};
  m.run_id = sha256_hex(m.config_snapshot.dump() + m.created_at).substr(0, 16);
  append_manifest(m, dir / "manifest.jsonl");
  std::cout << render_report(results, ReportFormat::markdown_table);
  return 0;
}

// ---- curate ----------------------------------------------------------------

struct CurateArgs {
  std::string docs, category_map, out, extractor, validator, holdout_out, manifest;
  std::size_t holdout = 0;
  std::uint64_t seed = 0;
  std::size_t max_chars = 6000;
};

int cmd_curate(const Globals& g, const CurateArgs& a) {
  auto cfg = load_config(g);
  const json cmap = json::parse(read_file(a.category_map));
  if (!cmap.is_object()) throw DataError("category map must be a JSON object");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.docs)) {
    if (e.is_regular_file() && e.path().extension() == ".md") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SourceDoc> docs;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    if (!cmap.contains(id) || !cmap[id].is_string()) {
      throw DataError("category map has no entry for document '" + id + "'");
    }
    docs.push_back({id, read_file(f), cmap[id].get<std::string>()});
  }
  CurationOptions opts;
  opts.max_chars = a.max_chars;
  opts.holdout = a.holdout;
  opts.seed = a.seed;
  const fs::path out(a.out);
  CurationPaths paths{out,
                      a.holdout_out.empty() ? fs::path(out).replace_extension(".holdout.jsonl")
                                            : fs::path(a.holdout_out),
                      a.manifest.empty() ? fs::path(out).replace_extension(".manifest.jsonl")
                                         : fs::path(a.manifest)};
  ChatEndpoint& extractor = cfg.endpoint(a.extractor);
  ChatEndpoint& validator = cfg.endpoint(a.validator.empty() ? a.extractor : a.validator);
  const auto res = build_dataset(docs, extractor, validator, opts, paths, make_clock(g));
  spdlog::info("curated {} problems ({} held out) from {} chunks", res.problems.size(),
               res.holdout.size(), res.counts.chunks);
  return 0;
}

// ---- grpo-fixture ----------------------------------------------------------

int cmd_fixture_generate(const std::string& dir, int count, std::uint64_t seed) {
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> group(2, 8), len(1, 32);
  std::uniform_real_distribution<double> lp(-6.0, -0.01), shift(-0.4, 0.4), coin(0.0, 1.0);
  for (int n = 0; n < count; ++n) {
    grpo::Fixture f;
    const int G = group(rng);
    std::vector<double> rewards;
    for (int i = 0; i < G; ++i) rewards.push_back(coin(rng) < 0.5 ? 1.0 : 0.0);
    if (n == 0) rewards.assign(static_cast<std::size_t>(G), 1.0);  // zero-advantage case
    f.logprobs.advantages = grpo::group_advantages(rewards, grpo::GrpoConfig{});
    for (int i = 0; i < G; ++i) {
      std::vector<double> oldv, newv;
      for (int t = len(rng); t > 0; --t) {
        const double o = lp(rng);
        oldv.push_back(o);
        newv.push_back(std::min(0.0, o + shift(rng)));
      }
      f.logprobs.old_logprobs.push_back(std::move(oldv));
      f.logprobs.new_logprobs.push_back(std::move(newv));
    }
    f.clip_epsilon = 0.2;
    f.expected_objective =
        grpo::clipped_surrogate(f.logprobs, grpo::GrpoConfig{f.clip_epsilon, 0.0, 0.0});
    char name[32];
    std::snprintf(name, sizeof name, "fixture_%03d.json", n);
    grpo::save_fixture(f, fs::path(dir) / name);
  }
  return 0;
}

int cmd_fixture_verify(const std::string& dir, double tol) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  int bad = 0;
  for (const auto& f : files) {
    const auto fx = grpo::load_fixture(f);
    const double got =
        grpo::clipped_surrogate(fx.logprobs, grpo::GrpoConfig{fx.clip_epsilon, 0.0, 0.0});
    const bool ok = std::abs(got - fx.expected_objective) <= tol;
    bad += ok ? 0 : 1;
    std::cout << (ok ? "ok   " : "FAIL ") << f.filename().string() << " expected "
              << fx.expected_objective << " got " << got << '\n';
  }
  if (files.empty()) {
    std::cerr << "no fixtures in " << dir << '\n';
    return 1;
  }
  return bad == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"formaforge: autoformalization reward, rollout and evaluation pipeline"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Pipeline config (JSON)");
  app.add_option("--timestamp", g.timestamp, "Fixed created_at for manifests");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off");

  std::function<int()> run;

  auto* check = app.add_subcommand("check", "Syntax-check Lean statements");
  std::string check_in, check_out;
  double check_timeout = 0;
  std::size_t check_jobs = 4;
  check->add_option("--input", check_in, "JSONL with id and code")->required();
  check->add_option("--out", check_out)->required();
  check->add_option("--timeout", check_timeout, "Seconds per statement");
  check->add_option("--jobs", check_jobs)->check(CLI::PositiveNumber);
  check->callback([&] { run = [&] { return cmd_check(g, check_in, check_out, check_timeout, check_jobs); }; });

  auto* cc = app.add_subcommand("cc", "Consistency-check statement pairs");
  std::string cc_in, cc_judge, cc_out;
  int cc_votes = 1;
  cc->add_option("--input", cc_in, "JSONL with id, nl, fl")->required();
  cc->add_option("--judge", cc_judge)->required();
  cc->add_option("--out", cc_out);
  cc->add_option("--votes", cc_votes)->check(CLI::PositiveNumber);
  cc->callback([&] { run = [&] { return cmd_cc(g, cc_in, cc_judge, cc_out, cc_votes); }; });

  auto* q = app.add_subcommand("qualify-cc", "Measure judge recall and specificity");
  std::string q_pairs, q_judge, q_gen;
  int q_budget = 3;
  q->add_option("--pairs", q_pairs)->required();
  q->add_option("--judge", q_judge)->required();
  q->add_option("--generator", q_gen);
  q->add_option("--budget", q_budget)->check(CLI::PositiveNumber);
  q->callback([&] { run = [&] { return cmd_qualify(g, q_pairs, q_judge, q_gen, q_budget); }; });

  auto* rw = app.add_subcommand("reward", "Score a rollout batch");
  std::string rw_in, rw_out, rw_mode = "sc_and_cc", rw_judge, rw_problems;
  double rw_floor = 1e-4;
  rw->add_option("--input", rw_in)->required();
  rw->add_option("--out", rw_out)->required();
  rw->add_option("--mode", rw_mode)->check(CLI::IsMember({"sc_and_cc", "sc_only", "cc_only"}));
  rw->add_option("--judge", rw_judge);
  rw->add_option("--problems", rw_problems, "Problem file to look statements up by id");
  rw->add_option("--std-floor", rw_floor);
  rw->callback([&] {
    run = [&] { return cmd_reward(g, rw_in, rw_out, rw_mode, rw_judge, rw_problems, rw_floor); };
  });

  auto* ro = app.add_subcommand("rollout", "Sample, score and write a GRPO batch");
  RolloutArgs ra;
  ro->add_option("--problems", ra.problems)->required();
  ro->add_option("--out", ra.out)->required();
  ro->add_option("--endpoint", ra.endpoint)->required();
  ro->add_option("--judge", ra.judge);
  ro->add_option("--mode", ra.mode)->check(CLI::IsMember({"sc_and_cc", "sc_only", "cc_only"}));
  ro->add_option("--group-size", ra.group_size)->check(CLI::Range(2, 1024));
  ro->add_option("--temperature", ra.temperature);
  ro->add_option("--seed", ra.seed);
  ro->add_option("--std-floor", ra.std_floor);
  ro->add_option("--verdicts", ra.verdicts);
  ro->add_option("--manifest", ra.manifest);
  ro->callback([&] { run = [&] { return cmd_rollout(g, ra); }; });

  auto* ev = app.add_subcommand("eval", "pass@k evaluation");
  EvalArgs ea;
  ev->add_option("--problems", ea.problems)->required();
  ev->add_option("--k", ea.k, "Comma-separated k values");
  ev->add_option("--endpoint", ea.endpoint)->required();
  ev->add_option("--judge", ea.judge)->required();
  ev->add_option("--report", ea.report)->check(CLI::IsMember({"md", "csv"}));
  ev->add_option("--out", ea.out)->required();
  ev->add_option("--label", ea.label);
  ev->add_option("--seed", ea.seed);
  ev->callback([&] { run = [&] { return cmd_eval(g, ea); }; });

  auto* cu = app.add_subcommand("curate", "Build a problem set from markdown");
  CurateArgs ca;
  cu->add_option("--docs", ca.docs, "Directory of .md files")->required()->check(CLI::ExistingDirectory);
  cu->add_option("--category-map", ca.category_map, "JSON object doc_id -> category")
      ->required()->check(CLI::ExistingFile);
  cu->add_option("--out", ca.out)->required();
  cu->add_option("--extractor", ca.extractor)->required();
  cu->add_option("--validator", ca.validator, "Defaults to the extractor");
  cu->add_option("--holdout", ca.holdout);
  cu->add_option("--holdout-out", ca.holdout_out);
  cu->add_option("--seed", ca.seed);
  cu->add_option("--max-chars", ca.max_chars)->check(CLI::Range(512, 1 << 24));
  cu->add_option("--manifest", ca.manifest);
  cu->callback([&] { run = [&] { return cmd_curate(g, ca); }; });

  auto* fx = app.add_subcommand("grpo-fixture", "Generate or verify shared GRPO fixtures");
  fx->require_subcommand(1);
  auto* fx_gen = fx->add_subcommand("generate");
  std::string fx_dir;
  int fx_count = 8;
  std::uint64_t fx_seed = 7;
  double fx_tol = 1e-12;
  fx_gen->add_option("--out-dir", fx_dir)->required();
  fx_gen->add_option("--count", fx_count)->check(CLI::PositiveNumber);
  fx_gen->add_option("--seed", fx_seed);
  fx_gen->callback([&] { run = [&] { return cmd_fixture_generate(fx_dir, fx_count, fx_seed); }; });
  auto* fx_ver = fx->add_subcommand("verify");
  fx_ver->add_option("--dir", fx_dir)->required()->check(CLI::ExistingDirectory);
  fx_ver->add_option("--tol", fx_tol);
  fx_ver->callback([&] { run = [&] { return cmd_fixture_verify(fx_dir, fx_tol); }; });

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_color_mt("formaforge"));
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  try {
    return run ? run() : 2;
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
