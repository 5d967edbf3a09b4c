#include "formaforge/rollout.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "formaforge/extract.hpp"
#include "formaforge/hash.hpp"
#include "formaforge/parallel.hpp"
#include "formaforge/prompts.hpp"

namespace formaforge {

namespace {

std::optional<std::vector<double>> checked_logprobs(
    const std::optional<std::vector<double>>& lps) {
  if (!lps) return std::nullopt;
  for (double lp : *lps) {
    if (!std::isfinite(lp) || lp > 0.0) {
      spdlog::warn("dropping token logprobs: value {} is not a log-probability", lp);
      return std::nullopt;
    }
  }
  return lps;
}

Candidate make_candidate(const Problem& p, int index,
                         const std::optional<ChatChoice>& choice) {
  Candidate c;
  c.problem_id = p.id;
  c.sample_index = index;
  if (choice) {
    c.raw_response = choice->text;
    c.extracted_code = extract_lean_block(choice->text);
    c.token_logprobs = checked_logprobs(choice->token_logprobs);
  }
  return c;
}

json sampling_snapshot(const SamplingConfig& s) {
  return {{"group_size", s.group_size},
          {"temperature", s.temperature},
          {"min_p", s.min_p ? json(*s.min_p) : json(nullptr)},
          {"max_completion_tokens", s.max_completion_tokens},
          {"seed_policy", s.seed_policy == SeedPolicy::fixed_base_seed
                              ? "fixed_base_seed"
                              : "endpoint_default"},
          {"base_seed", s.base_seed},
          {"request_logprobs", s.request_logprobs}};
}

json reward_snapshot(const RewardConfig& r) {
  return {{"mode", to_string(r.mode)},
          {"sc_timeout_s", r.sc_timeout.count()},
          {"cc_temperature", r.cc_sampling.temperature},
          {"cc_min_p", r.cc_sampling.min_p},
          {"cc_max_tokens", r.cc_sampling.max_tokens},
          {"cc_votes", r.cc_sampling.votes}};
}

}  // namespace

std::string render_formalization_prompt(const Problem& problem) {
  return prompts::render_formalization(problem.statement);
}

std::string statement_from_prompt(std::string_view prompt) {
  const std::string_view tmpl = prompts::formalization().text;
  const std::string_view prefix = tmpl.substr(0, tmpl.find("{nl_statement}"));
  if (!prompt.starts_with(prefix)) {
    throw DataError("prompt was not rendered from the formalization template");
  }
  return std::string(prompt.substr(prefix.size()));
}

std::vector<Candidate> sample_candidates(const Problem& problem, int count,
                                         const SamplingConfig& cfg,
                                         ChatEndpoint& endpoint) {
  if (count < 1) throw std::invalid_argument("sample_candidates: count must be >= 1");
  ChatRequest req;
  req.template_name = std::string(prompts::formalization().name);
  req.fingerprint_key = problem.statement;
  req.messages.push_back({"user", render_formalization_prompt(problem)});
  req.temperature = cfg.temperature;
  req.min_p = cfg.min_p;
  req.max_tokens = cfg.max_completion_tokens;
  req.logprobs = cfg.request_logprobs;
  if (cfg.seed_policy == SeedPolicy::fixed_base_seed) req.seed = cfg.base_seed;

  std::vector<std::optional<ChatChoice>> slots(static_cast<std::size_t>(count));
  if (count > 1 && endpoint.supports_n()) {
    req.n = count;
    try {
      ChatResponse r = with_retries(cfg.retry, [&] { return endpoint.complete(req); });
      for (std::size_t i = 0; i < slots.size() && i < r.choices.size(); ++i) {
        slots[i] = std::move(r.choices[i]);
      }
    } catch (const TransportError& e) {
      spdlog::warn("problem {}: batched sampling failed, falling back: {}", problem.id,
                   e.what());
    }
  }
  req.n = 1;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) continue;
    if (cfg.seed_policy == SeedPolicy::fixed_base_seed) req.seed = cfg.base_seed + i;
    try {
      ChatResponse r = with_retries(cfg.retry, [&] { return endpoint.complete(req); });
      if (!r.choices.empty()) slots[i] = std::move(r.choices.front());
    } catch (const TransportError& e) {
      spdlog::warn("problem {} sample {}: completion failed, padding: {}", problem.id, i,
                   e.what());
    }
  }

  std::vector<Candidate> out;
  out.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out.push_back(make_candidate(problem, static_cast<int>(i), slots[i]));
  }
  return out;
}

RolloutGroup sample_group(const Problem& problem, const SamplingConfig& cfg,
                          ChatEndpoint& endpoint) {
  RolloutGroup g;
  g.problem_id = problem.id;
  g.prompt = render_formalization_prompt(problem);
  g.candidates = sample_candidates(problem, cfg.group_size, cfg, endpoint);
  return g;
}

RolloutOutput run_rollout(const std::vector<Problem>& problems,
                          const SamplingConfig& sampling,
                          const RewardConfig& reward_cfg,
                          const grpo::GrpoConfig& grpo_cfg,
                          const RolloutBackends& backends, const RolloutPaths& paths,
                          const Clock& clock) {
  if (sampling.group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (backends.policy == nullptr) throw std::invalid_argument("no policy endpoint");

  std::optional<ThrottledEndpoint> judge;
  if (backends.judge != nullptr) {
    judge.emplace(*backends.judge, static_cast<int>(reward_cfg.cc_parallelism));
  }
  const RewardBackends rb{backends.checker, judge ? &*judge : nullptr};

  RolloutOutput out;
  out.groups.resize(problems.size());
  out.verdicts.resize(problems.size());
  parallel_for(problems.size(), sampling.problem_parallelism, [&](std::size_t i) {
    const Problem& p = problems[i];
    RolloutGroup g = sample_group(p, sampling, *backends.policy);
    out.verdicts[i] = score_candidates(g.candidates, p.statement, reward_cfg, rb);
    for (const auto& v : out.verdicts[i]) g.rewards.push_back(v.reward);
    g.advantages = grpo::group_advantages(g.rewards, grpo_cfg);
    out.groups[i] = std::move(g);
  });

  write_rollout_batch(out.groups, paths.batch, grpo_cfg.std_floor);
  if (!paths.verdicts.empty()) {
    std::vector<json> lines;
    for (std::size_t i = 0; i < out.groups.size(); ++i) {
      json vs = json::array();
      for (const auto& v : out.verdicts[i]) vs.push_back(to_json(v));
      lines.push_back({{"problem_id", out.groups[i].problem_id}, {"verdicts", std::move(vs)}});
    }
    write_jsonl(lines, paths.verdicts);
  }

  std::size_t candidates = 0, sc_pass = 0, cc_calls = 0, no_code = 0, degenerate = 0;
  double reward_sum = 0.0;
  for (std::size_t i = 0; i < out.groups.size(); ++i) {
    const auto& g = out.groups[i];
    candidates += g.candidates.size();
    for (const auto& c : g.candidates) no_code += c.extracted_code ? 0 : 1;
    for (const auto& v : out.verdicts[i]) {
      sc_pass += v.sc == ScStatus::pass ? 1 : 0;
      cc_calls += v.cc ? 1 : 0;
      reward_sum += v.reward;
    }
    const bool flat = std::all_of(g.rewards.begin(), g.rewards.end(),
                                  [&](double r) { return r == g.rewards.front(); });
    degenerate += flat ? 1 : 0;
  }

  RunManifest& m = out.manifest;
  m.created_at = clock();
  m.config_snapshot = {{"command", "rollout"},
                       {"sampling", sampling_snapshot(sampling)},
                       {"reward", reward_snapshot(reward_cfg)},
                       {"grpo",
                        {{"clip_epsilon", grpo_cfg.clip_epsilon},
                         {"kl_beta", grpo_cfg.kl_beta},
                         {"std_floor", grpo_cfg.std_floor}}},
                       {"batch_file", paths.batch.filename().string()}};
  std::vector<const prompts::Template*> used{&prompts::formalization()};
  if (reward_cfg.mode != RewardMode::sc_only) used.push_back(&prompts::consistency());
  m.prompt_template_hashes = prompts::template_hashes(used);
  m.endpoints["policy"] = backends.policy->identity();
  if (backends.checker) m.endpoints["checker"] = backends.checker->identity();
  if (backends.judge) m.endpoints["judge"] = backends.judge->identity();
  m.metrics = {{"groups", out.groups.size()},
               {"candidates", candidates},
               {"no_code_candidates", no_code},
               {"sc_pass", sc_pass},
               {"cc_calls", cc_calls},
               {"degenerate_groups", degenerate},
               {"mean_reward", candidates == 0 ? 0.0 : reward_sum / static_cast<double>(candidates)}};
  m.run_id = sha256_hex(m.config_snapshot.dump() + m.created_at).substr(0, 16);
  if (!paths.manifest.empty()) append_manifest(m, paths.manifest);
  return out;
}

}  // namespace formaforge
