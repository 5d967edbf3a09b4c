#include "formaforge/grpo.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "formaforge/grpo/kernels.hpp"

namespace formaforge::grpo {

namespace {

void check_config(const GrpoConfig& cfg) {
  if (!(cfg.clip_epsilon > 0.0)) throw GrpoError("clip_epsilon must be > 0");
  if (!(cfg.kl_beta >= 0.0)) throw GrpoError("kl_beta must be >= 0");
  if (!(cfg.std_floor >= 0.0)) throw GrpoError("std_floor must be >= 0");
}

void check_grid(const TokenGrid& a, const TokenGrid& b, const char* what) {
  if (a.size() != b.size()) {
    throw GrpoError(std::string(what) + ": sequence count mismatch");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) {
      throw GrpoError(std::string(what) + ": token count mismatch in sequence " +
                      std::to_string(i));
    }
    for (double x : b[i]) {
      if (!std::isfinite(x)) throw GrpoError(std::string(what) + ": non-finite log-probability");
    }
  }
}

}  // namespace

void validate(const GroupLogprobs& lp) {
  const std::size_t g = lp.new_logprobs.size();
  if (g == 0) throw GrpoError("empty group");
  if (lp.advantages.size() != g) throw GrpoError("one advantage per sequence required");
  check_grid(lp.new_logprobs, lp.old_logprobs, "old_logprobs");
  for (std::size_t i = 0; i < g; ++i) {
    if (lp.new_logprobs[i].empty()) {
      throw GrpoError("sequence " + std::to_string(i) + " has no tokens");
    }
    for (double x : lp.new_logprobs[i]) {
      if (!std::isfinite(x)) throw GrpoError("non-finite log-probability");
    }
    if (!std::isfinite(lp.advantages[i])) throw GrpoError("non-finite advantage");
  }
}

std::vector<double> group_advantages(std::span<const double> rewards,
                                     const GrpoConfig& cfg) {
  check_config(cfg);
  if (rewards.size() < 2) throw GrpoError("group_advantages needs at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) throw GrpoError("non-finite reward");
    mean += r;
  }
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);

  std::vector<double> adv(rewards.size(), 0.0);
  const double denom = std + cfg.std_floor;
  if (denom == 0.0) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    adv[i] = (rewards[i] - mean) / denom;
  }
  return adv;
}

double clipped_surrogate(const GroupLogprobs& lp, const GrpoConfig& cfg) {
  check_config(cfg);
  validate(lp);
  const auto& k = kernels::active();
  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;
  double total = 0.0;
  for (std::size_t i = 0; i < lp.advantages.size(); ++i) {
    const double a = lp.advantages[i];
    if (a == 0.0) continue;
    const auto& seq = lp.new_logprobs[i];
    const double s = k.clipped_ratio_sum(seq, lp.old_logprobs[i], a > 0.0, lo, hi);
    total += a * (s / static_cast<double>(seq.size()));
  }
  return total / static_cast<double>(lp.advantages.size());
}

TokenGrid surrogate_gradient(const GroupLogprobs& lp, const GrpoConfig& cfg) {
  check_config(cfg);
  validate(lp);
  const auto& k = kernels::active();
  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;
  const double g = static_cast<double>(lp.advantages.size());
  TokenGrid grad(lp.new_logprobs.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const auto& seq = lp.new_logprobs[i];
    grad[i].assign(seq.size(), 0.0);
    const double a = lp.advantages[i];
    if (a == 0.0) continue;
    const double scale = a / (g * static_cast<double>(seq.size()));
    k.clipped_ratio_grad(seq, lp.old_logprobs[i], a > 0.0, lo, hi, scale, grad[i]);
  }
  return grad;
}

double kl_penalty(const GroupLogprobs& lp, const TokenGrid& ref_logprobs,
                  const GrpoConfig& cfg) {
  check_config(cfg);
  if (cfg.kl_beta == 0.0) return 0.0;
  validate(lp);
  check_grid(lp.new_logprobs, ref_logprobs, "ref_logprobs");
  const auto& k = kernels::active();
  double total = 0.0;
  for (std::size_t i = 0; i < ref_logprobs.size(); ++i) {
    const auto& seq = lp.new_logprobs[i];
    total += k.k3_sum(seq, ref_logprobs[i]) / static_cast<double>(seq.size());
  }
  return cfg.kl_beta * (total / static_cast<double>(ref_logprobs.size()));
}

Fixture load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GrpoError("cannot open fixture " + path.string());
  const auto j = nlohmann::json::parse(in);
  Fixture f;
  for (const char* key : {"new_logprobs", "old_logprobs", "advantages",
                          "clip_epsilon", "expected_objective"}) {
    if (!j.contains(key)) {
      throw GrpoError(path.string() + ": missing field '" + key + "'");
    }
  }
  f.logprobs.new_logprobs = j.at("new_logprobs").get<TokenGrid>();
  f.logprobs.old_logprobs = j.at("old_logprobs").get<TokenGrid>();
  f.logprobs.advantages = j.at("advantages").get<std::vector<double>>();
  f.clip_epsilon = j.at("clip_epsilon").get<double>();
  f.expected_objective = j.at("expected_objective").get<double>();
  validate(f.logprobs);
  return f;
}

void save_fixture(const Fixture& f, const std::filesystem::path& path) {
  const nlohmann::json j{{"new_logprobs", f.logprobs.new_logprobs},
                         {"old_logprobs", f.logprobs.old_logprobs},
                         {"advantages", f.logprobs.advantages},
                         {"clip_epsilon", f.clip_epsilon},
                         {"expected_objective", f.expected_objective}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw GrpoError("cannot write fixture " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace formaforge::grpo
