#include "sofake/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sofake {

void GrpoConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must lie in (0, 1)");
  if (!(kl_coeff >= 0.0)) throw std::invalid_argument("kl_coeff must be >= 0");
  if (inner_epochs < 1) throw std::invalid_argument("inner_epochs must be >= 1");
  if (!(advantage_eps > 0.0)) throw std::invalid_argument("advantage_eps must be > 0");
  if (groups_per_step < 1) throw std::invalid_argument("groups_per_step must be >= 1");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw std::invalid_argument("warmup_ratio must lie in [0, 1)");
}

double GrpoConfig::learning_rate_at(int step) const {
  if (steps <= 0) return learning_rate;
  const double warmup = std::floor(warmup_ratio * steps);
  const double t = static_cast<double>(step);
  if (t < warmup) return learning_rate * (t + 1.0) / warmup;
  const double span = std::max(1.0, static_cast<double>(steps) - warmup);
  const double progress = std::clamp((t - warmup) / span, 0.0, 1.0);
  switch (schedule) {
    case LrSchedule::Constant:
      return learning_rate;
    case LrSchedule::Linear:
      return learning_rate * (1.0 - progress);
    case LrSchedule::Cosine:
      return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return learning_rate;
}

void Group::validate() const {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("a group needs at least two completions");
  if (logp_current.size() != g || logp_behavior.size() != g || logp_ref.size() != g) {
    throw std::invalid_argument("group log-prob vectors must match the reward count");
  }
  for (std::size_t i = 0; i < g; ++i) {
    if (!std::isfinite(rewards[i])) throw std::invalid_argument("non-finite reward");
    if (!std::isfinite(logp_current[i]) || !std::isfinite(logp_behavior[i]) || !std::isfinite(logp_ref[i])) {
      throw std::invalid_argument("non-finite log-prob in group");
    }
  }
}

std::vector<double> group_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages needs at least two rewards");
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  std::vector<double> out(rewards.size(), 0.0);
  if (*lo == *hi) return out;  // exact zeros; rounding in the mean must not leak through 1/eps

  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double denom = std::sqrt(var / n) + eps;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / denom;
  return out;
}

double kl_estimate(double logp_current, double logp_ref) {
  const double d = logp_ref - logp_current;
  // expm1(d) - d is exact to rounding for small |d| and never negative.
  return std::max(0.0, std::expm1(d) - d);
}

ObjectiveTerms grpo_objective_terms(const Group& group, const GrpoConfig& cfg) {
  group.validate();
  const std::size_t g = group.size();
  ObjectiveTerms t;
  t.advantages = group_advantages(group.rewards, cfg.advantage_eps);
  t.logp_weights.assign(g, 0.0);
  const double inv_g = 1.0 / static_cast<double>(g);
  const double lo = 1.0 - cfg.clip_eps;
  const double hi = 1.0 + cfg.clip_eps;
  for (std::size_t i = 0; i < g; ++i) {
    const double a = t.advantages[i];
    const double rho = std::exp(group.logp_current[i] - group.logp_behavior[i]);
    const double clipped_rho = std::clamp(rho, lo, hi);
    const double unclipped = rho * a;
    const double clipped = clipped_rho * a;
    const double kl = kl_estimate(group.logp_current[i], group.logp_ref[i]);
    if (rho < lo || rho > hi) ++t.clipped;

    // d(rho A)/d logp = rho A on the unclipped branch; the clipped branch is constant.
    const double surrogate_grad = unclipped <= clipped ? unclipped : 0.0;
    const double kl_grad = -std::expm1(group.logp_ref[i] - group.logp_current[i]);
    t.objective += inv_g * (std::min(unclipped, clipped) - cfg.kl_coeff * kl);
    t.mean_kl += inv_g * kl;
    t.logp_weights[i] = inv_g * (surrogate_grad - cfg.kl_coeff * kl_grad);
  }
  return t;
}

double grpo_objective(const Group& group, const GrpoConfig& cfg) { return grpo_objective_terms(group, cfg).objective; }

void GroupLogProb::accumulate_weighted_gradient(std::span<const double> weights, std::span<double> grad) const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] != 0.0) accumulate_log_prob_gradient(i, weights[i], grad);
  }
}

Group with_current_log_probs(const Group& group, const GroupLogProb& policy) {
  if (policy.size() != group.size()) throw std::invalid_argument("policy view and group differ in size");
  Group out = group;
  for (std::size_t i = 0; i < group.size(); ++i) out.logp_current[i] = policy.log_prob(i);
  return out;
}

void grpo_gradient(const Group& group, const GroupLogProb& policy, const GrpoConfig& cfg, std::span<double> grad) {
  if (grad.size() != policy.num_parameters()) throw std::invalid_argument("gradient buffer size mismatch");
  const ObjectiveTerms t = grpo_objective_terms(with_current_log_probs(group, policy), cfg);
  policy.accumulate_weighted_gradient(t.logp_weights, grad);
}

void adam_ascent(std::span<double> parameters, std::span<const double> grad, const GrpoConfig& cfg, AdamState& state,
                 double lr) {
  const std::size_t n = parameters.size();
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
    state.t = 0;
  }
  ++state.t;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    parameters[i] += lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
}

StepDiagnostics step(std::span<double> parameters, std::span<const GroupBatchItem> batch, const GrpoConfig& cfg,
                     AdamState& state, double lr) {
  StepDiagnostics d;
  d.learning_rate = lr;
  if (batch.empty()) return d;

  std::vector<double> total(parameters.size(), 0.0);
  std::vector<double> scratch(parameters.size(), 0.0);
  std::size_t completions = 0;
  std::size_t clipped = 0;
  std::size_t used = 0;
  for (std::size_t gi = 0; gi < batch.size(); ++gi) {
    const Group& group = *batch[gi].group;
    const GroupLogProb& policy = *batch[gi].policy;
    if (policy.num_parameters() != parameters.size()) throw std::invalid_argument("policy/parameter size mismatch");
    const ObjectiveTerms t = grpo_objective_terms(with_current_log_probs(group, policy), cfg);
    for (double r : group.rewards) d.mean_reward += r;
    d.mean_kl += t.mean_kl * static_cast<double>(group.size());
    completions += group.size();
    clipped += t.clipped;

    const auto [lo, hi] = std::minmax_element(group.rewards.begin(), group.rewards.end());
    if (cfg.skip_constant_groups && *lo == *hi) continue;
    ++used;
    d.objective += t.objective;

    std::fill(scratch.begin(), scratch.end(), 0.0);
    policy.accumulate_weighted_gradient(t.logp_weights, scratch);
    for (std::size_t k = 0; k < scratch.size(); ++k) {
      if (!std::isfinite(scratch[k])) {
        throw NonFiniteGradientError(gi, "non-finite gradient produced by group " + std::to_string(gi));
      }
      total[k] += scratch[k];
    }
  }
  d.mean_reward /= static_cast<double>(completions);
  d.mean_kl /= static_cast<double>(completions);
  d.clip_frac = static_cast<double>(clipped) / static_cast<double>(completions);
  if (used == 0) return d;
  d.objective /= static_cast<double>(used);
  const double inv = 1.0 / static_cast<double>(used);
  for (double& g : total) g *= inv;
  adam_ascent(parameters, total, cfg, state, lr);
  return d;
}

}  // namespace sofake
