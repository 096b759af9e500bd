// Group-relative policy optimization for any policy that exposes log-probabilities.
//
// Per group of G completions with rewards r_i:
//   A_i   = (r_i - mean(r)) / (std_pop(r) + eps)
//   rho_i = exp(logp_theta_i - logp_behavior_i)
//   KL_i  = exp(logp_ref_i - logp_theta_i) - (logp_ref_i - logp_theta_i) - 1
//   J     = mean_i [ min(rho_i A_i, clip(rho_i, 1 - clip_eps, 1 + clip_eps) A_i) - beta KL_i ]
// The update ascends the mean of J over a batch of groups with Adam.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sofake {

enum class LrSchedule { Constant, Linear, Cosine };

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_coeff = 0.04;
  int inner_epochs = 1;
  double advantage_eps = 1e-6;
  bool skip_constant_groups = false;

  int groups_per_step = 16;
  int steps = 5000;
  double learning_rate = 0.005;
  double warmup_ratio = 0.05;
  LrSchedule schedule = LrSchedule::Constant;  // after linear warmup
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  /// Learning rate for 0-based optimizer step `step` out of `steps`.
  double learning_rate_at(int step) const;
};

struct Group {
  std::vector<double> rewards;
  std::vector<double> logp_current;
  std::vector<double> logp_behavior;
  std::vector<double> logp_ref;

  std::size_t size() const { return rewards.size(); }
  /// Throws std::invalid_argument on size mismatch, G < 2 or non-finite log-probs.
  void validate() const;
};

/// Throws std::invalid_argument when fewer than two rewards are given.
std::vector<double> group_advantages(std::span<const double> rewards, double eps = 1e-6);

/// k3 estimator of KL(theta || ref) from one sample; non-negative, 0 iff the log-probs agree.
double kl_estimate(double logp_current, double logp_ref);

struct ObjectiveTerms {
  double objective = 0.0;
  double mean_kl = 0.0;
  std::size_t clipped = 0;              // samples with rho outside [1 - eps, 1 + eps]
  std::vector<double> advantages;
  std::vector<double> logp_weights;     // dJ / d logp_theta_i
};

ObjectiveTerms grpo_objective_terms(const Group& group, const GrpoConfig& cfg);
double grpo_objective(const Group& group, const GrpoConfig& cfg);

/// Completions of one group evaluated under a policy at its current parameters.
class GroupLogProb {
 public:
  virtual ~GroupLogProb() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t num_parameters() const = 0;
  virtual double log_prob(std::size_t i) const = 0;
  /// grad += scale * d logp_i / d params
  virtual void accumulate_log_prob_gradient(std::size_t i, double scale, std::span<double> grad) const = 0;
  /// grad += sum_i weights[i] * d logp_i / d params
  virtual void accumulate_weighted_gradient(std::span<const double> weights, std::span<double> grad) const;
};

/// Replaces group.logp_current with the policy's log-probs.
Group with_current_log_probs(const Group& group, const GroupLogProb& policy);

/// grad += d J / d params. Current log-probs are taken from `policy`.
void grpo_gradient(const Group& group, const GroupLogProb& policy, const GrpoConfig& cfg, std::span<double> grad);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

struct StepDiagnostics {
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_frac = 0.0;
  double objective = 0.0;
  double learning_rate = 0.0;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  NonFiniteGradientError(std::size_t group_index, const std::string& what)
      : std::runtime_error(what), group_index_(group_index) {}
  std::size_t group_index() const { return group_index_; }

 private:
  std::size_t group_index_;
};

struct GroupBatchItem {
  const Group* group = nullptr;
  const GroupLogProb* policy = nullptr;
};

/// One Adam ascent step on the batch-mean objective at learning rate `lr`.
/// Throws NonFiniteGradientError (parameters untouched) if any group yields a non-finite gradient.
StepDiagnostics step(std::span<double> parameters, std::span<const GroupBatchItem> batch, const GrpoConfig& cfg,
                     AdamState& state, double lr);

/// Adam ascent update shared by the GRPO step and supervised warm start.
void adam_ascent(std::span<double> parameters, std::span<const double> grad, const GrpoConfig& cfg, AdamState& state,
                 double lr);

}  // namespace sofake
