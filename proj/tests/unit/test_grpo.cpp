#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sofake/grpo.hpp"
#include "support/oracles.hpp"
#include "support/softmax_policy.hpp"

using namespace sofake;

namespace {

// Two-action policy with logits [theta, 0]; the group holds action 0 then action 1.
double two_action_logp(double theta, int action) { return (action == 0 ? theta : 0.0) - std::log(std::exp(theta) + 1.0); }

Group two_action_group(double theta, double theta_behavior, double theta_ref, std::vector<double> rewards) {
  Group g;
  g.rewards = std::move(rewards);
  for (int a : {0, 1}) {
    g.logp_current.push_back(two_action_logp(theta, a));
    g.logp_behavior.push_back(two_action_logp(theta_behavior, a));
    g.logp_ref.push_back(two_action_logp(theta_ref, a));
  }
  return g;
}

std::vector<double> numbers(Rng& rng, std::size_t n, double sd) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, sd);
  return v;
}

}  // namespace

TEST_SUITE("grpo") {

TEST_CASE("advantage examples") {
  const std::vector<double> r{1, 2, 3};
  const auto a = group_advantages(r);
  CHECK(a[0] == doctest::Approx(-1.22474).epsilon(1e-5));
  CHECK(a[1] == doctest::Approx(0.0));
  CHECK(a[2] == doctest::Approx(1.22474).epsilon(1e-5));

  for (double v : group_advantages(std::vector<double>{5, 5, 5, 5})) CHECK(v == 0.0);

  const auto two = group_advantages(std::vector<double>{8.3, 0.1});
  CHECK(two[0] < 1.0);
  CHECK(two[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(two[1] == -two[0]);

  CHECK_THROWS_AS(group_advantages(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("property: advantages are centred, unit-scale and match a long-double oracle") {
  Rng rng(5);
  for (int n = 0; n < 500; ++n) {
    const auto G = static_cast<std::size_t>(rng.uniform_int(2, 32));
    std::vector<double> r(G);
    for (double& x : r) x = std::round(rng.uniform() * 83.0) / 10.0;
    const auto a = group_advantages(r);
    const auto o = oracle::advantages(r, 1e-6);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < G; ++i) {
      CHECK(a[i] == doctest::Approx(static_cast<double>(o[i])).epsilon(1e-12));
      sum += a[i];
      sq += a[i] * a[i];
    }
    CHECK(std::abs(sum) < 1e-9);
    const bool constant = std::all_of(r.begin(), r.end(), [&](double v) { return v == r[0]; });
    if (!constant) CHECK(std::sqrt(sq / static_cast<double>(G)) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("kl estimate") {
  CHECK(kl_estimate(-1.3, -1.3) == 0.0);
  Rng rng(9);
  for (int n = 0; n < 1000; ++n) CHECK(kl_estimate(rng.normal(), rng.normal()) >= 0.0);
  // exp(0.5) - 0.5 - 1
  CHECK(kl_estimate(-1.0, -0.5) == doctest::Approx(std::exp(0.5) - 1.5));
}

TEST_CASE("objective examples") {
  GrpoConfig cfg;
  Group same = two_action_group(0.3, 0.3, 0.3, {2.0, 2.0});
  CHECK(grpo_objective(same, cfg) == 0.0);

  cfg.kl_coeff = 0.0;
  CHECK(grpo_objective(two_action_group(0.3, 0.3, 1.0, {1.0, 0.0}), cfg) == doctest::Approx(0.0).epsilon(1e-12));

  // Hand evaluation: rho = (1.094220, 0.895871) inside the clip range, A = (+1, -1) up to eps,
  // KL = (0.031546, 0.090869); J = (1.094220 - 0.895871) / 2 - 0.04 * 0.061208 = 0.096726.
  cfg = {};
  CHECK(grpo_objective(two_action_group(0.3, 0.1, 1.0, {1.0, 0.0}), cfg) == doctest::Approx(0.096726).epsilon(1e-5));

  // A ratio beyond 1 + eps with positive advantage is clipped.
  const auto terms = grpo_objective_terms(two_action_group(2.0, 0.0, 2.0, {1.0, 0.0}), cfg);
  CHECK(terms.clipped >= 1);
  CHECK(terms.logp_weights[0] == 0.0);
}

TEST_CASE("property: objective matches a long-double oracle") {
  Rng rng(17);
  GrpoConfig cfg;
  for (int n = 0; n < 300; ++n) {
    const auto G = static_cast<std::size_t>(rng.uniform_int(2, 16));
    Group g;
    g.rewards = numbers(rng, G, 2.0);
    g.logp_current = numbers(rng, G, 1.0);
    g.logp_behavior = g.logp_current;
    g.logp_ref = g.logp_current;
    for (std::size_t i = 0; i < G; ++i) {
      g.logp_current[i] -= 2.0;
      g.logp_behavior[i] += rng.normal(-2.0, 0.3);
      g.logp_ref[i] += rng.normal(-2.0, 0.5);
    }
    cfg.clip_eps = 0.05 + 0.4 * rng.uniform();
    cfg.kl_coeff = 0.2 * rng.uniform();
    const double want = static_cast<double>(
        oracle::objective(g.rewards, g.logp_current, g.logp_behavior, g.logp_ref, cfg.clip_eps, cfg.kl_coeff, 1e-6));
    CHECK(grpo_objective(g, cfg) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("gradient of a symmetric softmax") {
  // logits [0, 0], sampled action 0: d log pi / d logits = [0.5, -0.5]
  std::vector<double> w{0.0, 0.0};
  testpol::SoftmaxSequenceGroup g(w, 2, 1, {{testpol::Step{{1.0}, 0}}});
  std::vector<double> grad(2, 0.0);
  g.accumulate_log_prob_gradient(0, 1.0, grad);
  CHECK(grad[0] == doctest::Approx(0.5));
  CHECK(grad[1] == doctest::Approx(-0.5));
}

TEST_CASE("property: grpo_gradient matches central finite differences") {
  Rng rng(23);
  double worst = 0.0;
  for (int n = 0; n < 40; ++n) {
    const int A = static_cast<int>(rng.uniform_int(2, 5)), D = static_cast<int>(rng.uniform_int(1, 4));
    const int G = static_cast<int>(rng.uniform_int(2, 8));
    std::vector<double> w = numbers(rng, static_cast<std::size_t>(A * D), 0.5);
    testpol::SoftmaxSequenceGroup view(w, A, D, testpol::random_completions(rng, G, A, D, 3));
    GrpoConfig cfg;
    cfg.kl_coeff = 0.1 * rng.uniform();
    Group g;
    g.rewards = numbers(rng, static_cast<std::size_t>(G), 1.0);
    for (int i = 0; i < G; ++i) {
      const double lp = view.log_prob(static_cast<std::size_t>(i));
      g.logp_current.push_back(lp);
      g.logp_behavior.push_back(lp + rng.normal(0.0, 0.1));
      g.logp_ref.push_back(lp + rng.normal(0.0, 0.3));
    }
    std::vector<double> grad(w.size(), 0.0);
    grpo_gradient(g, view, cfg, grad);
    const auto fd = oracle::finite_difference(
        [&](const std::vector<double>& x) {
          const std::vector<double> keep = w;
          w = x;
          const double j = grpo_objective(with_current_log_probs(g, view), cfg);
          w = keep;
          return j;
        },
        w, 1e-5);
    for (std::size_t k = 0; k < w.size(); ++k) {
      worst = std::max(worst, std::abs(grad[k] - fd[k]) / std::max({std::abs(grad[k]), std::abs(fd[k]), 1e-6}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("zero advantages and no KL give a zero gradient") {
  std::vector<double> w{0.3, -0.2, 0.1, 0.7};
  Rng rng(1);
  testpol::SoftmaxSequenceGroup view(w, 2, 2, testpol::random_completions(rng, 4, 2, 2, 2));
  Group g;
  g.rewards = {1, 1, 1, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    g.logp_current.push_back(view.log_prob(i));
    g.logp_behavior.push_back(view.log_prob(i) - 0.05);
    g.logp_ref.push_back(view.log_prob(i) + 0.4);
  }
  GrpoConfig cfg;
  cfg.kl_coeff = 0.0;
  std::vector<double> grad(4, 0.0);
  grpo_gradient(g, view, cfg, grad);
  for (double v : grad) CHECK(v == 0.0);
}

TEST_CASE("step raises the log-prob of the positively rewarded completion") {
  std::vector<double> theta{0.0};
  // Single parameter: logit of action 0 is theta, action 1 is fixed at 0.
  struct TwoAction final : GroupLogProb {
    const std::vector<double>& p;
    explicit TwoAction(const std::vector<double>& params) : p(params) {}
    std::size_t size() const override { return 2; }
    std::size_t num_parameters() const override { return 1; }
    double log_prob(std::size_t i) const override { return two_action_logp(p[0], static_cast<int>(i)); }
    void accumulate_log_prob_gradient(std::size_t i, double scale, std::span<double> grad) const override {
      const double p0 = 1.0 / (1.0 + std::exp(-p[0]));
      grad[0] += scale * ((i == 0 ? 1.0 : 0.0) - p0);
    }
  } view(theta);
  Group g = two_action_group(0.0, 0.0, 0.0, {0.0, 1.0});
  GrpoConfig cfg;
  cfg.kl_coeff = 0.0;
  AdamState adam;
  const double before = view.log_prob(1);
  const GroupBatchItem item{&g, &view};
  const auto d = step(theta, std::span(&item, 1), cfg, adam, 0.05);
  CHECK(view.log_prob(1) > before);
  CHECK(d.mean_reward == doctest::Approx(0.5));
  CHECK(d.clip_frac == 0.0);

  std::vector<double> frozen{0.4};
  TwoAction frozen_view(frozen);
  Group h = two_action_group(0.4, 0.4, 0.4, {0.0, 1.0});
  const GroupBatchItem item2{&h, &frozen_view};
  AdamState adam2;
  step(frozen, std::span(&item2, 1), cfg, adam2, 0.0);
  CHECK(frozen[0] == 0.4);
}

TEST_CASE("constant rewards with the policy equal to the reference leave parameters unchanged") {
  std::vector<double> w{0.3, -0.2, 0.1, 0.7};
  Rng rng(4);
  testpol::SoftmaxSequenceGroup view(w, 2, 2, testpol::random_completions(rng, 3, 2, 2, 2));
  Group g;
  g.rewards = {2, 2, 2};
  for (std::size_t i = 0; i < 3; ++i) {
    g.logp_current.push_back(view.log_prob(i));
    g.logp_behavior.push_back(view.log_prob(i));
    g.logp_ref.push_back(view.log_prob(i));
  }
  const auto keep = w;
  AdamState adam;
  const GroupBatchItem item{&g, &view};
  const auto d = step(w, std::span(&item, 1), GrpoConfig{}, adam, 0.1);
  CHECK(w == keep);
  CHECK(d.mean_kl == 0.0);
}

TEST_CASE("non-finite gradients are reported without touching parameters") {
  struct Broken final : GroupLogProb {
    std::size_t size() const override { return 2; }
    std::size_t num_parameters() const override { return 1; }
    double log_prob(std::size_t) const override { return -1.0; }
    void accumulate_log_prob_gradient(std::size_t, double, std::span<double> grad) const override {
      grad[0] = std::numeric_limits<double>::quiet_NaN();
    }
  } view;
  std::vector<double> w{1.0};
  Group g{{0.0, 1.0}, {-1.0, -1.0}, {-1.0, -1.0}, {-1.0, -1.0}};
  AdamState adam;
  const GroupBatchItem item{&g, &view};
  CHECK_THROWS_AS(step(w, std::span(&item, 1), GrpoConfig{}, adam, 0.1), NonFiniteGradientError);
  CHECK(w[0] == 1.0);
}

TEST_CASE("config and group validation") {
  GrpoConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.group_size = 1;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.clip_eps = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.kl_coeff = -0.1;
  CHECK_THROWS(cfg.validate());

  Group g{{1.0}, {0.0}, {0.0}, {0.0}};
  CHECK_THROWS(g.validate());
  Group h{{1.0, 2.0}, {0.0, std::nan("")}, {0.0, 0.0}, {0.0, 0.0}};
  CHECK_THROWS(h.validate());
}

TEST_CASE("learning-rate schedule: linear warmup then constant") {
  GrpoConfig cfg;
  cfg.steps = 1000;
  cfg.learning_rate = 0.01;
  CHECK(cfg.learning_rate_at(0) == doctest::Approx(0.01 / 50));
  CHECK(cfg.learning_rate_at(49) == doctest::Approx(0.01));
  CHECK(cfg.learning_rate_at(999) == doctest::Approx(0.01));
  cfg.schedule = LrSchedule::Cosine;
  CHECK(cfg.learning_rate_at(999) < 0.0001);
  cfg.schedule = LrSchedule::Linear;
  CHECK(cfg.learning_rate_at(999) < cfg.learning_rate_at(500));
}

}  // TEST_SUITE
