// Acceptance criteria, one PASS/FAIL line each. Exit status is the number of failures.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sofake/evalkit.hpp"
#include "sofake/rewards.hpp"
#include "sofake/scoring.hpp"
#include "sofake/service.hpp"
#include "sofake/toyworld.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/softmax_policy.hpp"

using namespace sofake;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("FAILED " + what);
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void run(int id, const char* name, const std::function<Verdict()>& body) {
  Verdict v;
  const auto t0 = Clock::now();
  try {
    v = body();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail += std::string("exception: ") + e.what();
  }
  if (!v.pass) ++failures;
  std::printf("[%s] %2d %s (%.2fs): %s\n", v.pass ? "PASS" : "FAIL", id, name, seconds_since(t0), v.detail.c_str());
  std::fflush(stdout);
}

const ClassMix kUniform{1.0 / 3, 1.0 / 3, 1.0 / 3};

// ---------------------------------------------------------------- 1

Verdict reward_oracle() {
  Verdict v;
  Rng rng(1);
  std::vector<std::pair<std::string, GroundTruth>> pairs;
  for (int n = 0; n < 1000; ++n) {
    GroundTruth gt = gen::ground_truth(rng);
    pairs.emplace_back(gen::completion(rng, gt), std::move(gt));
  }
  std::vector<RewardBreakdown> got;
  const auto t0 = Clock::now();
  for (const auto& [c, gt] : pairs) got.push_back(score(c, gt));
  const double elapsed = seconds_since(t0);

  int mismatches = 0, tampered_hits = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto o = oracle::score(pairs[i].first, pairs[i].second.label, pairs[i].second.box);
    mismatches += got[i].total != o.total;
    tampered_hits += o.iou == 3;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " totals differ from the brute-force scorer");
  v.note("1000 pairs, " + std::to_string(mismatches) + " mismatches, " + std::to_string(tampered_hits) + " with IoU > 0.5");

  const GroundTruth tampered{Label::Tampered, BBox{10, 20, 110, 220}};
  const double a = score("<think>t</think><answer>TAMPERED,<|box_start|>(10, 20), (110, 220)<|box_end|>.</answer>", tampered).total;
  const double b = score("<think>fine</think><answer>REAL</answer>", GroundTruth{Label::Real, std::nullopt}).total;
  const double c = score("<think>fine</think><answer>REAL</answer>", tampered).total;
  v.require(std::abs(a - 8.3) < 1e-12 && std::abs(b - 2.8) < 1e-12 && std::abs(c - 0.1) < 1e-12, "worked totals");
  v.note("worked totals " + fmt("%.10g", a) + " / " + fmt("%.10g", b) + " / " + fmt("%.10g", c));
  v.require(elapsed < 1.0, "runtime");
  v.note("scoring time " + fmt("%.4f", elapsed) + " s");
  return v;
}

// ---------------------------------------------------------------- 2

Verdict advantage_normalization() {
  // std(A) is exactly s / (s + eps) for population std s, so the unit-std bound needs s >~ 1e-3. Reward totals
  // live on a 0.1 grid; groups here are drawn on a finer 0.01 grid. A second, unquantized family checks the exact
  // s / (s + eps) identity down to tiny spreads.
  Verdict v;
  Rng rng(2);
  const std::vector<double> levels{0.0, 0.1, 1.0, 2.8, 3.7, 8.3};
  double worst_sum = 0.0, worst_std = 0.0, worst_identity = 0.0;
  int constant = 0;
  const auto moments = [](const std::vector<double>& x, double& mean, double& sd) {
    long double m = 0, q = 0;
    for (double y : x) m += y;
    m /= static_cast<long double>(x.size());
    for (double y : x) q += (y - m) * (y - m);
    mean = static_cast<double>(m);
    sd = static_cast<double>(std::sqrt(q / static_cast<long double>(x.size())));
  };
  for (int n = 0; n < 10000; ++n) {
    const auto G = static_cast<std::size_t>(rng.uniform_int(2, 32));
    std::vector<double> r(G);
    const int kind = static_cast<int>(rng.uniform_int(0, 2));
    const double scale = std::pow(10.0, static_cast<double>(rng.uniform_int(-1, 3)));
    for (double& x : r) {
      if (kind == 0) x = std::round(rng.normal(0.0, scale) * 100.0) / 100.0;
      else if (kind == 1) x = levels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(levels.size()) - 1))];
      else x = levels[static_cast<std::size_t>(rng.uniform_int(0, 1))];
    }
    const auto a = group_advantages(r);
    double sum = 0.0, mean = 0.0, sd = 0.0, rs = 0.0;
    for (double x : a) sum += x;
    moments(a, mean, sd);
    moments(r, mean, rs);
    worst_sum = std::max(worst_sum, std::abs(sum));
    if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) {
      ++constant;
      continue;
    }
    worst_std = std::max(worst_std, std::abs(sd - 1.0));
  }
  for (int n = 0; n < 10000; ++n) {
    const auto G = static_cast<std::size_t>(rng.uniform_int(2, 32));
    std::vector<double> r(G);
    const double scale = std::pow(10.0, static_cast<double>(rng.uniform_int(-7, 3)));
    for (double& x : r) x = rng.normal(0.0, scale);
    const auto a = group_advantages(r);
    double sum = 0.0, mean = 0.0, sd = 0.0, rs = 0.0;
    for (double x : a) sum += x;
    moments(a, mean, sd);
    moments(r, mean, rs);
    worst_sum = std::max(worst_sum, std::abs(sum));
    worst_identity = std::max(worst_identity, std::abs(sd - rs / (rs + 1e-6)));
  }
  v.require(worst_sum < 1e-9, "advantage sums");
  v.require(worst_std < 1e-3, "advantage std");
  v.require(worst_identity < 1e-9, "std identity");
  v.note("20000 groups, G in [2, 32]: max |sum A| " + fmt("%.3g", worst_sum) + "; 0.01-grid groups: max |std - 1| " +
         fmt("%.3g", worst_std) + " (" + std::to_string(constant) + " constant groups skipped); unquantized groups: max |std - s/(s+eps)| " +
         fmt("%.3g", worst_identity));
  const auto e = group_advantages(std::vector<double>{1, 2, 3});
  const bool ok = std::abs(e[0] + 1.2247) < 1e-4 && std::abs(e[1]) < 1e-4 && std::abs(e[2] - 1.2247) < 1e-4;
  v.require(ok, "[1,2,3] example");
  v.note("[1,2,3] -> [" + fmt("%.6f", e[0]) + ", " + fmt("%.6f", e[1]) + ", " + fmt("%.6f", e[2]) + "]");
  return v;
}

// ---------------------------------------------------------------- 3

struct GradCase {
  std::function<double(const std::vector<double>&)> objective;
  std::vector<double> analytic;
  std::vector<double> at;
};

double max_relative_error(const GradCase& c) {
  const auto fd = oracle::finite_difference(c.objective, c.at, 1e-5);
  double worst = 0.0;
  for (std::size_t k = 0; k < fd.size(); ++k) {
    worst = std::max(worst, std::abs(c.analytic[k] - fd[k]) / std::max({std::abs(c.analytic[k]), std::abs(fd[k]), 1e-6}));
  }
  return worst;
}

/// Keeps every ratio at least 1e-3 away from the clip kinks, where central differences straddle two branches.
bool away_from_kinks(const Group& g, double clip) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double rho = std::exp(g.logp_current[i] - g.logp_behavior[i]);
    if (std::abs(rho - (1.0 - clip)) < 1e-3 || std::abs(rho - (1.0 + clip)) < 1e-3) return false;
  }
  return true;
}

Verdict gradient_check() {
  Verdict v;
  Rng rng(3);
  double worst = 0.0;
  int cases = 0, clipped = 0;

  // Linear-softmax sequence policies.
  while (cases < 80) {
    const int A = static_cast<int>(rng.uniform_int(2, 6)), D = static_cast<int>(rng.uniform_int(1, 5));
    const int G = static_cast<int>(rng.uniform_int(2, 12));
    std::vector<double> w(static_cast<std::size_t>(A * D));
    for (double& x : w) x = rng.normal(0.0, 0.7);
    testpol::SoftmaxSequenceGroup view(w, A, D, testpol::random_completions(rng, G, A, D, 4));
    GrpoConfig cfg;
    cfg.clip_eps = 0.05 + 0.35 * rng.uniform();
    cfg.kl_coeff = 0.2 * rng.uniform();
    Group g;
    for (int i = 0; i < G; ++i) {
      const double lp = view.log_prob(static_cast<std::size_t>(i));
      g.rewards.push_back(std::round(rng.uniform() * 83.0) / 10.0);
      g.logp_current.push_back(lp);
      g.logp_behavior.push_back(lp + rng.normal(0.0, 0.25));
      g.logp_ref.push_back(lp + rng.normal(0.0, 0.5));
    }
    if (!away_from_kinks(g, cfg.clip_eps)) continue;
    clipped += grpo_objective_terms(g, cfg).clipped > 0;
    std::vector<double> grad(w.size(), 0.0);
    grpo_gradient(g, view, cfg, grad);
    const GradCase c{[&](const std::vector<double>& x) {
                       const auto keep = w;
                       w = x;
                       const double j = grpo_objective(with_current_log_probs(g, view), cfg);
                       w = keep;
                       return j;
                     },
                     grad, w};
    worst = std::max(worst, max_relative_error(c));
    ++cases;
  }

  // The toy policy itself, on a reduced head size so every parameter is differenced.
  ToyConfig tc;
  tc.bins = 5;
  tc.feature_dim = 8;
  tc.templates = 3;
  const auto scenes = generate_scenes(40, kUniform, 33, tc);
  int toy_cases = 0;
  for (const auto& scene : scenes) {
    ToyPolicy policy(tc, combine_seed(3, static_cast<std::uint64_t>(toy_cases)));
    for (double& p : policy.parameters()) p *= 40.0;
    ToyPolicy reference = policy;
    for (double& p : reference.parameters()) p += rng.normal(0.0, 0.2);
    const ToySample s = make_samples(std::span(&scene, 1), policy, 4)[0];
    GrpoConfig cfg;
    cfg.clip_eps = 0.1 + 0.2 * rng.uniform();
    cfg.kl_coeff = 0.1 * rng.uniform();
    auto sg = sample_group(policy, reference, s, static_cast<int>(rng.uniform_int(2, 8)), rng);
    for (double& lb : sg.group.logp_behavior) lb += rng.normal(0.0, 0.2);
    if (!away_from_kinks(sg.group, cfg.clip_eps)) continue;
    std::vector<double> grad(policy.num_parameters(), 0.0);
    grpo_gradient(sg.group, ToyGroupView(policy, s.phi, sg.actions), cfg, grad);
    const GradCase c{[&](const std::vector<double>& x) {
                       ToyPolicy moved = policy;
                       moved.parameters() = x;
                       return grpo_objective(with_current_log_probs(sg.group, ToyGroupView(moved, s.phi, sg.actions)), cfg);
                     },
                     grad, policy.parameters()};
    worst = std::max(worst, max_relative_error(c));
    ++toy_cases;
  }
  v.require(worst < 1e-4, "relative error");
  v.require(cases + toy_cases >= 100, "case count");
  v.note(std::to_string(cases) + " softmax + " + std::to_string(toy_cases) + " toy-policy configs (" +
         std::to_string(clipped) + " with clipping active), max relative error " + fmt("%.3g", worst) +
         " (denominator floor 1e-6)");
  return v;
}

// ---------------------------------------------------------------- 4-6, 9 share one training setup

struct ToyRun {
  std::vector<ToySample> train, heldout;
  std::vector<Scene> heldout_scenes;
  ToyPolicy warm{ToyConfig{}, 0};
  ToyPolicy trained{ToyConfig{}, 0};
  PolicyEvaluation warm_eval, final_eval, step500_eval;
  double seconds = 0.0;
};

constexpr std::uint64_t kEvalSeed = 99;

ToyRun& toy_run() {
  static ToyRun r = [] {
    ToyRun run;
    const auto t0 = Clock::now();
    const ToyConfig cfg;
    const auto train_scenes = generate_scenes(1000, kUniform, 11, cfg, "train");
    run.heldout_scenes = generate_scenes(500, kUniform, 12, cfg, "heldout");
    ToyPolicy policy(cfg, 1);
    run.train = make_samples(train_scenes, policy, 21);
    run.heldout = make_samples(run.heldout_scenes, policy, 22);
    warm_start(policy, run.train, WarmStartConfig::from(cfg), 3);
    run.warm = policy;
    ToyPolicy at500 = policy;
    const GrpoConfig gcfg;
    train(policy, run.train, run.heldout, gcfg, RewardConfig{}, 5,
          [&](int step, const StepDiagnostics&, const std::optional<CurvePoint>&) {
            if (step == 500) at500 = policy;
          });
    run.trained = policy;
    run.seconds = seconds_since(t0);
    run.warm_eval = evaluate_policy(run.warm, run.heldout, cfg.eval_samples, kEvalSeed);
    run.step500_eval = evaluate_policy(at500, run.heldout, cfg.eval_samples, kEvalSeed);
    run.final_eval = evaluate_policy(run.trained, run.heldout, cfg.eval_samples, kEvalSeed);
    return run;
  }();
  return r;
}

Verdict end_to_end() {
  Verdict v;
  ToyRun& run = toy_run();
  const auto& f = run.final_eval;
  v.require(f.accuracy >= 0.90, "held-out accuracy");
  v.require(f.mean_iou >= 0.5, "held-out mean IoU");
  v.require(f.accuracy >= run.step500_eval.accuracy, "accuracy at 5000 >= accuracy at 500");
  v.require(run.seconds < 300.0, "runtime");

  // Replay from scratch: same seeds, same parameters.
  const ToyConfig cfg;
  ToyPolicy replay(cfg, 1);
  warm_start(replay, run.train, WarmStartConfig::from(cfg), 3);
  const bool warm_same = replay.parameters() == run.warm.parameters();
  train(replay, run.train, run.heldout, GrpoConfig{}, RewardConfig{}, 5);
  v.require(warm_same && replay.parameters() == run.trained.parameters(), "deterministic replay");

  v.note("warm start 200 steps + 5000 GRPO steps, G = 8 on 1000 scenes; held-out 500 scenes: accuracy " +
         fmt("%.4f", f.accuracy) + ", mean IoU " + fmt("%.4f", f.mean_iou) + "; accuracy at step 500 " +
         fmt("%.4f", run.step500_eval.accuracy) + "; training " + fmt("%.1f", run.seconds) + " s; replay identical: " +
         (warm_same && replay.parameters() == run.trained.parameters() ? "yes" : "no"));
  return v;
}

Verdict warm_start_ablation() {
  Verdict v;
  ToyRun& run = toy_run();
  const ToyConfig cfg;
  ToyPolicy scratch(cfg, 1);
  GrpoConfig gcfg;
  gcfg.steps += cfg.warm_steps;  // same number of optimizer updates as warm start + GRPO
  train(scratch, run.train, run.heldout, gcfg, RewardConfig{}, 5);
  const auto s = evaluate_policy(scratch, run.heldout, cfg.eval_samples, kEvalSeed);
  v.require(s.accuracy < run.final_eval.accuracy, "scratch accuracy below warm + GRPO");
  v.require(run.warm_eval.mean_iou < run.final_eval.mean_iou, "warm-only IoU below warm + GRPO");
  v.note("GRPO from scratch (" + std::to_string(gcfg.steps) + " steps) accuracy " + fmt("%.4f", s.accuracy) +
         " vs warm + GRPO " + fmt("%.4f", run.final_eval.accuracy) + "; warm-only IoU " + fmt("%.4f", run.warm_eval.mean_iou) +
         " vs warm + GRPO " + fmt("%.4f", run.final_eval.mean_iou));
  return v;
}

Verdict box_reward_ablation() {
  Verdict v;
  ToyRun& run = toy_run();
  const ToyConfig cfg;
  ToyPolicy policy = run.warm;
  RewardConfig rc;
  rc.w_iou = 0.0;
  rc.w_l1 = 0.0;
  train(policy, run.train, run.heldout, GrpoConfig{}, rc, 5);
  const auto z = evaluate_policy(policy, run.heldout, cfg.eval_samples, kEvalSeed);
  const double diff = std::abs(z.accuracy - run.final_eval.accuracy);
  v.require(z.mean_iou < 0.3, "IoU without box rewards");
  v.require(diff < 0.03, "accuracy change");
  v.note("zeroed IoU/L1 weights: mean IoU " + fmt("%.4f", z.mean_iou) + ", accuracy " + fmt("%.4f", z.accuracy) +
         " (|change| " + fmt("%.4f", diff) + ")");
  return v;
}

// ---------------------------------------------------------------- 7

Verdict metric_oracles() {
  Verdict v;
  Rng rng(7);
  int det_bad = 0;
  for (int n = 0; n < 1000; ++n) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(1, 60));
    std::vector<int> pi(len), gi(len);
    std::vector<std::optional<Label>> p(len);
    std::vector<Label> g(len);
    // skewed mixes so empty classes occur
    const int top = static_cast<int>(rng.uniform_int(0, 2));
    for (std::size_t i = 0; i < len; ++i) {
      gi[i] = static_cast<int>(rng.uniform_int(0, top));
      pi[i] = static_cast<int>(rng.uniform_int(-1, 2));
      g[i] = kAllLabels[static_cast<std::size_t>(gi[i])];
      if (pi[i] >= 0) p[i] = kAllLabels[static_cast<std::size_t>(pi[i])];
    }
    const auto m = detection_metrics(p, g);
    const auto o = oracle::recount(pi, gi);
    bool same = m.accuracy == o.accuracy && m.binary_accuracy == o.binary_accuracy &&
                std::abs(m.macro_f1 - o.macro_f1) < 1e-12;
    for (std::size_t c = 0; c < 3; ++c) {
      same = same && m.per_class[c].support == o.support[c] && m.per_class[c].predicted == o.predicted[c] &&
             std::abs(m.per_class[c].f1 - o.f1[c]) < 1e-12;
    }
    det_bad += !same;
  }
  int lcs_bad = 0;
  for (int n = 0; n < 1000; ++n) {
    std::vector<std::string> a, b;
    const int vocab = static_cast<int>(rng.uniform_int(1, 8));
    for (long long k = rng.uniform_int(0, 25); k > 0; --k) a.push_back("t" + std::to_string(rng.uniform_int(0, vocab)));
    for (long long k = rng.uniform_int(0, 25); k > 0; --k) b.push_back("t" + std::to_string(rng.uniform_int(0, vocab)));
    std::string ra, rb;
    for (const auto& t : a) ra += t + " ";
    for (const auto& t : b) rb += t + " ";
    const auto r = rouge_l(ra, rb);
    const double l = static_cast<double>(oracle::lcs(a, b));
    const double p = b.empty() ? 0.0 : l / b.size(), rc = a.empty() ? 0.0 : l / a.size();
    const double f = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
    lcs_bad += lcs_length(a, b) != oracle::lcs(a, b) || std::abs(r.f - f) > 1e-12 || std::abs(r.precision - p) > 1e-12 ||
               std::abs(r.recall - rc) > 1e-12;
  }
  v.require(det_bad == 0, "detection recount");
  v.require(lcs_bad == 0, "ROUGE-L oracle");

  std::vector<std::optional<Label>> p;
  std::vector<Label> g;
  const auto add = [&](Label gt, Label pred, int n) {
    for (int i = 0; i < n; ++i) g.push_back(gt), p.push_back(pred);
  };
  add(Label::Real, Label::Real, 8);
  add(Label::Real, Label::Tampered, 2);
  add(Label::Tampered, Label::Tampered, 10);
  add(Label::FullSynthetic, Label::FullSynthetic, 10);
  const auto m = detection_metrics(p, g);
  const double rf = rouge_l("a b c d", "a c d").f;
  v.require(std::abs(m.accuracy - 0.9333) < 5e-5 && std::abs(m.per_class[0].f1 - 0.8889) < 5e-5, "worked confusion case");
  v.require(std::abs(rf - 0.8571) < 5e-5, "worked ROUGE-L case");
  v.note("1000 detection cases, " + std::to_string(det_bad) + " mismatches; 1000 LCS cases, " + std::to_string(lcs_bad) +
         " mismatches; worked accuracy " + fmt("%.4f", m.accuracy) + ", REAL F1 " + fmt("%.4f", m.per_class[0].f1) +
         ", ROUGE-L F " + fmt("%.4f", rf));
  return v;
}

// ---------------------------------------------------------------- 8

std::string fuzz_string(Rng& rng) {
  static const std::vector<std::string> tokens = {
      "<think>", "</think>", "<answer>", "</answer>", "<|box_start|>", "<|box_end|>", "(", ")", ",", " ", "\n", ".",
      "REAL", "TAMPERED", "FULL_SYNTHETIC", "0", "10", "224", "99999999999999999999", "-5", "<", ">", "|", "\xC3\xA9",
      "<think", "answer>", "<|box_", "\t", "1e3", "TAMPERED,", "REAL_"};
  static const std::string valid = "<think>t</think><answer>TAMPERED,<|box_start|>(10, 20), (110, 220)<|box_end|>.</answer>";
  std::string s;
  switch (rng.uniform_int(0, 3)) {
    case 0: {  // random bytes, including NUL and high bytes
      for (long long n = rng.uniform_int(0, 200); n > 0; --n) s.push_back(static_cast<char>(rng.uniform_int(0, 255)));
      break;
    }
    case 1: {  // token soup
      for (long long n = rng.uniform_int(0, 60); n > 0; --n) s += tokens[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(tokens.size()) - 1))];
      break;
    }
    case 2: {  // mutated valid completion
      s = valid;
      for (long long n = rng.uniform_int(1, 6); n > 0; --n) {
        const auto pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(s.size())));
        switch (rng.uniform_int(0, 2)) {
          case 0: s.insert(pos, tokens[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(tokens.size()) - 1))]); break;
          case 1: s.erase(pos, static_cast<std::size_t>(rng.uniform_int(1, 8))); break;
          default: if (pos < s.size()) s[pos] = static_cast<char>(rng.uniform_int(0, 255)); break;
        }
      }
      break;
    }
    default: {  // deep or long inputs
      const long long reps = rng.uniform_int(1, 2000);
      const std::string& t = tokens[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(tokens.size()) - 1))];
      for (long long k = 0; k < reps; ++k) s += t;
      if (rng.uniform() < 0.5) s = valid + s;
      break;
    }
  }
  return s;
}

Verdict parser_robustness() {
  Verdict v;
  Rng rng(8);
  int aborts = 0, invariant_breaks = 0, shaped = 0;
  for (int n = 0; n < 100000; ++n) {
    const std::string s = fuzz_string(rng);
    try {
      const auto p = parse_completion(s);
      shaped += p.has_think_answer_shape;
      if (!p.answer_text && (p.label || p.box)) ++invariant_breaks;
      if (p.box && !p.box->valid()) ++invariant_breaks;
      if (p.raw_text != s) ++invariant_breaks;
      score_parsed(p, GroundTruth{Label::Tampered, BBox{10, 20, 110, 220}});
    } catch (...) {
      ++aborts;
    }
  }
  int round_trip_bad = 0;
  const std::string alphabet = "abcdefghij KLM 0123456789,.;:!?\n\t()<>|\xC3\xA9\xE2\x9C\x93";
  for (int n = 0; n < 10000; ++n) {
    const Label l = kAllLabels[static_cast<std::size_t>(rng.uniform_int(0, 2))];
    const std::optional<BBox> box = l == Label::Tampered ? std::optional<BBox>(gen::box(rng)) : std::nullopt;
    std::string think;
    for (long long k = rng.uniform_int(0, 80); k > 0; --k) think += alphabet[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(alphabet.size()) - 1))];
    if (think.find('<') != std::string::npos) {
      // skip the rare think text that spells a tag
      try {
        render_completion(l, box, think);
      } catch (const std::invalid_argument&) {
        continue;
      }
    }
    const std::string text = render_completion(l, box, think);
    const auto p = parse_completion(text);
    if (!p.has_think_answer_shape || p.label != l || p.box != box || p.think_text != think) ++round_trip_bad;
  }
  v.require(aborts == 0, "aborts");
  v.require(invariant_breaks == 0, "parse invariants");
  v.require(round_trip_bad == 0, "round trip");
  v.note("100000 fuzz strings: " + std::to_string(aborts) + " aborts, " + std::to_string(invariant_breaks) +
         " invariant breaks, " + std::to_string(shaped) + " well-shaped; 10000 rendered completions: " +
         std::to_string(round_trip_bad) + " round-trip failures");
  return v;
}

// ---------------------------------------------------------------- 9

Verdict perturbation() {
  Verdict v;
  const auto corpus = generate_scenes(60, kUniform, 9);
  bool identical = true;
  for (double var : {5.0, 10.0}) {
    for (const auto& s : corpus) {
      const auto a = perturb(s.raster, PerturbKind::Gaussian, var, record_seed(9, s.id));
      const auto b = perturb(s.raster, PerturbKind::Gaussian, var, record_seed(9, s.id));
      identical = identical && a.image == b.image && !(a.image == s.raster);
    }
  }
  v.require(identical, "gaussian determinism");

  const BBox mapped = box_transform_for(PerturbSpec::parse("resize:0.5"), 224, 224).apply(BBox{10, 20, 110, 220});
  v.require(mapped == BBox{5, 10, 55, 110}, "resize mapping");

  double lo = 1e9, hi = -1e9;
  for (int q : {70, 80}) {
    for (const auto& s : corpus) {
      const double db = psnr(s.raster, perturb(s.raster, PerturbKind::Jpeg, q, 0).image);
      lo = std::min(lo, db);
      hi = std::max(hi, db);
    }
  }
  v.require(lo >= 25.0 && hi <= 45.0, "JPEG PSNR band");

  ToyRun& run = toy_run();
  const ToyConfig cfg;
  const auto noisy = make_perturbed_samples(run.heldout_scenes, run.trained, PerturbSpec::parse("gaussian:10"), 22);
  const auto e = evaluate_policy(run.trained, noisy, cfg.eval_samples, kEvalSeed);
  v.require(e.accuracy <= run.final_eval.accuracy, "gaussian eval not above clean eval");

  v.note(std::string("gaussian var 5/10 bit-identical: ") + (identical ? "yes" : "no") + "; resize 0.5 -> (" +
         std::to_string(mapped.x1) + "," + std::to_string(mapped.y1) + "," + std::to_string(mapped.x2) + "," +
         std::to_string(mapped.y2) + "); JPEG q70/q80 PSNR over 60 scenes in [" + fmt("%.2f", lo) + ", " +
         fmt("%.2f", hi) + "] dB; trained policy accuracy clean " + fmt("%.4f", run.final_eval.accuracy) +
         " vs gaussian var 10 " + fmt("%.4f", e.accuracy) + " (IoU " + fmt("%.4f", run.final_eval.mean_iou) + " vs " +
         fmt("%.4f", e.mean_iou) + ")");
  return v;
}

// ---------------------------------------------------------------- 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict cli_service_parity() {
  Verdict v;
  Rng rng(10);
  json items = json::array();
  std::string jsonl;
  for (int n = 0; n < 64; ++n) {
    const GroundTruth gt = gen::ground_truth(rng);
    json g{{"label", std::string(label_name(gt.label))}};
    if (gt.box) g["box"] = {gt.box->x1, gt.box->y1, gt.box->x2, gt.box->y2};
    json item{{"id", "item-" + std::to_string(n)}, {"completion", gen::completion(rng, gt)}, {"ground_truth", g}};
    jsonl += item.dump() + "\n";
    items.push_back(std::move(item));
  }
  const fs::path dir = fs::temp_directory_path() / "sofake_acceptance_parity";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "batch.jsonl", std::ios::binary) << jsonl;

  httplib::Server server;
  register_routes(server, RewardConfig{});
  const int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) throw std::runtime_error("could not bind a local port");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  bool all_same = true;
  for (bool group : {false, true}) {
    const std::string out = (dir / (group ? "grouped.jsonl" : "plain.jsonl")).string();
    const std::string cmd = std::string(SOFAKE_CLI_PATH) + " score --in " + (dir / "batch.jsonl").string() +
                            (group ? " --group" : "") + " --out " + out;
    const int status = std::system(cmd.c_str());
    v.require(WIFEXITED(status) && WEXITSTATUS(status) == 0, "CLI exit status");
    const std::string cli_text = slurp(out);
    json body{{"items", items}};
    if (group) body["group"] = true;
    const auto res = client.Post("/v1/score?format=jsonl", body.dump(), "application/json");
    const bool same = res && res->status == 200 && res->body == cli_text && !cli_text.empty();
    all_same = all_same && same;
  }
  const auto health = client.Get("/v1/health");
  const bool healthy = health && health->status == 200 && json::parse(health->body)["status"] == "ok";
  server.stop();
  worker.join();
  fs::remove_all(dir);

  v.require(all_same, "byte-identical responses");
  v.require(healthy, "health endpoint");
  v.note(std::string("64-item batch, plain and grouped: ") + (all_same ? "byte-identical" : "different") +
         "; /v1/health " + (healthy ? "ok" : "not ok"));
  return v;
}

}  // namespace

int main() {
  run(1, "reward oracle equivalence", reward_oracle);
  run(2, "advantage normalization", advantage_normalization);
  run(3, "gradient check", gradient_check);
  run(4, "end-to-end toy training", end_to_end);
  run(5, "warm-start ablation", warm_start_ablation);
  run(6, "box-reward ablation", box_reward_ablation);
  run(7, "metric oracles", metric_oracles);
  run(8, "parser robustness", parser_robustness);
  run(9, "perturbation determinism and geometry", perturbation);
  run(10, "CLI/service parity", cli_service_parity);
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
