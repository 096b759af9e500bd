// sofake command-line entry point.
// Exit status: 0 success, 2 usage error, 1 validation or runtime error.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sofake/config.hpp"
#include "sofake/evalkit.hpp"
#include "sofake/scoring.hpp"
#include "sofake/service.hpp"
#include "sofake/toyworld.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace sofake;

namespace {

std::string read_input(const std::string& path) {
  std::ostringstream ss;
  if (path == "-") {
    ss << std::cin.rdbuf();
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    ss << in.rdbuf();
  }
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

ClassMix parse_mix(const std::string& text) {
  ClassMix mix{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw std::invalid_argument("--mix expects three comma-separated weights");
    std::size_t used = 0;
    mix[i] = std::stod(part, &used);
    if (used != part.size() || !(mix[i] >= 0.0)) throw std::invalid_argument("--mix: bad weight '" + part + "'");
    ++i;
  }
  if (i != 3) throw std::invalid_argument("--mix expects three comma-separated weights");
  const double sum = mix[0] + mix[1] + mix[2];
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("--mix weights must sum to 1");
  for (double& m : mix) m /= sum;
  return mix;
}

std::string num(double v) { return json(v).dump(); }

// ------------------------------------------------------------------ subcommands

struct Globals {
  std::string config_path;
  AppConfig cfg;
};

int cmd_gen_scenes(const Globals& g, int n, int val_n, const std::string& mix_text, std::optional<std::uint64_t> seed,
                   std::string out) {
  const ClassMix mix = parse_mix(mix_text);
  const std::uint64_t s = seed.value_or(g.cfg.seed);
  if (out.empty()) out = g.cfg.paths.scenes_dir;
  AppConfig resolved = g.cfg;
  resolved.seed = s;
  const auto train = generate_scenes(n, mix, s, g.cfg.toy, "train");
  auto records = write_scenes(train, out, Split::Train);
  if (val_n > 0) {
    const auto val = generate_scenes(val_n, mix, combine_seed(s, 0x7A1), g.cfg.toy, "val");
    auto val_records = write_scenes(val, out, Split::Val);
    records.insert(records.end(), val_records.begin(), val_records.end());
    write_manifest(fs::path(out) / "manifest.jsonl", records);
  }
  write_resolved_config(out, resolved);
  std::cerr << "wrote " << records.size() << " scenes to " << out << "\n";
  return 0;
}

int cmd_score(const Globals& g, const std::string& in, const std::string& gt, const std::string& out, bool group) {
  const std::string text = read_input(in);
  std::vector<ScoreItem> items;
  if (gt.empty()) {
    items = parse_score_items(text);
  } else {
    const auto manifest = load_manifest(gt);
    items = join_score_items(text, manifest, fs::path(gt).parent_path());
  }
  write_output(out, score_batch_to_jsonl(items, score_batch(items, g.cfg.reward, group)));
  return 0;
}

int cmd_advantages(const Globals& g, const std::string& in, std::optional<int> group_size, const std::string& out) {
  const int G = group_size.value_or(g.cfg.grpo.group_size);
  if (G < 2) throw std::invalid_argument("--group-size must be at least 2");
  std::vector<double> rewards;
  std::istringstream lines(read_input(in));
  std::string row;
  std::size_t line = 0;
  while (std::getline(lines, row)) {
    ++line;
    if (row.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(row);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    const json* v = &j;
    if (j.is_object()) {
      if (j.contains("total")) v = &j["total"];
      else if (j.contains("reward")) v = &j["reward"];
      else throw std::runtime_error("line " + std::to_string(line) + ": expected a 'total' or 'reward' field");
    }
    if (!v->is_number()) throw std::runtime_error("line " + std::to_string(line) + ": reward must be a number");
    rewards.push_back(v->get<double>());
  }
  if (rewards.size() % static_cast<std::size_t>(G) != 0) {
    throw std::runtime_error(std::to_string(rewards.size()) + " rewards do not split into groups of " + std::to_string(G));
  }
  std::string text;
  for (std::size_t start = 0; start < rewards.size(); start += static_cast<std::size_t>(G)) {
    const std::span<const double> grp(rewards.data() + start, static_cast<std::size_t>(G));
    const auto adv = group_advantages(grp, g.cfg.grpo.advantage_eps);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      ordered_json j{{"group", start / static_cast<std::size_t>(G)}, {"index", i}, {"reward", grp[i]}, {"advantage", adv[i]}};
      text += j.dump() + "\n";
    }
  }
  write_output(out, text);
  return 0;
}

int cmd_train_toy(const Globals& g, const std::string& scenes_dir, std::optional<int> steps,
                  std::optional<std::uint64_t> seed, const std::string& out, bool no_warm) {
  AppConfig cfg = g.cfg;
  if (steps) cfg.grpo.steps = *steps;
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const fs::path run(out);
  write_resolved_config(run, cfg);

  const auto scenes = read_scenes(fs::path(scenes_dir) / "manifest.jsonl");
  const auto manifest = load_manifest(fs::path(scenes_dir) / "manifest.jsonl");
  std::vector<Scene> train_scenes, val_scenes;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    (manifest[i].split == Split::Train ? train_scenes : val_scenes).push_back(scenes[i]);
  }
  if (train_scenes.empty()) throw std::runtime_error("no train-split scenes in " + scenes_dir);

  ToyPolicy policy(cfg.toy, combine_seed(cfg.seed, 1));
  const auto train_set = make_samples(train_scenes, policy, combine_seed(cfg.seed, 2));
  const auto probe_set = make_samples(val_scenes.empty() ? train_scenes : val_scenes, policy, combine_seed(cfg.seed, 3));

  std::vector<double> warm_losses;
  if (!no_warm) warm_losses = warm_start(policy, train_set, WarmStartConfig::from(cfg.toy), combine_seed(cfg.seed, 4));

  std::ofstream diag(run / "diagnostics.jsonl", std::ios::binary);
  if (!diag) throw std::runtime_error("cannot write " + (run / "diagnostics.jsonl").string());
  const auto result = train(policy, train_set, probe_set, cfg.grpo, cfg.reward, combine_seed(cfg.seed, 5),
                            [&](int step, const StepDiagnostics& d, const std::optional<CurvePoint>& probe) {
                              ordered_json line{{"step", step},
                                                {"mean_reward", d.mean_reward},
                                                {"mean_kl", d.mean_kl},
                                                {"clip_frac", d.clip_frac},
                                                {"accuracy_on_probe", nullptr},
                                                {"objective", d.objective},
                                                {"learning_rate", d.learning_rate}};
                              if (probe) line["accuracy_on_probe"] = probe->accuracy;
                              diag << line.dump() << '\n';
                            });
  write_curve_csv(run / "curve.csv", result.curve);
  policy.save(run / "policy.json");

  const auto ev = evaluate_policy(policy, probe_set, cfg.toy.eval_samples, combine_seed(cfg.seed, 6), cfg.reward);
  ordered_json summary;
  summary["train_scenes"] = train_set.size();
  summary["probe_scenes"] = probe_set.size();
  summary["warm_start_steps"] = warm_losses.size();
  if (!warm_losses.empty()) {
    summary["warm_start_first_loss"] = warm_losses.front();
    summary["warm_start_last_loss"] = warm_losses.back();
  }
  summary["grpo_steps"] = result.steps.size();
  summary["final"] = ordered_json{{"accuracy", ev.accuracy}, {"mean_iou", ev.mean_iou}, {"mean_reward", ev.mean_reward},
                                  {"draws", ev.draws}};
  write_output((run / "summary.json").string(), summary.dump(2) + "\n");
  std::cout << "accuracy " << num(ev.accuracy) << "  mean_iou " << num(ev.mean_iou) << "  mean_reward "
            << num(ev.mean_reward) << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& manifest_path, const std::string& preds_path,
             const std::string& policy_path, const std::string& perturb_text, std::optional<std::uint64_t> seed,
             const std::string& out) {
  if (preds_path.empty() == policy_path.empty()) throw CLI::ValidationError("eval", "exactly one of --preds or --policy is required");
  const PerturbSpec spec = PerturbSpec::parse(perturb_text);
  const std::uint64_t s = seed.value_or(g.cfg.seed);
  const auto manifest = load_manifest(manifest_path);
  std::vector<Prediction> preds;
  if (!preds_path.empty()) {
    preds = load_predictions(preds_path);
  } else {
    const ToyPolicy policy = ToyPolicy::load(policy_path);
    const auto scenes = read_scenes(manifest_path);
    const auto samples = make_perturbed_samples(scenes, policy, spec, s);
    preds = predict(policy, samples, combine_seed(s, 7));
  }
  ReportOptions opts;
  opts.perturbation = spec;
  opts.seed = s;
  opts.base_dir = fs::path(manifest_path).parent_path();
  const EvalReport rep = report(preds, manifest, opts);
  if (!out.empty()) {
    AppConfig resolved = g.cfg;
    resolved.seed = s;
    write_resolved_config(out, resolved);
    write_output((fs::path(out) / "report.json").string(), report_to_json(rep).dump(2) + "\n");
    write_output((fs::path(out) / "report.txt").string(), report_to_table(rep));
  }
  std::cout << report_to_table(rep);
  return 0;
}

int cmd_serve(const Globals& g, const std::string& bind) {
  std::string host = g.cfg.service.host;
  int port = g.cfg.service.port;
  if (!bind.empty()) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--bind", "expected host:port");
    host = bind.substr(0, colon);
    port = std::stoi(bind.substr(colon + 1));
  }
  std::cerr << "serving on " << host << ":" << port << "\n";
  serve(host, port, g.cfg.reward);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured forgery-detection rewards, GRPO toy training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file (SOFAKE_* environment variables override it)");

  auto* gen = app.add_subcommand("gen-scenes", "Generate toy scenes, masks and a manifest");
  int n = 0, val_n = 0;
  std::string mix = "0.3333333333333333,0.3333333333333334,0.3333333333333333", gen_out;
  std::optional<std::uint64_t> seed;
  gen->add_option("--n", n, "Number of train-split scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--val-n", val_n, "Number of additional val-split scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--mix", mix, "Class weights REAL,TAMPERED,FULL_SYNTHETIC");
  gen->add_option("--seed", seed, "Random seed (default: config seed)");
  gen->add_option("--out", gen_out, "Output directory (default: paths.scenes_dir)");

  auto* sc = app.add_subcommand("score", "Score completions against ground truth");
  std::string sc_in, sc_gt, sc_out;
  bool sc_group = false;
  sc->add_option("--in", sc_in, "JSONL of {completion, ground_truth} or, with --gt, {id, completion}; '-' for stdin")->required();
  sc->add_option("--gt", sc_gt, "Manifest supplying ground truth by id");
  sc->add_option("--out", sc_out, "Output JSONL (default: stdout)");
  sc->add_flag("--group", sc_group, "Also emit group advantages over all item totals");

  auto* adv = app.add_subcommand("advantages", "Group-normalized advantages from rewards");
  std::string adv_in, adv_out;
  std::optional<int> group_size;
  adv->add_option("--in", adv_in, "JSONL of numbers or objects with 'total'/'reward'; '-' for stdin")->required();
  adv->add_option("--group-size", group_size, "Consecutive rewards per group (default: grpo.group_size)");
  adv->add_option("--out", adv_out, "Output JSONL (default: stdout)");

  auto* tt = app.add_subcommand("train-toy", "Warm start and GRPO training on toy scenes");
  std::string tt_scenes, tt_out;
  std::optional<int> tt_steps;
  bool no_warm = false;
  tt->add_option("--scenes", tt_scenes, "Scene directory written by gen-scenes")->required();
  tt->add_option("--steps", tt_steps, "GRPO steps (default: grpo.steps)")->check(CLI::NonNegativeNumber);
  tt->add_option("--seed", seed, "Random seed (default: config seed)");
  tt->add_option("--out", tt_out, "Run directory")->required();
  tt->add_flag("--no-warm-start", no_warm, "Skip the supervised warm start");

  auto* ev = app.add_subcommand("eval", "Evaluate predictions or a toy policy against a manifest");
  std::string ev_manifest, ev_preds, ev_policy, ev_perturb = "none", ev_out;
  ev->add_option("--manifest", ev_manifest, "Ground-truth manifest")->required();
  ev->add_option("--preds", ev_preds, "Predictions JSONL");
  ev->add_option("--policy", ev_policy, "Toy policy snapshot; predictions are sampled from it");
  ev->add_option("--perturb", ev_perturb, "none | jpeg:<q> | resize:<s> | gaussian:<variance>");
  ev->add_option("--seed", seed, "Random seed (default: config seed)");
  ev->add_option("--out", ev_out, "Directory for report.json, report.txt and the resolved config");

  auto* sv = app.add_subcommand("serve", "Run the HTTP reward service");
  std::string bind;
  sv->add_option("--bind", bind, "host:port (default: service.host and service.port)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    g.cfg = resolve_config(g.config_path.empty() ? std::nullopt : std::optional<fs::path>(g.config_path));
    if (gen->parsed()) return cmd_gen_scenes(g, n, val_n, mix, seed, gen_out);
    if (sc->parsed()) return cmd_score(g, sc_in, sc_gt, sc_out, sc_group);
    if (adv->parsed()) return cmd_advantages(g, adv_in, group_size, adv_out);
    if (tt->parsed()) return cmd_train_toy(g, tt_scenes, tt_steps, seed, tt_out, no_warm);
    if (ev->parsed()) return cmd_eval(g, ev_manifest, ev_preds, ev_policy, ev_perturb, seed, ev_out);
    if (sv->parsed()) return cmd_serve(g, bind);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
