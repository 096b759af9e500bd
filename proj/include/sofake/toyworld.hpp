// Procedural forgery scenes and a small categorical policy that runs the full
// warm-start + GRPO pipeline at desk scale.
//
// Scenes: REAL rasters carry strong sensor-like noise, FULL_SYNTHETIC rasters are
// smooth, TAMPERED rasters are REAL backgrounds with a smooth, intensity-shifted
// rectangle. The observation encoder measures the noise level of the raster to
// build class evidence, so raster perturbations propagate into the features.
//
// Policy: six independent softmax heads (label, x1, y1, x2, y2 bins, think template)
// over a fixed featurization: a Gaussian radial-basis expansion of each coordinate
// channel, the raw features and a bias. Coordinate heads only enter the log-prob
// of a completion whose sampled label is TAMPERED, because only then is a box rendered.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sofake/evalkit.hpp"
#include "sofake/geometry.hpp"
#include "sofake/grammar.hpp"
#include "sofake/grpo.hpp"
#include "sofake/image.hpp"
#include "sofake/random.hpp"
#include "sofake/rewards.hpp"

namespace sofake {

struct ToyConfig {
  int feature_dim = 16;            // 4 coordinates + 3 evidence + filler
  double obs_noise = 0.05;         // filler channels
  double coord_noise = 0.005;      // coordinate channels, in frame units
  double evidence_amplitude = 1.0;
  double evidence_noise = 0.325;
  int bins = 28;
  int templates = 4;
  double rbf_width = 0.5;          // in bins
  double init_scale = 0.01;

  int min_box_side = 48;
  int max_box_side = 128;
  double real_noise_sigma = 12.0;
  double synthetic_noise_sigma = 4.0;
  int min_tamper_offset = 24;
  int max_tamper_offset = 48;

  int warm_steps = 200;
  int warm_batch = 32;
  double warm_learning_rate = 0.002;

  int probe_every = 100;
  int probe_samples = 4;
  int eval_samples = 32;

  /// Throws std::invalid_argument.
  void validate() const;
  int num_features() const { return 4 * bins + feature_dim + 1; }
  int num_outputs() const { return 3 + 4 * bins + templates; }
};

nlohmann::ordered_json toy_config_to_json(const ToyConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw std::invalid_argument.
ToyConfig toy_config_from_json(const nlohmann::json& j, const ToyConfig& base = {});

// ---------------------------------------------------------------- scenes

using ClassMix = std::array<double, 3>;  // indexed like kAllLabels

struct SceneLayout {
  std::string id;
  Label label = Label::Real;
  std::optional<BBox> box;
  std::uint64_t seed = 0;
};

struct Scene {
  std::string id;
  GrayImage raster;
  Label label = Label::Real;
  std::optional<BBox> gt_box;
  std::optional<Mask> gt_mask;
  std::uint64_t seed = 0;

  GroundTruth ground_truth() const;
};

/// Labels are i.i.d. draws from `mix`. Throws std::invalid_argument unless n >= 1 and mix is a distribution.
std::vector<SceneLayout> plan_scenes(int n, const ClassMix& mix, std::uint64_t seed, const ToyConfig& cfg = {},
                                     std::string_view id_prefix = "scene");
Scene render_scene(const SceneLayout& layout, const ToyConfig& cfg = {});
std::vector<Scene> generate_scenes(int n, const ClassMix& mix, std::uint64_t seed, const ToyConfig& cfg = {},
                                   std::string_view id_prefix = "scene");

/// Writes images/<id>.png, masks/<id>.png (TAMPERED only) and manifest.jsonl under out_dir.
/// Returns the manifest records. Throws std::runtime_error when out_dir is not writable.
std::vector<ManifestRecord> write_scenes(std::span<const Scene> scenes, const std::filesystem::path& out_dir,
                                         Split split = Split::Train);
/// Inverse of write_scenes for a manifest of toy scenes.
std::vector<Scene> read_scenes(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------- observations

struct Observation {
  std::vector<double> features;
};

/// Robust noise estimate: MAD of horizontal neighbour differences, scaled to a per-pixel sigma.
double estimate_noise_sigma(const GrayImage& raster);

/// `box` is in the raster's own frame; coordinates are normalized by the raster size.
/// Non-224 rasters are resampled to 224x224 before the texture statistic is measured.
Observation observe(const GrayImage& raster, Label label, const std::optional<BBox>& box, std::uint64_t seed,
                    const ToyConfig& cfg);
Observation observe(const Scene& scene, std::uint64_t seed, const ToyConfig& cfg);

// ---------------------------------------------------------------- policy

inline constexpr int kNumHeads = 6;  // label, x1, y1, x2, y2, template

struct ToyAction {
  int label = 0;                    // index into kAllLabels
  std::array<int, 4> bins{};        // x1, y1, x2, y2
  int template_index = 0;

  bool renders_box() const { return kAllLabels[static_cast<std::size_t>(label)] == Label::Tampered; }
  friend bool operator==(const ToyAction&, const ToyAction&) = default;
};

struct HeadDistributions {
  std::array<std::vector<double>, kNumHeads> probs;
};

class ToyPolicy {
 public:
  /// Parameters drawn from N(0, init_scale^2).
  ToyPolicy(const ToyConfig& cfg, std::uint64_t seed);
  static ToyPolicy zeros(const ToyConfig& cfg);

  const ToyConfig& config() const { return cfg_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  std::size_t num_parameters() const { return params_.size(); }

  std::vector<double> featurize(const Observation& obs) const;
  HeadDistributions distributions(std::span<const double> phi) const;

  ToyAction sample(const HeadDistributions& d, Rng& rng) const;
  ToyAction mode(const HeadDistributions& d) const;
  double log_prob(const HeadDistributions& d, const ToyAction& a) const;
  /// grad += scale * d log_prob / d params
  void accumulate_log_prob_gradient(std::span<const double> phi, const HeadDistributions& d, const ToyAction& a,
                                    double scale, std::span<double> grad) const;

  /// Bin k spans [edge(k), edge(k+1)); the box runs from the lower start edge to the upper end edge.
  BBox decode_box(const ToyAction& a) const;
  std::string render(const ToyAction& a) const;
  const std::string& template_text(int index) const { return templates_.at(static_cast<std::size_t>(index)); }
  int bin_edge(int k) const;
  /// Supervised targets: nearest start edge for (x1, y1), nearest end edge for (x2, y2).
  std::array<int, 4> target_bins(const BBox& box) const;

  nlohmann::ordered_json to_json() const;
  static ToyPolicy from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ToyPolicy load(const std::filesystem::path& path);

  /// Row offset of each head in the output layer.
  int head_offset(int head) const { return offsets_[static_cast<std::size_t>(head)]; }
  int head_size(int head) const { return offsets_[static_cast<std::size_t>(head) + 1] - offsets_[static_cast<std::size_t>(head)]; }

 private:
  explicit ToyPolicy(const ToyConfig& cfg);
  bool head_used(int head, const ToyAction& a) const;
  int head_action(int head, const ToyAction& a) const;

  ToyConfig cfg_;
  std::array<int, kNumHeads + 1> offsets_{};
  std::vector<double> params_;  // row-major [num_outputs x num_features]
  std::vector<std::string> templates_;
};

/// One group of completions evaluated under a policy's current parameters.
class ToyGroupView final : public GroupLogProb {
 public:
  ToyGroupView(const ToyPolicy& policy, std::span<const double> phi, std::span<const ToyAction> actions);
  std::size_t size() const override { return actions_.size(); }
  std::size_t num_parameters() const override { return policy_.num_parameters(); }
  double log_prob(std::size_t i) const override;
  void accumulate_log_prob_gradient(std::size_t i, double scale, std::span<double> grad) const override;
  void accumulate_weighted_gradient(std::span<const double> weights, std::span<double> grad) const override;

 private:
  const ToyPolicy& policy_;
  std::span<const double> phi_;
  std::span<const ToyAction> actions_;
  HeadDistributions dist_;
};

/// Featurized training example.
struct ToySample {
  std::string id;
  std::vector<double> phi;
  GroundTruth gt;
  BoxTransform prediction_transform;  // policy frame -> evaluation frame
};

/// Observation seeds derive from (seed, scene seed).
std::vector<ToySample> make_samples(std::span<const Scene> scenes, const ToyPolicy& policy, std::uint64_t seed);
/// Perturbs each raster (per-record seed), observes the perturbed raster and moves the ground truth into the
/// perturbed frame.
std::vector<ToySample> make_perturbed_samples(std::span<const Scene> scenes, const ToyPolicy& policy,
                                              const PerturbSpec& spec, std::uint64_t seed);

struct SampledGroup {
  Group group;
  std::vector<ToyAction> actions;
  std::vector<std::string> completions;
  std::vector<RewardBreakdown> breakdowns;
};

/// Samples G completions head by head, renders and scores them; behaviour log-probs equal current ones.
SampledGroup sample_group(const ToyPolicy& policy, const ToyPolicy& reference, const ToySample& sample, int G,
                          Rng& rng, const RewardConfig& reward_cfg = {});
SampledGroup sample_group(const ToyPolicy& policy, const Scene& scene, int G, std::uint64_t seed,
                          const RewardConfig& reward_cfg = {});

// ---------------------------------------------------------------- training

struct SupervisedLoss {
  double label = 0.0;
  double box = 0.0;
  double think_template = 0.0;
  double total = 0.0;
};

/// Mean cross-entropy against (gt label, gt box bins for TAMPERED, template 0).
SupervisedLoss supervised_loss(const ToyPolicy& policy, std::span<const ToySample> data);

struct WarmStartConfig {
  int steps = 200;
  int batch_size = 32;
  double learning_rate = 0.002;

  static WarmStartConfig from(const ToyConfig& cfg) { return {cfg.warm_steps, cfg.warm_batch, cfg.warm_learning_rate}; }
};

/// Adam on the minibatch cross-entropy. Returns the loss of each minibatch before its update.
/// Throws std::runtime_error on a non-finite loss.
std::vector<double> warm_start(ToyPolicy& policy, std::span<const ToySample> data, const WarmStartConfig& cfg,
                               std::uint64_t seed);

struct PolicyEvaluation {
  std::size_t draws = 0;
  double accuracy = 0.0;
  double mean_iou = 0.0;     // over TAMPERED draws; 0 when no box is rendered
  double mean_reward = 0.0;
};

/// Scores `samples_per_scene` sampled completions per example.
PolicyEvaluation evaluate_policy(const ToyPolicy& policy, std::span<const ToySample> data, int samples_per_scene,
                                 std::uint64_t seed, const RewardConfig& reward_cfg = {});

/// One sampled completion per example, as report() predictions.
std::vector<Prediction> predict(const ToyPolicy& policy, std::span<const ToySample> data, std::uint64_t seed);

struct CurvePoint {
  int step = 0;
  double accuracy = 0.0;
  double mean_iou = 0.0;
  double mean_reward = 0.0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;          // probe metrics at step 0 and every probe_every steps
  std::vector<StepDiagnostics> steps;     // one per GRPO update
};

/// `probe` is set on steps where the probe set was evaluated.
using StepCallback = std::function<void(int step, const StepDiagnostics&, const std::optional<CurvePoint>& probe)>;

/// GRPO against a frozen copy of the incoming policy as the reference.
TrainResult train(ToyPolicy& policy, std::span<const ToySample> train_set, std::span<const ToySample> probe_set,
                  const GrpoConfig& grpo_cfg, const RewardConfig& reward_cfg, std::uint64_t seed,
                  const StepCallback& on_step = {});

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve);

}  // namespace sofake
