#include "sofake/toyworld.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sofake {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- config

void ToyConfig::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("toy config: ") + what);
  };
  require(feature_dim >= 7, "feature_dim must be at least 7");
  require(obs_noise >= 0.0 && coord_noise >= 0.0 && evidence_noise >= 0.0, "noise levels must be non-negative");
  require(std::isfinite(evidence_amplitude), "evidence_amplitude must be finite");
  require(bins >= 2 && bins <= kFrameSize, "bins must lie in [2, 224]");
  require(templates >= 1, "templates must be positive");
  require(rbf_width > 0.0, "rbf_width must be positive");
  require(init_scale >= 0.0, "init_scale must be non-negative");
  require(min_box_side >= 16 && min_box_side <= max_box_side && max_box_side <= kFrameSize,
          "box sides must satisfy 16 <= min <= max <= 224");
  require(synthetic_noise_sigma >= 0.0 && real_noise_sigma > synthetic_noise_sigma,
          "real_noise_sigma must exceed synthetic_noise_sigma >= 0");
  require(min_tamper_offset >= 1 && min_tamper_offset <= max_tamper_offset && max_tamper_offset <= 255,
          "tamper offsets must satisfy 1 <= min <= max <= 255");
  require(warm_steps >= 0 && warm_batch >= 1 && warm_learning_rate >= 0.0, "invalid warm start settings");
  require(probe_every >= 1 && probe_samples >= 1 && eval_samples >= 1, "probe settings must be positive");
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if constexpr (std::is_same_v<T, int>) {
    if (!it->is_number_integer()) throw std::invalid_argument(std::string("toy.") + key + ": expected an integer");
  } else {
    if (!it->is_number()) throw std::invalid_argument(std::string("toy.") + key + ": expected a number");
  }
  out = it->get<T>();
}

}  // namespace

ordered_json toy_config_to_json(const ToyConfig& c) {
  return ordered_json{{"feature_dim", c.feature_dim},
                      {"obs_noise", c.obs_noise},
                      {"coord_noise", c.coord_noise},
                      {"evidence_amplitude", c.evidence_amplitude},
                      {"evidence_noise", c.evidence_noise},
                      {"bins", c.bins},
                      {"templates", c.templates},
                      {"rbf_width", c.rbf_width},
                      {"init_scale", c.init_scale},
                      {"min_box_side", c.min_box_side},
                      {"max_box_side", c.max_box_side},
                      {"real_noise_sigma", c.real_noise_sigma},
                      {"synthetic_noise_sigma", c.synthetic_noise_sigma},
                      {"min_tamper_offset", c.min_tamper_offset},
                      {"max_tamper_offset", c.max_tamper_offset},
                      {"warm_steps", c.warm_steps},
                      {"warm_batch", c.warm_batch},
                      {"warm_learning_rate", c.warm_learning_rate},
                      {"probe_every", c.probe_every},
                      {"probe_samples", c.probe_samples},
                      {"eval_samples", c.eval_samples}};
}

ToyConfig toy_config_from_json(const json& j, const ToyConfig& base) {
  if (!j.is_object()) throw std::invalid_argument("toy: expected an object");
  const ordered_json known = toy_config_to_json(base);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("toy." + key + ": unknown field");
  }
  ToyConfig c = base;
  read_field(j, "feature_dim", c.feature_dim);
  read_field(j, "obs_noise", c.obs_noise);
  read_field(j, "coord_noise", c.coord_noise);
  read_field(j, "evidence_amplitude", c.evidence_amplitude);
  read_field(j, "evidence_noise", c.evidence_noise);
  read_field(j, "bins", c.bins);
  read_field(j, "templates", c.templates);
  read_field(j, "rbf_width", c.rbf_width);
  read_field(j, "init_scale", c.init_scale);
  read_field(j, "min_box_side", c.min_box_side);
  read_field(j, "max_box_side", c.max_box_side);
  read_field(j, "real_noise_sigma", c.real_noise_sigma);
  read_field(j, "synthetic_noise_sigma", c.synthetic_noise_sigma);
  read_field(j, "min_tamper_offset", c.min_tamper_offset);
  read_field(j, "max_tamper_offset", c.max_tamper_offset);
  read_field(j, "warm_steps", c.warm_steps);
  read_field(j, "warm_batch", c.warm_batch);
  read_field(j, "warm_learning_rate", c.warm_learning_rate);
  read_field(j, "probe_every", c.probe_every);
  read_field(j, "probe_samples", c.probe_samples);
  read_field(j, "eval_samples", c.eval_samples);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- scenes

GroundTruth Scene::ground_truth() const {
  GroundTruth gt;
  gt.label = label;
  gt.box = gt_box;
  return gt;
}

std::vector<SceneLayout> plan_scenes(int n, const ClassMix& mix, std::uint64_t seed, const ToyConfig& cfg,
                                     std::string_view id_prefix) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("plan_scenes: n must be at least 1");
  double sum = 0.0;
  for (double p : mix) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("plan_scenes: class mix entries must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("plan_scenes: class mix must sum to 1");

  Rng rng(seed);
  std::vector<SceneLayout> out;
  out.reserve(static_cast<std::size_t>(n));
  const int width = std::max(6, static_cast<int>(std::to_string(n - 1).size()));
  for (int i = 0; i < n; ++i) {
    SceneLayout s;
    std::string idx = std::to_string(i);
    idx.insert(0, static_cast<std::size_t>(width) - std::min(idx.size(), static_cast<std::size_t>(width)), '0');
    s.id = std::string(id_prefix) + "-" + idx;
    const double u = rng.uniform() * sum;
    std::size_t c = 0;
    double cum = mix[0];
    while (c + 1 < mix.size() && (u >= cum || mix[c] == 0.0)) cum += mix[++c];
    s.label = kAllLabels[c];
    s.seed = rng.next();
    if (s.label == Label::Tampered) {
      const int w = static_cast<int>(rng.uniform_int(cfg.min_box_side, cfg.max_box_side));
      const int h = static_cast<int>(rng.uniform_int(cfg.min_box_side, cfg.max_box_side));
      const int x1 = static_cast<int>(rng.uniform_int(0, kFrameSize - w));
      const int y1 = static_cast<int>(rng.uniform_int(0, kFrameSize - h));
      s.box = BBox{x1, y1, x1 + w, y1 + h};
    }
    out.push_back(std::move(s));
  }
  return out;
}

Scene render_scene(const SceneLayout& layout, const ToyConfig& cfg) {
  Rng rng(layout.seed);
  const double base = 80.0 + 90.0 * rng.uniform();
  const double gx = -0.15 + 0.3 * rng.uniform();
  const double gy = -0.15 + 0.3 * rng.uniform();
  std::array<double, 2> amp{}, freq{}, phase{};
  for (int k = 0; k < 2; ++k) {
    amp[k] = 5.0 + 10.0 * rng.uniform();
    freq[k] = 0.01 + 0.04 * rng.uniform();
    phase[k] = 2.0 * std::numbers::pi * rng.uniform();
  }
  const bool tampered = layout.label == Label::Tampered;
  double offset = 0.0;
  if (tampered) {
    offset = static_cast<double>(rng.uniform_int(cfg.min_tamper_offset, cfg.max_tamper_offset));
    if (rng.uniform() < 0.5) offset = -offset;
  }
  const double sigma = layout.label == Label::FullSynthetic ? cfg.synthetic_noise_sigma : cfg.real_noise_sigma;

  Scene scene;
  scene.id = layout.id;
  scene.label = layout.label;
  scene.seed = layout.seed;
  scene.raster = GrayImage(kFrameSize, kFrameSize);
  for (int y = 0; y < kFrameSize; ++y) {
    for (int x = 0; x < kFrameSize; ++x) {
      const double cx = x - kFrameSize / 2.0, cy = y - kFrameSize / 2.0;
      double v = base + gx * cx + gy * cy + amp[0] * std::sin(freq[0] * x + phase[0]) +
                 amp[1] * std::sin(freq[1] * y + phase[1]);
      const bool inside = tampered && x >= layout.box->x1 && x < layout.box->x2 && y >= layout.box->y1 &&
                          y < layout.box->y2;
      v += inside ? offset + cfg.synthetic_noise_sigma * rng.normal() : sigma * rng.normal();
      scene.raster.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
    }
  }
  if (tampered) {
    scene.gt_box = layout.box;
    scene.gt_mask = box_to_mask(*layout.box, kFrameSize, kFrameSize);
  }
  return scene;
}

std::vector<Scene> generate_scenes(int n, const ClassMix& mix, std::uint64_t seed, const ToyConfig& cfg,
                                   std::string_view id_prefix) {
  std::vector<Scene> scenes;
  for (const auto& layout : plan_scenes(n, mix, seed, cfg, id_prefix)) scenes.push_back(render_scene(layout, cfg));
  return scenes;
}

std::vector<ManifestRecord> write_scenes(std::span<const Scene> scenes, const std::filesystem::path& out_dir,
                                         Split split) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestRecord> records;
  for (const auto& s : scenes) {
    ManifestRecord r;
    r.id = s.id;
    r.image_path = "images/" + s.id + ".png";
    r.label = s.label;
    r.split = split;
    r.generator_tag = "toyworld";
    write_png(out_dir / r.image_path, s.raster);
    if (s.gt_mask) {
      r.mask_path = "masks/" + s.id + ".png";
      write_mask_png(out_dir / *r.mask_path, *s.gt_mask);
    }
    r.bbox = s.gt_box;
    records.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

std::vector<Scene> read_scenes(const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  std::vector<Scene> scenes;
  for (const auto& r : load_manifest(manifest_path)) {
    Scene s;
    s.id = r.id;
    s.label = r.label;
    s.raster = read_png(base / r.image_path);
    s.seed = fnv1a64(r.id);
    if (r.label == Label::Tampered) {
      s.gt_box = r.ground_truth(base).box;
      s.gt_mask = r.mask_path ? read_mask_png(base / *r.mask_path)
                              : box_to_mask(*s.gt_box, s.raster.width, s.raster.height);
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

// ---------------------------------------------------------------- observations

namespace {

// Median of integer data held in a histogram, interpolated within the median bin.
double histogram_median(const std::vector<long long>& hist, long long total, double lowest) {
  const double half = static_cast<double>(total) / 2.0;
  long long below = 0;
  for (std::size_t v = 0; v < hist.size(); ++v) {
    if (below + hist[v] >= half && hist[v] > 0) {
      const double lo = std::max(lowest, static_cast<double>(v) - 0.5);
      const double hi = static_cast<double>(v) + 0.5;
      return lo + (hi - lo) * (half - static_cast<double>(below)) / static_cast<double>(hist[v]);
    }
    below += hist[v];
  }
  return static_cast<double>(hist.size() - 1);
}

}  // namespace

double estimate_noise_sigma(const GrayImage& raster) {
  if (raster.width < 2) return 0.0;
  std::vector<long long> diff_hist(511, 0);
  std::vector<int> diffs;
  diffs.reserve(static_cast<std::size_t>(raster.width - 1) * raster.height);
  for (int y = 0; y < raster.height; ++y) {
    for (int x = 0; x + 1 < raster.width; ++x) {
      const int d = static_cast<int>(raster.at(x + 1, y)) - static_cast<int>(raster.at(x, y));
      diffs.push_back(d);
      ++diff_hist[static_cast<std::size_t>(d + 255)];
    }
  }
  const long long n = static_cast<long long>(diffs.size());
  long long below = 0;
  int med = 0;
  for (int v = 0; v < 511; ++v) {
    below += diff_hist[static_cast<std::size_t>(v)];
    if (2 * below >= n) {
      med = v - 255;
      break;
    }
  }
  std::vector<long long> dev_hist(511, 0);
  for (int d : diffs) ++dev_hist[static_cast<std::size_t>(std::abs(d - med))];
  const double mad = histogram_median(dev_hist, n, 0.0);
  // Differences of two i.i.d. pixels carry sqrt(2) times the pixel sigma.
  return 1.482602218505602 * mad / std::numbers::sqrt2;
}

Observation observe(const GrayImage& raster, Label label, const std::optional<BBox>& box, std::uint64_t seed,
                    const ToyConfig& cfg) {
  const bool canonical = raster.width == kFrameSize && raster.height == kFrameSize;
  const double sigma_hat =
      estimate_noise_sigma(canonical ? raster : resize_bilinear(raster, kFrameSize, kFrameSize));
  const double mid = 0.5 * (cfg.real_noise_sigma + cfg.synthetic_noise_sigma);
  const double half = 0.5 * (cfg.real_noise_sigma - cfg.synthetic_noise_sigma);
  const double tau = std::clamp((sigma_hat - mid) / half, -3.0, 3.0);  // +1 real-like, -1 synthetic-like
  const double t = label == Label::Tampered ? 1.0 : 0.0;

  Rng rng(seed);
  Observation obs;
  obs.features.assign(static_cast<std::size_t>(cfg.feature_dim), 0.0);
  auto& f = obs.features;
  const std::array<double, 4> noise{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  if (box) {
    const double w = raster.width, h = raster.height;
    const std::array<double, 4> coords{box->x1 / w, box->y1 / h, box->x2 / w, box->y2 / h};
    for (std::size_t k = 0; k < 4; ++k) f[k] = coords[k] + cfg.coord_noise * noise[k];
  }
  const double a = cfg.evidence_amplitude;
  f[4] = a * (1.0 - t) * 0.5 * (1.0 + tau) + cfg.evidence_noise * rng.normal();
  f[5] = a * t + cfg.evidence_noise * rng.normal();
  f[6] = a * (1.0 - t) * 0.5 * (1.0 - tau) + cfg.evidence_noise * rng.normal();
  for (std::size_t k = 7; k < f.size(); ++k) f[k] = cfg.obs_noise * rng.normal();
  return obs;
}

Observation observe(const Scene& scene, std::uint64_t seed, const ToyConfig& cfg) {
  return observe(scene.raster, scene.label, scene.gt_box, combine_seed(seed, scene.seed), cfg);
}

// ---------------------------------------------------------------- policy

namespace {

constexpr std::array<const char*, 4> kTemplates = {
    "checked edges, lighting and noise consistency across the image",
    "compared local texture statistics between regions",
    "looked for blending seams and resampling traces",
    "inspected the global intensity and noise distribution",
};

void softmax_inplace(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
}

int sample_categorical(std::span<const double> p, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    cum += p[k];
    if (u < cum) return static_cast<int>(k);
  }
  // Rounding left u above the final cumulative sum: take the last positive entry.
  for (std::size_t k = p.size(); k-- > 0;) {
    if (p[k] > 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace

ToyPolicy::ToyPolicy(const ToyConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int k = cfg_.bins;
  offsets_ = {0, 3, 3 + k, 3 + 2 * k, 3 + 3 * k, 3 + 4 * k, 3 + 4 * k + cfg_.templates};
  params_.assign(static_cast<std::size_t>(cfg_.num_outputs()) * cfg_.num_features(), 0.0);
  for (int t = 0; t < cfg_.templates; ++t) {
    templates_.push_back(t < static_cast<int>(kTemplates.size()) ? kTemplates[static_cast<std::size_t>(t)]
                                                                  : "reasoning template " + std::to_string(t));
  }
}

ToyPolicy::ToyPolicy(const ToyConfig& cfg, std::uint64_t seed) : ToyPolicy(cfg) {
  Rng rng(seed);
  for (double& w : params_) w = cfg_.init_scale * rng.normal();
}

ToyPolicy ToyPolicy::zeros(const ToyConfig& cfg) { return ToyPolicy(cfg); }

std::vector<double> ToyPolicy::featurize(const Observation& obs) const {
  if (obs.features.size() != static_cast<std::size_t>(cfg_.feature_dim)) {
    throw std::invalid_argument("observation has " + std::to_string(obs.features.size()) + " features, policy expects " +
                                std::to_string(cfg_.feature_dim));
  }
  std::vector<double> phi;
  phi.reserve(static_cast<std::size_t>(cfg_.num_features()));
  const double k = cfg_.bins;
  const double inv = 1.0 / (2.0 * cfg_.rbf_width * cfg_.rbf_width);
  for (std::size_t c = 0; c < 4; ++c) {
    const double u = obs.features[c] * k;
    for (int b = 0; b < cfg_.bins; ++b) {
      const double d = u - (b + 0.5);
      phi.push_back(std::exp(-d * d * inv));
    }
  }
  phi.insert(phi.end(), obs.features.begin(), obs.features.end());
  phi.push_back(1.0);
  return phi;
}

HeadDistributions ToyPolicy::distributions(std::span<const double> phi) const {
  const std::size_t nf = static_cast<std::size_t>(cfg_.num_features());
  if (phi.size() != nf) throw std::invalid_argument("feature vector size does not match the policy");
  HeadDistributions d;
  for (int h = 0; h < kNumHeads; ++h) {
    auto& p = d.probs[static_cast<std::size_t>(h)];
    p.resize(static_cast<std::size_t>(head_size(h)));
    for (std::size_t r = 0; r < p.size(); ++r) {
      const double* w = params_.data() + (static_cast<std::size_t>(head_offset(h)) + r) * nf;
      double z = 0.0;
      for (std::size_t f = 0; f < nf; ++f) z += w[f] * phi[f];
      p[r] = z;
    }
    softmax_inplace(p);
  }
  return d;
}

bool ToyPolicy::head_used(int head, const ToyAction& a) const {
  return head == 0 || head == kNumHeads - 1 || a.renders_box();
}

int ToyPolicy::head_action(int head, const ToyAction& a) const {
  if (head == 0) return a.label;
  if (head == kNumHeads - 1) return a.template_index;
  return a.bins[static_cast<std::size_t>(head - 1)];
}

ToyAction ToyPolicy::sample(const HeadDistributions& d, Rng& rng) const {
  ToyAction a;
  a.label = sample_categorical(d.probs[0], rng);
  for (std::size_t c = 0; c < 4; ++c) a.bins[c] = sample_categorical(d.probs[c + 1], rng);
  a.template_index = sample_categorical(d.probs[kNumHeads - 1], rng);
  return a;
}

ToyAction ToyPolicy::mode(const HeadDistributions& d) const {
  const auto argmax = [](const std::vector<double>& p) {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  };
  ToyAction a;
  a.label = argmax(d.probs[0]);
  for (std::size_t c = 0; c < 4; ++c) a.bins[c] = argmax(d.probs[c + 1]);
  a.template_index = argmax(d.probs[kNumHeads - 1]);
  return a;
}

double ToyPolicy::log_prob(const HeadDistributions& d, const ToyAction& a) const {
  double lp = 0.0;
  for (int h = 0; h < kNumHeads; ++h) {
    if (head_used(h, a)) lp += std::log(d.probs[static_cast<std::size_t>(h)][static_cast<std::size_t>(head_action(h, a))]);
  }
  return lp;
}

void ToyPolicy::accumulate_log_prob_gradient(std::span<const double> phi, const HeadDistributions& d,
                                             const ToyAction& a, double scale, std::span<double> grad) const {
  const std::size_t nf = phi.size();
  for (int h = 0; h < kNumHeads; ++h) {
    if (!head_used(h, a)) continue;
    const auto& p = d.probs[static_cast<std::size_t>(h)];
    const std::size_t act = static_cast<std::size_t>(head_action(h, a));
    for (std::size_t r = 0; r < p.size(); ++r) {
      const double coef = scale * ((r == act ? 1.0 : 0.0) - p[r]);
      double* g = grad.data() + (static_cast<std::size_t>(head_offset(h)) + r) * nf;
      for (std::size_t f = 0; f < nf; ++f) g[f] += coef * phi[f];
    }
  }
}

int ToyPolicy::bin_edge(int k) const {
  return static_cast<int>(std::lround(static_cast<double>(k) * kFrameSize / cfg_.bins));
}

BBox ToyPolicy::decode_box(const ToyAction& a) const {
  return BBox{bin_edge(std::min(a.bins[0], a.bins[2])), bin_edge(std::min(a.bins[1], a.bins[3])),
              bin_edge(std::max(a.bins[0], a.bins[2]) + 1), bin_edge(std::max(a.bins[1], a.bins[3]) + 1)};
}

std::array<int, 4> ToyPolicy::target_bins(const BBox& box) const {
  const double k = cfg_.bins;
  const auto nearest = [&](int v) { return static_cast<int>(std::lround(v * k / kFrameSize)); };
  const int hi = cfg_.bins - 1;
  return {std::clamp(nearest(box.x1), 0, hi), std::clamp(nearest(box.y1), 0, hi), std::clamp(nearest(box.x2) - 1, 0, hi),
          std::clamp(nearest(box.y2) - 1, 0, hi)};
}

std::string ToyPolicy::render(const ToyAction& a) const {
  const Label label = kAllLabels[static_cast<std::size_t>(a.label)];
  const std::optional<BBox> box = a.renders_box() ? std::optional<BBox>(decode_box(a)) : std::nullopt;
  return render_completion(label, box, template_text(a.template_index));
}

ordered_json ToyPolicy::to_json() const {
  ordered_json j;
  j["format"] = "sofake-toy-policy/1";
  j["config"] = toy_config_to_json(cfg_);
  j["parameters"] = params_;
  return j;
}

ToyPolicy ToyPolicy::from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "sofake-toy-policy/1") {
    throw std::invalid_argument("not a toy policy snapshot");
  }
  ToyPolicy p(toy_config_from_json(j.at("config")));
  const auto& params = j.at("parameters");
  if (!params.is_array() || params.size() != p.params_.size()) {
    throw std::invalid_argument("policy snapshot: parameter count does not match the config");
  }
  for (std::size_t i = 0; i < p.params_.size(); ++i) p.params_[i] = params[i].get<double>();
  return p;
}

void ToyPolicy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

ToyPolicy ToyPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return from_json(json::parse(in));
}

// ---------------------------------------------------------------- group view

ToyGroupView::ToyGroupView(const ToyPolicy& policy, std::span<const double> phi, std::span<const ToyAction> actions)
    : policy_(policy), phi_(phi), actions_(actions), dist_(policy.distributions(phi)) {}

double ToyGroupView::log_prob(std::size_t i) const { return policy_.log_prob(dist_, actions_[i]); }

void ToyGroupView::accumulate_log_prob_gradient(std::size_t i, double scale, std::span<double> grad) const {
  policy_.accumulate_log_prob_gradient(phi_, dist_, actions_[i], scale, grad);
}

void ToyGroupView::accumulate_weighted_gradient(std::span<const double> weights, std::span<double> grad) const {
  // Collapse the group into one coefficient per output row, then one outer product.
  const std::size_t nf = phi_.size();
  const std::size_t rows = static_cast<std::size_t>(policy_.config().num_outputs());
  std::vector<double> coef(rows, 0.0);
  for (std::size_t i = 0; i < actions_.size(); ++i) {
    const ToyAction& a = actions_[i];
    const double w = weights[i];
    if (w == 0.0) continue;
    for (int h = 0; h < kNumHeads; ++h) {
      const bool used = h == 0 || h == kNumHeads - 1 || a.renders_box();
      if (!used) continue;
      const int act = h == 0 ? a.label : (h == kNumHeads - 1 ? a.template_index : a.bins[static_cast<std::size_t>(h - 1)]);
      const auto& p = dist_.probs[static_cast<std::size_t>(h)];
      const std::size_t off = static_cast<std::size_t>(policy_.head_offset(h));
      for (std::size_t r = 0; r < p.size(); ++r) coef[off + r] -= w * p[r];
      coef[off + static_cast<std::size_t>(act)] += w;
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (coef[r] == 0.0) continue;
    double* g = grad.data() + r * nf;
    for (std::size_t f = 0; f < nf; ++f) g[f] += coef[r] * phi_[f];
  }
}

// ---------------------------------------------------------------- samples and groups

std::vector<ToySample> make_samples(std::span<const Scene> scenes, const ToyPolicy& policy, std::uint64_t seed) {
  std::vector<ToySample> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    ToySample t;
    t.id = s.id;
    t.phi = policy.featurize(observe(s, seed, policy.config()));
    t.gt = s.ground_truth();
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<ToySample> make_perturbed_samples(std::span<const Scene> scenes, const ToyPolicy& policy,
                                              const PerturbSpec& spec, std::uint64_t seed) {
  std::vector<ToySample> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    const Perturbed p = perturb(s.raster, spec, record_seed(seed, s.id));
    ToySample t;
    t.id = s.id;
    t.gt = s.ground_truth();
    if (t.gt.box) t.gt.box = p.transform.apply(*t.gt.box);
    t.prediction_transform = p.transform;
    t.phi = policy.featurize(observe(p.image, s.label, t.gt.box, combine_seed(seed, s.seed), policy.config()));
    out.push_back(std::move(t));
  }
  return out;
}

SampledGroup sample_group(const ToyPolicy& policy, const ToyPolicy& reference, const ToySample& sample, int G,
                          Rng& rng, const RewardConfig& reward_cfg) {
  if (G < 2) throw std::invalid_argument("sample_group: G must be at least 2");
  const HeadDistributions d = policy.distributions(sample.phi);
  const HeadDistributions dref = reference.distributions(sample.phi);
  SampledGroup out;
  for (int i = 0; i < G; ++i) {
    const ToyAction a = policy.sample(d, rng);
    std::string text = policy.render(a);
    const RewardBreakdown b = score(text, sample.gt, reward_cfg);
    const double lp = policy.log_prob(d, a);
    out.group.rewards.push_back(b.total);
    out.group.logp_current.push_back(lp);
    out.group.logp_behavior.push_back(lp);
    out.group.logp_ref.push_back(reference.log_prob(dref, a));
    out.actions.push_back(a);
    out.completions.push_back(std::move(text));
    out.breakdowns.push_back(b);
  }
  return out;
}

SampledGroup sample_group(const ToyPolicy& policy, const Scene& scene, int G, std::uint64_t seed,
                          const RewardConfig& reward_cfg) {
  ToySample s;
  s.id = scene.id;
  s.phi = policy.featurize(observe(scene, seed, policy.config()));
  s.gt = scene.ground_truth();
  Rng rng(combine_seed(seed, 0x5A3B1E));
  return sample_group(policy, policy, s, G, rng, reward_cfg);
}

// ---------------------------------------------------------------- warm start

namespace {

ToyAction target_action(const ToyPolicy& policy, const ToySample& s) {
  ToyAction a;
  a.label = static_cast<int>(s.gt.label);
  if (s.gt.label == Label::Tampered && s.gt.box) a.bins = policy.target_bins(*s.gt.box);
  a.template_index = 0;
  return a;
}

}  // namespace

SupervisedLoss supervised_loss(const ToyPolicy& policy, std::span<const ToySample> data) {
  SupervisedLoss loss;
  if (data.empty()) return loss;
  for (const auto& s : data) {
    const HeadDistributions d = policy.distributions(s.phi);
    const ToyAction a = target_action(policy, s);
    loss.label -= std::log(d.probs[0][static_cast<std::size_t>(a.label)]);
    loss.think_template -= std::log(d.probs[kNumHeads - 1][0]);
    if (a.renders_box()) {
      for (std::size_t c = 0; c < 4; ++c) loss.box -= std::log(d.probs[c + 1][static_cast<std::size_t>(a.bins[c])]);
    }
  }
  const double n = static_cast<double>(data.size());
  loss.label /= n;
  loss.box /= n;
  loss.think_template /= n;
  loss.total = loss.label + loss.box + loss.think_template;
  return loss;
}

std::vector<double> warm_start(ToyPolicy& policy, std::span<const ToySample> data, const WarmStartConfig& cfg,
                               std::uint64_t seed) {
  if (cfg.steps < 0 || cfg.batch_size < 1 || !(cfg.learning_rate >= 0.0)) {
    throw std::invalid_argument("warm_start: invalid configuration");
  }
  if (data.empty()) throw std::invalid_argument("warm_start: no training data");
  Rng rng(seed);
  const GrpoConfig adam;  // optimizer constants only
  AdamState state;
  std::vector<double> grad(policy.num_parameters());
  std::vector<double> losses;
  const double inv_b = 1.0 / cfg.batch_size;
  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const ToySample& s = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(data.size()) - 1))];
      const HeadDistributions d = policy.distributions(s.phi);
      const ToyAction a = target_action(policy, s);
      loss -= policy.log_prob(d, a) * inv_b;
      policy.accumulate_log_prob_gradient(s.phi, d, a, inv_b, grad);
    }
    if (!std::isfinite(loss)) throw std::runtime_error("warm_start: non-finite loss at step " + std::to_string(step));
    losses.push_back(loss);
    adam_ascent(policy.parameters(), grad, adam, state, cfg.learning_rate);
  }
  return losses;
}

// ---------------------------------------------------------------- evaluation

PolicyEvaluation evaluate_policy(const ToyPolicy& policy, std::span<const ToySample> data, int samples_per_scene,
                                 std::uint64_t seed, const RewardConfig& reward_cfg) {
  if (samples_per_scene < 1) throw std::invalid_argument("evaluate_policy: samples_per_scene must be positive");
  PolicyEvaluation ev;
  if (data.empty()) return ev;
  Rng rng(seed);
  std::vector<std::optional<Label>> preds;
  std::vector<Label> gts;
  double iou_sum = 0.0, reward_sum = 0.0;
  std::size_t tampered = 0;
  for (const auto& s : data) {
    const HeadDistributions d = policy.distributions(s.phi);
    for (int k = 0; k < samples_per_scene; ++k) {
      const ToyAction a = policy.sample(d, rng);
      ParsedCompletion c = parse_completion(policy.render(a));
      if (c.box) c.box = s.prediction_transform.apply(*c.box);
      preds.push_back(c.label);
      gts.push_back(s.gt.label);
      reward_sum += score_parsed(c, s.gt, reward_cfg).total;
      if (s.gt.label == Label::Tampered) {
        ++tampered;
        if (c.box && s.gt.box) iou_sum += box_iou(*c.box, *s.gt.box);
      }
    }
  }
  ev.draws = preds.size();
  ev.accuracy = detection_metrics(preds, gts).accuracy;
  ev.mean_iou = tampered ? iou_sum / static_cast<double>(tampered) : 0.0;
  ev.mean_reward = reward_sum / static_cast<double>(ev.draws);
  return ev;
}

std::vector<Prediction> predict(const ToyPolicy& policy, std::span<const ToySample> data, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    const ToyAction a = policy.sample(policy.distributions(s.phi), rng);
    const ParsedCompletion c = parse_completion(policy.render(a));
    out.push_back(Prediction{s.id, c.label, c.box, std::nullopt, c.think_text});
  }
  return out;
}

// ---------------------------------------------------------------- GRPO training

TrainResult train(ToyPolicy& policy, std::span<const ToySample> train_set, std::span<const ToySample> probe_set,
                  const GrpoConfig& grpo_cfg, const RewardConfig& reward_cfg, std::uint64_t seed,
                  const StepCallback& on_step) {
  grpo_cfg.validate();
  reward_cfg.validate();
  if (train_set.empty() && grpo_cfg.steps > 0) throw std::invalid_argument("train: no training data");
  const ToyConfig& toy = policy.config();
  const ToyPolicy reference = policy;
  const std::uint64_t probe_seed = combine_seed(seed, 0x9B0BE);
  Rng rng(seed);
  AdamState adam;
  TrainResult result;

  const auto probe = [&](int step) -> std::optional<CurvePoint> {
    if (probe_set.empty()) return std::nullopt;
    const PolicyEvaluation ev = evaluate_policy(policy, probe_set, toy.probe_samples, probe_seed, reward_cfg);
    result.curve.push_back(CurvePoint{step, ev.accuracy, ev.mean_iou, ev.mean_reward});
    return result.curve.back();
  };
  probe(0);

  std::vector<SampledGroup> groups(static_cast<std::size_t>(grpo_cfg.groups_per_step));
  std::vector<const ToySample*> picked(groups.size());
  for (int step = 0; step < grpo_cfg.steps; ++step) {
    const double lr = grpo_cfg.learning_rate_at(step);
    for (std::size_t b = 0; b < groups.size(); ++b) {
      picked[b] = &train_set[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(train_set.size()) - 1))];
      groups[b] = sample_group(policy, reference, *picked[b], grpo_cfg.group_size, rng, reward_cfg);
    }
    StepDiagnostics diag;
    for (int epoch = 0; epoch < grpo_cfg.inner_epochs; ++epoch) {
      std::vector<ToyGroupView> views;
      views.reserve(groups.size());
      std::vector<GroupBatchItem> batch;
      for (std::size_t b = 0; b < groups.size(); ++b) {
        views.emplace_back(policy, picked[b]->phi, groups[b].actions);
        batch.push_back(GroupBatchItem{&groups[b].group, &views.back()});
      }
      const StepDiagnostics d = ::sofake::step(policy.parameters(), batch, grpo_cfg, adam, lr);
      if (epoch == 0) diag = d;
    }
    result.steps.push_back(diag);
    std::optional<CurvePoint> point;
    if ((step + 1) % toy.probe_every == 0) point = probe(step + 1);
    if (on_step) on_step(step + 1, diag, point);
  }
  return result;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto num = [](double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  };
  out << "step,accuracy,mean_iou,mean_reward\n";
  for (const auto& p : curve) {
    out << p.step << ',' << num(p.accuracy) << ',' << num(p.mean_iou) << ',' << num(p.mean_reward) << '\n';
  }
}

}  // namespace sofake
