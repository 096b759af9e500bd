#include "sofake/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sofake/random.hpp"

namespace sofake {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- manifest

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Ood: return "ood";
  }
  return "train";
}

std::optional<Split> split_from_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "ood") return Split::Ood;
  return std::nullopt;
}

namespace {

std::string line_prefix(std::size_t line) { return line == 0 ? std::string() : "line " + std::to_string(line) + ": "; }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

json box_to_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BBox box_from_json(const json& j, const std::string& field, std::size_t line) {
  if (!j.is_array() || j.size() != 4) throw ManifestError(line, line_prefix(line) + field + ": expected [x1, y1, x2, y2]");
  std::array<int, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number_integer()) throw ManifestError(line, line_prefix(line) + field + ": coordinates must be integers");
    v[i] = j[i].get<int>();
  }
  const BBox box{v[0], v[1], v[2], v[3]};
  if (!box.valid()) throw ManifestError(line, line_prefix(line) + field + ": box is empty or outside the 224x224 frame");
  return box;
}

std::optional<std::string> optional_string(const json& j, const char* key, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ManifestError(line, line_prefix(line) + key + ": expected a string");
  return it->get<std::string>();
}

std::string required_string(const json& j, const char* key, std::size_t line) {
  auto v = optional_string(j, key, line);
  if (!v || v->empty()) throw ManifestError(line, line_prefix(line) + key + ": required non-empty string");
  return *v;
}

template <typename Fn>
void for_each_jsonl_line(std::string_view text, Fn&& fn) {
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view row = text.substr(pos, end - pos);
    pos = end + 1;
    ++line;
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
    if (row.find_first_not_of(" \t") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(row);
    } catch (const json::parse_error& e) {
      throw ManifestError(line, line_prefix(line) + "malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw ManifestError(line, line_prefix(line) + "expected a JSON object");
    fn(j, line);
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ManifestError::ManifestError(std::size_t line, const std::string& what) : std::runtime_error(what), line_(line) {}

GroundTruth ManifestRecord::ground_truth(const std::filesystem::path& base_dir) const {
  GroundTruth gt;
  gt.label = label;
  gt.mask_path = mask_path;
  gt.explanation = explanation;
  if (label == Label::Tampered) {
    if (bbox) {
      gt.box = bbox;
    } else if (mask_path) {
      gt.box = mask_to_bbox(read_mask_png(resolve(base_dir, *mask_path)));
      if (!gt.box) throw std::invalid_argument("record " + id + ": mask is empty");
    }
  }
  gt.validate();
  return gt;
}

ordered_json manifest_record_to_json(const ManifestRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["image_path"] = r.image_path;
  j["label"] = label_name(r.label);
  if (r.mask_path) j["mask_path"] = *r.mask_path;
  if (r.bbox) j["bbox"] = box_to_json(*r.bbox);
  if (r.generator_tag) j["generator_tag"] = *r.generator_tag;
  if (r.category) j["category"] = *r.category;
  j["split"] = split_name(r.split);
  if (r.explanation) j["explanation"] = *r.explanation;
  return j;
}

ManifestRecord manifest_record_from_json(const json& j, std::size_t line) {
  static const std::set<std::string> known = {"id",       "image_path", "label", "mask_path",  "bbox",
                                              "generator_tag", "category",   "split", "explanation"};
  if (!j.is_object()) throw ManifestError(line, line_prefix(line) + "expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ManifestError(line, line_prefix(line) + "unknown field '" + key + "'");
  }
  ManifestRecord r;
  r.id = required_string(j, "id", line);
  r.image_path = required_string(j, "image_path", line);
  const std::string label = required_string(j, "label", line);
  const auto parsed = label_from_name(label);
  if (!parsed) throw ManifestError(line, line_prefix(line) + "label: unknown label '" + label + "'");
  r.label = *parsed;
  r.mask_path = optional_string(j, "mask_path", line);
  if (const auto it = j.find("bbox"); it != j.end() && !it->is_null()) r.bbox = box_from_json(*it, "bbox", line);
  r.generator_tag = optional_string(j, "generator_tag", line);
  r.category = optional_string(j, "category", line);
  const std::string split = required_string(j, "split", line);
  const auto sp = split_from_name(split);
  if (!sp) throw ManifestError(line, line_prefix(line) + "split: expected train, val or ood, got '" + split + "'");
  r.split = *sp;
  r.explanation = optional_string(j, "explanation", line);

  if (r.label == Label::Tampered && !r.mask_path && !r.bbox) {
    throw ManifestError(line, line_prefix(line) + "TAMPERED record requires mask_path or bbox");
  }
  if (r.label != Label::Tampered && (r.mask_path || r.bbox)) {
    throw ManifestError(line, line_prefix(line) + std::string(label_name(r.label)) + " record must not carry mask_path or bbox");
  }
  return r;
}

std::vector<ManifestRecord> parse_manifest(std::string_view jsonl) {
  std::vector<ManifestRecord> records;
  std::unordered_set<std::string> ids;
  for_each_jsonl_line(jsonl, [&](const json& j, std::size_t line) {
    ManifestRecord r = manifest_record_from_json(j, line);
    if (!ids.insert(r.id).second) throw ManifestError(line, line_prefix(line) + "duplicate id '" + r.id + "'");
    records.push_back(std::move(r));
  });
  return records;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) { return parse_manifest(read_text_file(path)); }

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << manifest_record_to_json(r).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------- detection

namespace {

std::size_t label_index(Label l) { return static_cast<std::size_t>(l); }

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

}  // namespace

DetectionMetrics detection_metrics(std::span<const std::optional<Label>> preds, std::span<const Label> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("detection_metrics: length mismatch");
  if (gts.empty()) throw std::invalid_argument("detection_metrics: empty input");

  DetectionMetrics m;
  m.count = gts.size();
  std::array<long long, 3> tp{};
  long long correct = 0;
  long long bin_correct = 0, bin_tp = 0, bin_fp = 0, bin_fn = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const std::size_t g = label_index(gts[i]);
    ++m.per_class[g].support;
    if (preds[i]) {
      const std::size_t p = label_index(*preds[i]);
      ++m.per_class[p].predicted;
      if (p == g) {
        ++tp[g];
        ++correct;
      }
    }
    const bool gt_fake = gts[i] != Label::Real;
    // An absent prediction takes the wrong side of the binary split.
    const bool pred_fake = preds[i] ? *preds[i] != Label::Real : !gt_fake;
    if (pred_fake == gt_fake) ++bin_correct;
    if (pred_fake && gt_fake) ++bin_tp;
    if (pred_fake && !gt_fake) ++bin_fp;
    if (!pred_fake && gt_fake) ++bin_fn;
  }

  double macro_sum = 0.0;
  int macro_n = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    auto& s = m.per_class[c];
    s.precision = safe_div(static_cast<double>(tp[c]), static_cast<double>(s.predicted));
    s.recall = safe_div(static_cast<double>(tp[c]), static_cast<double>(s.support));
    s.f1 = safe_div(2.0 * static_cast<double>(tp[c]), static_cast<double>(s.predicted + s.support));
    s.in_macro = s.support > 0 || s.predicted > 0;
    if (s.in_macro) {
      macro_sum += s.f1;
      ++macro_n;
    }
  }
  const double n = static_cast<double>(m.count);
  m.accuracy = static_cast<double>(correct) / n;
  m.macro_f1 = safe_div(macro_sum, macro_n);
  m.binary_accuracy = static_cast<double>(bin_correct) / n;
  m.binary_f1 = safe_div(2.0 * static_cast<double>(bin_tp), static_cast<double>(2 * bin_tp + bin_fp + bin_fn));
  return m;
}

// ---------------------------------------------------------------- localization

namespace {

std::optional<BBox> clip_to_frame(const BBox& b, int w, int h) {
  const BBox c{std::clamp(b.x1, 0, w), std::clamp(b.y1, 0, h), std::clamp(b.x2, 0, w), std::clamp(b.y2, 0, h)};
  if (!c.valid(w, h)) return std::nullopt;
  return c;
}

}  // namespace

LocalizationMetrics localization_metrics(std::span<const LocalizationCase> cases, const SegmentationBackend& backend) {
  LocalizationMetrics m;
  m.tampered_count = cases.size();
  if (cases.empty()) return m;
  double box_sum = 0.0, iou_sum = 0.0, f1_sum = 0.0;
  for (const auto& c : cases) {
    const int w = c.frame_width;
    const int h = c.frame_height;
    std::optional<BBox> gt_box = c.gt_box ? c.gt_box : (c.gt_mask ? mask_to_bbox(*c.gt_mask) : std::nullopt);
    if (!gt_box && !c.gt_mask) throw std::invalid_argument("localization case without ground-truth geometry");
    Mask gt_mask = c.gt_mask ? *c.gt_mask : Mask(w, h);
    if (!c.gt_mask) {
      if (auto clipped = clip_to_frame(*gt_box, w, h)) gt_mask = box_to_mask(*clipped, w, h);
    }

    std::optional<BBox> pred_box = c.pred_box;
    if (!pred_box && c.pred_mask) pred_box = mask_to_bbox(*c.pred_mask);
    if (pred_box && gt_box) box_sum += box_iou(*pred_box, *gt_box);

    std::optional<Mask> pred_mask = c.pred_mask;
    if (!pred_mask && c.pred_box) {
      if (auto clipped = clip_to_frame(*c.pred_box, w, h)) {
        pred_mask = backend.segment(GrayImage(w, h), *clipped);
      }
    }
    if (pred_mask) {
      const OverlapCounts o = mask_overlap_counts(*pred_mask, gt_mask);
      iou_sum += o.iou();
      f1_sum += o.f1();
    }
  }
  const double n = static_cast<double>(cases.size());
  m.mean_box_iou = box_sum / n;
  m.mean_mask_iou = iou_sum / n;
  m.mean_mask_f1 = f1_sum / n;
  return m;
}

// ---------------------------------------------------------------- explanation

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool word = c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    if (word) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::string_view reference, std::string_view candidate) {
  const auto ref = tokenize(reference);
  const auto cand = tokenize(candidate);
  RougeScore s;
  if (ref.empty() || cand.empty()) return s;
  const double l = static_cast<double>(lcs_length(ref, cand));
  if (l == 0.0) return s;
  s.precision = l / static_cast<double>(cand.size());
  s.recall = l / static_cast<double>(ref.size());
  s.f = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

namespace {

std::uint32_t fnv1a32(std::string_view s) {
  std::uint32_t h = 0x811C9DC5u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x01000193u;
  }
  return h;
}

}  // namespace

HashedBagOfWords::HashedBagOfWords(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
}

std::vector<double> HashedBagOfWords::embed(std::string_view text) const {
  std::vector<double> v(dim_, 0.0);
  for (const auto& tok : tokenize(text)) v[fnv1a32(tok) % dim_] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

double css(std::string_view reference, std::string_view candidate, const Embedder& embedder) {
  const auto a = embedder.embed(reference);
  const auto b = embedder.embed(candidate);
  if (a.size() != b.size()) throw std::invalid_argument("embedder returned vectors of different dimension");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// ---------------------------------------------------------------- perturbation

namespace {

constexpr double kSnap = 1e-9;

double parse_number(std::string_view text, std::string_view spec) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw std::invalid_argument("perturbation '" + std::string(spec) + "': bad magnitude");
  }
  return v;
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

int scaled_dim(int dim, double s) { return std::max(1, static_cast<int>(std::lround(dim * s))); }

}  // namespace

PerturbSpec PerturbSpec::parse(std::string_view text) {
  PerturbSpec spec;
  if (text.empty() || text == "none") return spec;
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("perturbation '" + std::string(text) + "': expected kind:magnitude");
  const auto kind = text.substr(0, colon);
  if (kind == "jpeg") {
    spec.kind = PerturbKind::Jpeg;
  } else if (kind == "resize") {
    spec.kind = PerturbKind::Resize;
  } else if (kind == "gaussian") {
    spec.kind = PerturbKind::Gaussian;
  } else {
    throw std::invalid_argument("perturbation '" + std::string(text) + "': unsupported kind '" + std::string(kind) + "'");
  }
  spec.magnitude = parse_number(text.substr(colon + 1), text);
  spec.validate();
  return spec;
}

std::string PerturbSpec::to_string() const {
  switch (kind) {
    case PerturbKind::None: return "none";
    case PerturbKind::Jpeg: return "jpeg:" + format_number(magnitude);
    case PerturbKind::Resize: return "resize:" + format_number(magnitude);
    case PerturbKind::Gaussian: return "gaussian:" + format_number(magnitude);
  }
  return "none";
}

void PerturbSpec::validate() const {
  switch (kind) {
    case PerturbKind::None: return;
    case PerturbKind::Jpeg:
      if (magnitude != std::floor(magnitude) || magnitude < 1 || magnitude > 100) {
        throw std::invalid_argument("jpeg quality must be an integer in [1, 100]");
      }
      return;
    case PerturbKind::Resize:
      if (!(magnitude > 0.0)) throw std::invalid_argument("resize scale must be positive");
      return;
    case PerturbKind::Gaussian:
      if (!(magnitude >= 0.0)) throw std::invalid_argument("gaussian variance must be non-negative");
      return;
  }
}

BBox BoxTransform::apply(const BBox& b) const {
  const auto lo = [](double v, int limit) { return std::clamp(static_cast<int>(std::floor(v + kSnap)), 0, limit); };
  const auto hi = [](double v, int limit) { return std::clamp(static_cast<int>(std::ceil(v - kSnap)), 0, limit); };
  return BBox{lo(b.x1 * scale_x, width), lo(b.y1 * scale_y, height), hi(b.x2 * scale_x, width),
              hi(b.y2 * scale_y, height)};
}

Mask BoxTransform::apply(const Mask& mask) const {
  const int w = scaled_dim(mask.width(), scale_x);
  const int h = scaled_dim(mask.height(), scale_y);
  // Summed-area table of the source mask.
  const int sw = mask.width(), sh = mask.height();
  std::vector<long long> sat(static_cast<std::size_t>(sw + 1) * (sh + 1), 0);
  const auto S = [&](int x, int y) -> long long& { return sat[static_cast<std::size_t>(y) * (sw + 1) + x]; };
  for (int y = 0; y < sh; ++y) {
    for (int x = 0; x < sw; ++x) S(x + 1, y + 1) = (mask.at(x, y) ? 1 : 0) + S(x, y + 1) + S(x + 1, y) - S(x, y);
  }
  // Source pixel x overlaps output pixel p iff p/s - 1 < x < (p+1)/s.
  const auto src_range = [](int p, double s, int n) {
    const int a = std::clamp(static_cast<int>(std::floor(p / s + kSnap)), 0, n);
    const int b = std::clamp(static_cast<int>(std::ceil((p + 1) / s - kSnap)), 0, n);
    return std::pair{a, b};
  };
  Mask out(w, h);
  for (int y = 0; y < h; ++y) {
    const auto [y0, y1] = src_range(y, scale_y, sh);
    for (int x = 0; x < w; ++x) {
      const auto [x0, x1] = src_range(x, scale_x, sw);
      if (x1 <= x0 || y1 <= y0) continue;
      if (S(x1, y1) - S(x0, y1) - S(x1, y0) + S(x0, y0) > 0) out.set(x, y);
    }
  }
  return out;
}

BoxTransform box_transform_for(const PerturbSpec& spec, int width, int height) {
  spec.validate();
  if (spec.kind != PerturbKind::Resize) return BoxTransform{1.0, 1.0, width, height};
  return BoxTransform{spec.magnitude, spec.magnitude, scaled_dim(width, spec.magnitude),
                      scaled_dim(height, spec.magnitude)};
}

Perturbed perturb(const GrayImage& image, const PerturbSpec& spec, std::uint64_t seed) {
  spec.validate();
  Perturbed out{image, box_transform_for(spec, image.width, image.height)};
  switch (spec.kind) {
    case PerturbKind::None: break;
    case PerturbKind::Jpeg: {
      const auto bytes = encode_jpeg(image, static_cast<int>(spec.magnitude));
      out.image = decode_jpeg(bytes);
      break;
    }
    case PerturbKind::Resize:
      out.image = resize_bilinear(image, out.transform.width, out.transform.height);
      break;
    case PerturbKind::Gaussian: {
      Rng rng(seed);
      const double sigma = std::sqrt(spec.magnitude);
      for (auto& p : out.image.pixels) {
        const double v = std::nearbyint(p + sigma * rng.normal());
        p = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
      break;
    }
  }
  return out;
}

Perturbed perturb(const GrayImage& image, PerturbKind kind, double magnitude, std::uint64_t seed) {
  return perturb(image, PerturbSpec{kind, magnitude}, seed);
}

std::uint64_t record_seed(std::uint64_t global_seed, std::string_view record_id) {
  return combine_seed(global_seed, fnv1a64(record_id));
}

// ---------------------------------------------------------------- report

Prediction prediction_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw ManifestError(line, line_prefix(line) + "expected a JSON object");
  Prediction p;
  p.id = required_string(j, "id", line);
  if (const auto it = j.find("completion"); it != j.end()) {
    if (!it->is_string()) throw ManifestError(line, line_prefix(line) + "completion: expected a string");
    const ParsedCompletion c = parse_completion(it->get<std::string>());
    p.label = c.label;
    p.box = c.box;
    p.explanation = c.think_text;
  }
  if (const auto it = j.find("label"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ManifestError(line, line_prefix(line) + "label: expected a string");
    p.label = label_from_name(it->get<std::string>());
    if (!p.label) throw ManifestError(line, line_prefix(line) + "label: unknown label '" + it->get<std::string>() + "'");
  }
  if (const auto it = j.find("bbox"); it != j.end() && !it->is_null()) p.box = box_from_json(*it, "bbox", line);
  if (auto m = optional_string(j, "mask_path", line)) p.mask_path = std::move(m);
  if (auto e = optional_string(j, "explanation", line)) p.explanation = std::move(e);
  return p;
}

ordered_json prediction_to_json(const Prediction& p) {
  ordered_json j;
  j["id"] = p.id;
  j["label"] = p.label ? ordered_json(label_name(*p.label)) : ordered_json(nullptr);
  if (p.box) j["bbox"] = box_to_json(*p.box);
  if (p.mask_path) j["mask_path"] = *p.mask_path;
  if (p.explanation) j["explanation"] = *p.explanation;
  return j;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> preds;
  for_each_jsonl_line(read_text_file(path),
                      [&](const json& j, std::size_t line) { preds.push_back(prediction_from_json(j, line)); });
  return preds;
}

EvalReport report(std::span<const Prediction> preds, std::span<const ManifestRecord> manifest,
                  const ReportOptions& options) {
  if (manifest.empty()) throw std::invalid_argument("report: manifest is empty");
  options.perturbation.validate();

  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.id, &p).second) throw std::invalid_argument("report: duplicate prediction id '" + p.id + "'");
  }
  std::unordered_set<std::string> seen;
  for (const auto& r : manifest) {
    if (!seen.insert(r.id).second) throw std::invalid_argument("report: duplicate manifest id '" + r.id + "'");
    if (!by_id.contains(r.id)) throw std::invalid_argument("report: no prediction for id '" + r.id + "'");
  }
  for (const auto& p : preds) {
    if (!seen.contains(p.id)) throw std::invalid_argument("report: prediction id '" + p.id + "' not in manifest");
  }

  const HashedBagOfWords default_embedder;
  const RectangleFillBackend default_backend;
  const Embedder& embedder = options.embedder ? *options.embedder : default_embedder;
  const SegmentationBackend& backend = options.backend ? *options.backend : default_backend;
  const BoxTransform tf = box_transform_for(options.perturbation, kFrameSize, kFrameSize);

  std::vector<std::optional<Label>> pred_labels;
  std::vector<Label> gt_labels;
  std::vector<LocalizationCase> cases;
  EvalReport rep;
  rep.perturbation = options.perturbation.to_string();
  double rouge_sum = 0.0, css_sum = 0.0;

  for (const auto& r : manifest) {
    const Prediction& p = *by_id.at(r.id);
    pred_labels.push_back(p.label);
    gt_labels.push_back(r.label);
    if (r.label == Label::Tampered) {
      LocalizationCase c;
      c.frame_width = tf.width;
      c.frame_height = tf.height;
      if (r.bbox) c.gt_box = tf.apply(*r.bbox);
      if (r.mask_path) c.gt_mask = tf.apply(read_mask_png(resolve(options.base_dir, *r.mask_path)));
      if (p.box) c.pred_box = tf.apply(*p.box);
      if (p.mask_path) c.pred_mask = tf.apply(read_mask_png(resolve(options.base_dir, *p.mask_path)));
      cases.push_back(std::move(c));
    }
    if (r.explanation) {
      ++rep.explanation.count;
      const std::string cand = p.explanation.value_or("");
      rouge_sum += rouge_l(*r.explanation, cand).f;
      css_sum += css(*r.explanation, cand, embedder);
    }
  }
  rep.detection = detection_metrics(pred_labels, gt_labels);
  rep.localization = localization_metrics(cases, backend);
  if (rep.explanation.count > 0) {
    rep.explanation.mean_rouge_l_f = rouge_sum / static_cast<double>(rep.explanation.count);
    rep.explanation.mean_css = css_sum / static_cast<double>(rep.explanation.count);
  }
  return rep;
}

ordered_json report_to_json(const EvalReport& rep) {
  ordered_json j;
  j["perturbation"] = rep.perturbation;
  j["frame"] = rep.frame;
  ordered_json det;
  det["count"] = rep.detection.count;
  det["accuracy"] = rep.detection.accuracy;
  det["macro_f1"] = rep.detection.macro_f1;
  ordered_json per_class;
  for (const Label l : kAllLabels) {
    const ClassStats& s = rep.detection.per_class[label_index(l)];
    per_class[std::string(label_name(l))] = ordered_json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                                                         {"support", s.support},     {"predicted", s.predicted},
                                                         {"in_macro", s.in_macro}};
  }
  det["per_class"] = per_class;
  det["binary_accuracy"] = rep.detection.binary_accuracy;
  det["binary_f1"] = rep.detection.binary_f1;
  j["detection"] = det;
  j["localization"] = ordered_json{{"tampered_count", rep.localization.tampered_count},
                                   {"mean_box_iou", rep.localization.mean_box_iou},
                                   {"mean_mask_iou", rep.localization.mean_mask_iou},
                                   {"mean_mask_f1", rep.localization.mean_mask_f1}};
  j["explanation"] = ordered_json{{"count", rep.explanation.count},
                                  {"mean_rouge_l_f", rep.explanation.mean_rouge_l_f},
                                  {"mean_css", rep.explanation.mean_css}};
  return j;
}

std::string report_to_table(const EvalReport& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "perturbation: " << rep.perturbation << "    geometry frame: " << rep.frame << "\n";
  os << std::left << std::setw(12) << "Detection" << std::right << std::setw(8) << "n" << std::setw(10) << "acc"
     << std::setw(10) << "macroF1" << std::setw(10) << "binAcc" << std::setw(10) << "binF1" << "\n";
  os << std::left << std::setw(12) << "" << std::right << std::setw(8) << rep.detection.count << std::setw(10)
     << rep.detection.accuracy << std::setw(10) << rep.detection.macro_f1 << std::setw(10)
     << rep.detection.binary_accuracy << std::setw(10) << rep.detection.binary_f1 << "\n";
  for (const Label l : kAllLabels) {
    const ClassStats& s = rep.detection.per_class[label_index(l)];
    os << std::left << std::setw(20) << ("  " + std::string(label_name(l))) << std::right << std::setw(10) << "P"
       << std::setw(10) << s.precision << std::setw(10) << "R" << std::setw(10) << s.recall << std::setw(6) << "F1"
       << std::setw(10) << s.f1 << "\n";
  }
  os << std::left << std::setw(12) << "Localization" << std::right << std::setw(8) << "n" << std::setw(10) << "boxIoU"
     << std::setw(10) << "maskIoU" << std::setw(10) << "maskF1" << "\n";
  os << std::left << std::setw(12) << "" << std::right << std::setw(8) << rep.localization.tampered_count
     << std::setw(10) << rep.localization.mean_box_iou << std::setw(10) << rep.localization.mean_mask_iou
     << std::setw(10) << rep.localization.mean_mask_f1 << "\n";
  os << std::left << std::setw(12) << "Explanation" << std::right << std::setw(8) << "n" << std::setw(10) << "ROUGE-L"
     << std::setw(10) << "CSS" << "\n";
  os << std::left << std::setw(12) << "" << std::right << std::setw(8) << rep.explanation.count << std::setw(10)
     << rep.explanation.mean_rouge_l_f << std::setw(10) << rep.explanation.mean_css << "\n";
  return os.str();
}

}  // namespace sofake
