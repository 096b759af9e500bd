// Dataset manifests, detection / localization / explanation metrics and the
// robustness perturbation protocol.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sofake/geometry.hpp"
#include "sofake/grammar.hpp"
#include "sofake/image.hpp"

namespace sofake {

// ---------------------------------------------------------------- manifest

enum class Split { Train, Val, Ood };

std::string_view split_name(Split split);
std::optional<Split> split_from_name(std::string_view name);

struct ManifestRecord {
  std::string id;
  std::string image_path;
  Label label = Label::Real;
  std::optional<std::string> mask_path;
  std::optional<BBox> bbox;
  std::optional<std::string> generator_tag;
  std::optional<std::string> category;
  Split split = Split::Train;
  std::optional<std::string> explanation;

  /// Ground truth for reward scoring; the box falls back to the mask's bounding box when only a mask is given.
  GroundTruth ground_truth(const std::filesystem::path& base_dir = {}) const;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// Thrown for malformed manifests; line is 1-based, 0 when not line-addressed.
class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

nlohmann::ordered_json manifest_record_to_json(const ManifestRecord& record);
/// Throws ManifestError(line) on schema violations.
ManifestRecord manifest_record_from_json(const nlohmann::json& j, std::size_t line = 0);

std::vector<ManifestRecord> parse_manifest(std::string_view jsonl);
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);

// ---------------------------------------------------------------- detection

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;    // ground-truth count
  long long predicted = 0;  // prediction count
  bool in_macro = false;
};

struct DetectionMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<ClassStats, 3> per_class{};  // indexed like kAllLabels
  double binary_accuracy = 0.0;           // REAL vs {TAMPERED, FULL_SYNTHETIC}
  double binary_f1 = 0.0;                 // positive class: fake
};

/// An absent prediction is wrong for its ground-truth class and predicts no class.
/// A class absent from the ground truth enters the macro mean (with F1 0) only if it was predicted.
/// Throws std::invalid_argument on empty input or a length mismatch.
DetectionMetrics detection_metrics(std::span<const std::optional<Label>> preds, std::span<const Label> gts);

// ---------------------------------------------------------------- localization

struct LocalizationCase {
  std::optional<BBox> pred_box;
  std::optional<Mask> pred_mask;
  std::optional<BBox> gt_box;
  std::optional<Mask> gt_mask;
  int frame_width = kFrameSize;
  int frame_height = kFrameSize;
};

struct LocalizationMetrics {
  std::size_t tampered_count = 0;
  double mean_box_iou = 0.0;
  double mean_mask_iou = 0.0;
  double mean_mask_f1 = 0.0;
};

/// Every case is a TAMPERED ground truth. Missing masks are rasterized from boxes through `backend`.
/// Throws std::invalid_argument when a case has neither gt box nor gt mask.
LocalizationMetrics localization_metrics(std::span<const LocalizationCase> cases,
                                         const SegmentationBackend& backend = RectangleFillBackend{});

// ---------------------------------------------------------------- explanation

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Lower-cased alphanumeric runs; bytes >= 0x80 count as alphanumeric so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
RougeScore rouge_l(std::string_view reference, std::string_view candidate);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Each token adds 1 at fnv1a32(token) mod dim; the sum is L2-normalized.
class HashedBagOfWords final : public Embedder {
 public:
  explicit HashedBagOfWords(std::size_t dim = 256);
  std::vector<double> embed(std::string_view text) const override;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
};

/// Cosine similarity of the embeddings; 0 when either is the zero vector.
double css(std::string_view reference, std::string_view candidate, const Embedder& embedder);

// ---------------------------------------------------------------- perturbation

enum class PerturbKind { None, Jpeg, Resize, Gaussian };

struct PerturbSpec {
  PerturbKind kind = PerturbKind::None;
  double magnitude = 0.0;

  /// "none", "jpeg:<quality>", "resize:<scale>", "gaussian:<variance>". Throws std::invalid_argument.
  static PerturbSpec parse(std::string_view text);
  std::string to_string() const;
  void validate() const;
};

/// Maps boxes from the original frame into the perturbed frame.
struct BoxTransform {
  double scale_x = 1.0;
  double scale_y = 1.0;
  int width = kFrameSize;   // perturbed frame
  int height = kFrameSize;

  /// (x1, y1) map through floor, (x2, y2) through ceil, clamped to the frame.
  BBox apply(const BBox& box) const;
  /// A perturbed-frame pixel is set when the scaled source mask covers any part of it.
  Mask apply(const Mask& mask) const;
};

/// Geometry mapping induced by `spec` on a width x height frame.
BoxTransform box_transform_for(const PerturbSpec& spec, int width, int height);

struct Perturbed {
  GrayImage image;
  BoxTransform transform;
};

Perturbed perturb(const GrayImage& image, const PerturbSpec& spec, std::uint64_t seed);
Perturbed perturb(const GrayImage& image, PerturbKind kind, double magnitude, std::uint64_t seed);

/// Seed for one record's perturbation, independent of evaluation order.
std::uint64_t record_seed(std::uint64_t global_seed, std::string_view record_id);

// ---------------------------------------------------------------- report

struct Prediction {
  std::string id;
  std::optional<Label> label;
  std::optional<BBox> box;
  std::optional<std::string> mask_path;
  std::optional<std::string> explanation;
};

/// Accepts {id, completion} (the completion is parsed) or {id, label, bbox, mask_path, explanation}.
Prediction prediction_from_json(const nlohmann::json& j, std::size_t line = 0);
nlohmann::ordered_json prediction_to_json(const Prediction& p);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

struct ExplanationMetrics {
  std::size_t count = 0;
  double mean_rouge_l_f = 0.0;
  double mean_css = 0.0;
};

struct EvalReport {
  std::string perturbation = "none";
  std::string frame = "perturbed";
  DetectionMetrics detection;
  LocalizationMetrics localization;
  ExplanationMetrics explanation;
};

struct ReportOptions {
  PerturbSpec perturbation;
  std::uint64_t seed = 0;
  std::filesystem::path base_dir;  // resolves relative mask paths
  const Embedder* embedder = nullptr;  // defaults to HashedBagOfWords(256)
  const SegmentationBackend* backend = nullptr;
};

/// Predictions and records are joined by id. Ground-truth and predicted geometry both go through the
/// perturbation's box transform. Throws std::invalid_argument on an empty manifest, duplicate or missing ids.
EvalReport report(std::span<const Prediction> preds, std::span<const ManifestRecord> manifest,
                  const ReportOptions& options = {});

nlohmann::ordered_json report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace sofake
