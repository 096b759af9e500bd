// Box and mask arithmetic shared by the rewards, the segmentation stub and localization metrics.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sofake/grammar.hpp"
#include "sofake/image.hpp"

namespace sofake {

/// Binary occupancy raster, row-major.
class Mask {
 public:
  Mask(int width, int height);
  Mask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool value = true) { bits_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0; }
  std::size_t count() const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

long long box_intersection_area(const BBox& a, const BBox& b);
long long box_union_area(const BBox& a, const BBox& b);

/// |A ∩ B| / |A ∪ B| under the half-open area convention.
double box_iou(const BBox& a, const BBox& b);

/// Sum of absolute coordinate differences, in pixels.
int box_l1(const BBox& a, const BBox& b);

/// Tight half-open box around all set bits; nullopt for an empty mask.
std::optional<BBox> mask_to_bbox(const Mask& m);

/// Throws std::out_of_range when the box does not fit inside width x height.
Mask box_to_mask(const BBox& b, int width, int height);

struct OverlapCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long tn = 0;

  /// tp / (tp + fp + fn); 0 when both masks are empty.
  double iou() const;
  /// 2tp / (2tp + fp + fn); 0 when both masks are empty.
  double f1() const;
};

/// Throws std::invalid_argument on a dimension mismatch.
OverlapCounts mask_overlap_counts(const Mask& pred, const Mask& gt);

/// Image raster + prompt box -> mask. Stands in for a promptable segmenter.
class SegmentationBackend {
 public:
  virtual ~SegmentationBackend() = default;
  virtual Mask segment(const GrayImage& image, const BBox& box) const = 0;
};

/// Default backend: fills the prompt box.
class RectangleFillBackend final : public SegmentationBackend {
 public:
  Mask segment(const GrayImage& image, const BBox& box) const override;
};

/// Single-channel PNG, nonzero = set.
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

}  // namespace sofake
