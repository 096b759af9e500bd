#include "sofake/geometry.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace sofake {

Mask::Mask(int width, int height) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("mask dimensions must be positive");
  bits_.assign(static_cast<std::size_t>(width) * height, 0);
}

Mask::Mask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  if (width < 1 || height < 1) throw std::invalid_argument("mask dimensions must be positive");
  if (bits_.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("mask bit count does not match width*height");
  }
  for (auto& b : bits_) b = b != 0 ? 1 : 0;
}

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }

long long box_intersection_area(const BBox& a, const BBox& b) {
  const long long w = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const long long h = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  return w * h;
}

long long box_union_area(const BBox& a, const BBox& b) { return a.area() + b.area() - box_intersection_area(a, b); }

double box_iou(const BBox& a, const BBox& b) {
  const long long uni = box_union_area(a, b);
  if (uni <= 0) return 0.0;
  return static_cast<double>(box_intersection_area(a, b)) / static_cast<double>(uni);
}

int box_l1(const BBox& a, const BBox& b) {
  return std::abs(a.x1 - b.x1) + std::abs(a.y1 - b.y1) + std::abs(a.x2 - b.x2) + std::abs(a.y2 - b.y2);
}

std::optional<BBox> mask_to_bbox(const Mask& m) {
  int x1 = m.width(), y1 = m.height(), x2 = -1, y2 = -1;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y)) continue;
      x1 = std::min(x1, x);
      y1 = std::min(y1, y);
      x2 = std::max(x2, x);
      y2 = std::max(y2, y);
    }
  }
  if (x2 < 0) return std::nullopt;
  return BBox{x1, y1, x2 + 1, y2 + 1};
}

Mask box_to_mask(const BBox& b, int width, int height) {
  if (!b.valid(width, height)) {
    throw std::out_of_range("box (" + std::to_string(b.x1) + "," + std::to_string(b.y1) + "," + std::to_string(b.x2) +
                            "," + std::to_string(b.y2) + ") outside " + std::to_string(width) + "x" +
                            std::to_string(height) + " raster");
  }
  Mask m(width, height);
  for (int y = b.y1; y < b.y2; ++y) {
    for (int x = b.x1; x < b.x2; ++x) m.set(x, y);
  }
  return m;
}

double OverlapCounts::iou() const {
  const long long den = tp + fp + fn;
  return den == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(den);
}

double OverlapCounts::f1() const {
  const long long den = 2 * tp + fp + fn;
  return den == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(den);
}

OverlapCounts mask_overlap_counts(const Mask& pred, const Mask& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw std::invalid_argument("mask dimension mismatch");
  }
  OverlapCounts c;
  const auto& p = pred.bits();
  const auto& g = gt.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] && g[i]) {
      ++c.tp;
    } else if (p[i]) {
      ++c.fp;
    } else if (g[i]) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

Mask RectangleFillBackend::segment(const GrayImage& image, const BBox& box) const {
  return box_to_mask(box, image.width, image.height);
}

Mask read_mask_png(const std::filesystem::path& path) {
  GrayImage img = read_png(path);
  return Mask(img.width, img.height, std::move(img.pixels));
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  GrayImage img(mask.width(), mask.height());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = mask.bits()[i] ? 255 : 0;
  write_png(path, img);
}

}  // namespace sofake
