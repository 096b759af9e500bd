// 8-bit grayscale rasters and their PNG / JPEG codecs.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sofake {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Reads any PNG and converts it to 8-bit grayscale. Throws std::runtime_error.
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& image);

std::vector<std::uint8_t> encode_jpeg(const GrayImage& image, int quality);
GrayImage decode_jpeg(std::span<const std::uint8_t> bytes);

/// Bilinear resampling with half-pixel centers and edge clamping.
GrayImage resize_bilinear(const GrayImage& image, int new_width, int new_height);

/// Peak signal-to-noise ratio on the 0-255 scale; +inf for identical images.
double psnr(const GrayImage& a, const GrayImage& b);

}  // namespace sofake
