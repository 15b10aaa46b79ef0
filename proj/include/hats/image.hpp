#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hats::image {

/// Interleaved row-major 8-bit raster with 1 (gray) or 3 (RGB) channels.
/// Binary masks use c=1 with values 0 and 255 only.
struct Image {
  int w = 0;
  int h = 0;
  int c = 0;
  std::vector<uint8_t> pix;

  static Image make(int w, int h, int c, uint8_t fill = 0);

  uint8_t& at(int x, int y, int ch = 0) {
    return pix[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  uint8_t at(int x, int y, int ch = 0) const {
    return pix[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  bool operator==(const Image&) const = default;
};

/// PPM (P6) for 3-channel images, PGM (P5) for single-channel, maxval 255.
Image read_raster(const std::filesystem::path& path);
void write_raster(const Image& img, const std::filesystem::path& path);

/// Mean pool over factor×factor blocks; w and h must be divisible by factor.
Image box_downsample(const Image& img, int factor);

/// Block-center point sampling. For masks this preserves containment and
/// disjointness exactly at every factor (a point belongs to at most one of
/// two disjoint sets), which mean-pool + threshold does not.
Image nearest_downsample(const Image& img, int factor);

/// Maps a downsampled mask back to binary: values ≥128 become 255, else 0.
Image threshold_mask(const Image& img);

/// side×side window at (x0, y0); pixels outside the source read as 0.
Image crop_pad(const Image& img, int x0, int y0, int side);

long count_foreground(const Image& mask);

}  // namespace hats::image
