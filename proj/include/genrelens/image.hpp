#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace genrelens::img {

/// 8-bit RGB raster, row-major.
struct GlyphCrop {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  bool valid() const {
    return width > 0 && height > 0 &&
           pixels.size() == std::size_t(3 * width * height);
  }
  const std::uint8_t* px(int x, int y) const {
    return pixels.data() + 3 * (std::size_t(y) * width + x);
  }
  std::uint8_t* px(int x, int y) {
    return pixels.data() + 3 * (std::size_t(y) * width + x);
  }
};

/// Rounded luma 0.299 R + 0.587 G + 0.114 B per pixel.
std::vector<std::uint8_t> to_grayscale(const GlyphCrop& crop);

/// Threshold maximizing between-class variance; ties go to the smallest t.
/// Throws DegenerateImage on a constant image.
int otsu_threshold(const std::vector<std::uint8_t>& gray);

/// Binarizes at the Otsu threshold and labels the binary class holding the
/// majority of the 1-pixel border as background. Exact border tie: the class
/// of pixel (0,0) is background. Masks partition the crop.
struct RegionMasks {
  std::vector<bool> character;   // width*height
  std::vector<bool> background;
};
RegionMasks split_char_background(const GlyphCrop& crop);

/// Top-k exact RGB triples under the mask by descending count (ties by packed
/// R<<16|G<<8|B ascending), channels scaled by 1/255, zero-padded to 3k.
std::vector<double> top_k_color_feature(const GlyphCrop& crop,
                                        const std::vector<bool>& mask,
                                        std::size_t k = 100);

/// Aspect-preserving resize to height 64 (or width 128 when that would
/// overflow), bilinear, then centered black padding to exactly 64x128.
GlyphCrop canonicalize_glyph(const GlyphCrop& crop);

constexpr int kCanonicalHeight = 64;
constexpr int kCanonicalWidth = 128;

/// Default font-style embedder: grayscale the canonical crop, area-average
/// onto a grid_h x grid_w grid, scale to [0,1]. grid_h*grid_w is the
/// embedding dimension (15x20 = 300 by default).
std::vector<double> raster_font_embedding(const GlyphCrop& canonical,
                                          std::size_t grid_h = 15,
                                          std::size_t grid_w = 20);

GlyphCrop read_png(const std::string& path);
void write_png(const GlyphCrop& crop, const std::string& path);

}  // namespace genrelens::img
