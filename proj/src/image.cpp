#include "genrelens/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include <png.h>

#include "genrelens/errors.hpp"

namespace genrelens::img {

std::vector<std::uint8_t> to_grayscale(const GlyphCrop& crop) {
  std::vector<std::uint8_t> gray(std::size_t(crop.width) * crop.height);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const std::uint8_t* p = crop.pixels.data() + 3 * i;
    double luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    gray[i] = std::uint8_t(std::lround(luma));
  }
  return gray;
}

int otsu_threshold(const std::vector<std::uint8_t>& gray) {
  std::size_t hist[256] = {0};
  for (std::uint8_t g : gray) ++hist[g];
  int lo = 0, hi = 255;
  while (lo < 256 && hist[lo] == 0) ++lo;
  while (hi >= 0 && hist[hi] == 0) --hi;
  if (lo >= hi) throw DegenerateImage("constant image has no Otsu threshold");

  double total = double(gray.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += double(i) * double(hist[i]);

  int best_t = 0;
  double best_var = -1.0;
  double w0 = 0.0, sum0 = 0.0;
  for (int t = 0; t < 255; ++t) {
    w0 += double(hist[t]);
    sum0 += double(t) * double(hist[t]);
    double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    double mu0 = sum0 / w0;
    double mu1 = (sum_all - sum0) / w1;
    double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {  // strict: ties keep the smallest t
      best_var = var;
      best_t = t;
    }
  }
  return best_t;
}

RegionMasks split_char_background(const GlyphCrop& crop) {
  if (!crop.valid()) throw InvalidGeometry("invalid glyph crop");
  std::vector<std::uint8_t> gray = to_grayscale(crop);
  int t = otsu_threshold(gray);

  std::size_t n = gray.size();
  std::vector<bool> above(n);
  for (std::size_t i = 0; i < n; ++i) above[i] = gray[i] > t;

  // Majority vote over the 1-pixel border.
  std::size_t border_above = 0, border_total = 0;
  auto vote = [&](int x, int y) {
    ++border_total;
    if (above[std::size_t(y) * crop.width + x]) ++border_above;
  };
  for (int x = 0; x < crop.width; ++x) {
    vote(x, 0);
    if (crop.height > 1) vote(x, crop.height - 1);
  }
  for (int y = 1; y + 1 < crop.height; ++y) {
    vote(0, y);
    if (crop.width > 1) vote(crop.width - 1, y);
  }

  bool bg_is_above;
  if (2 * border_above > border_total) bg_is_above = true;
  else if (2 * border_above < border_total) bg_is_above = false;
  else bg_is_above = above[0];  // exact tie: class of pixel (0,0)

  RegionMasks masks;
  masks.character.resize(n);
  masks.background.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    bool bg = (above[i] == bg_is_above);
    masks.background[i] = bg;
    masks.character[i] = !bg;
  }
  return masks;
}

std::vector<double> top_k_color_feature(const GlyphCrop& crop,
                                        const std::vector<bool>& mask,
                                        std::size_t k) {
  if (!crop.valid() || mask.size() != std::size_t(crop.width) * crop.height)
    throw InvalidGeometry("mask does not match crop");
  std::unordered_map<std::uint32_t, std::size_t> counts;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const std::uint8_t* p = crop.pixels.data() + 3 * i;
    std::uint32_t packed = (std::uint32_t(p[0]) << 16) |
                           (std::uint32_t(p[1]) << 8) | p[2];
    ++counts[packed];
  }
  if (counts.empty()) throw EmptyRegion("mask selects no pixels");

  std::vector<std::pair<std::uint32_t, std::size_t>> ranked(counts.begin(),
                                                            counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<double> feature(3 * k, 0.0);
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    std::uint32_t c = ranked[i].first;
    feature[3 * i + 0] = double((c >> 16) & 0xFF) / 255.0;
    feature[3 * i + 1] = double((c >> 8) & 0xFF) / 255.0;
    feature[3 * i + 2] = double(c & 0xFF) / 255.0;
  }
  return feature;
}

namespace {

GlyphCrop bilinear_resize(const GlyphCrop& src, int out_w, int out_h) {
  GlyphCrop out;
  out.width = out_w;
  out.height = out_h;
  out.pixels.assign(std::size_t(3) * out_w * out_h, 0);
  double sx = double(src.width) / out_w;
  double sy = double(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, src.height - 1);
    y0 = std::clamp(y0, 0, src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, src.width - 1);
      x0 = std::clamp(x0, 0, src.width - 1);
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * src.px(x0, y0)[c] + wx * src.px(x1, y0)[c]) +
                   wy * ((1 - wx) * src.px(x0, y1)[c] + wx * src.px(x1, y1)[c]);
        out.px(x, y)[c] = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace

GlyphCrop canonicalize_glyph(const GlyphCrop& crop) {
  if (!crop.valid()) throw InvalidGeometry("invalid glyph crop");
  if (crop.width == kCanonicalWidth && crop.height == kCanonicalHeight)
    return crop;
  double s = std::min(double(kCanonicalHeight) / crop.height,
                      double(kCanonicalWidth) / crop.width);
  int rw = std::max(1, int(std::lround(crop.width * s)));
  int rh = std::max(1, int(std::lround(crop.height * s)));
  rw = std::min(rw, kCanonicalWidth);
  rh = std::min(rh, kCanonicalHeight);
  GlyphCrop scaled = bilinear_resize(crop, rw, rh);

  GlyphCrop out;
  out.width = kCanonicalWidth;
  out.height = kCanonicalHeight;
  out.pixels.assign(std::size_t(3) * kCanonicalWidth * kCanonicalHeight, 0);
  int off_x = (kCanonicalWidth - rw) / 2;
  int off_y = (kCanonicalHeight - rh) / 2;
  for (int y = 0; y < rh; ++y)
    std::memcpy(out.px(off_x, y + off_y), scaled.px(0, y), std::size_t(3) * rw);
  return out;
}

std::vector<double> raster_font_embedding(const GlyphCrop& canonical,
                                          std::size_t grid_h,
                                          std::size_t grid_w) {
  if (canonical.width != kCanonicalWidth || canonical.height != kCanonicalHeight)
    throw InvalidGeometry("raster embedding expects a canonical 64x128 crop");
  std::vector<std::uint8_t> gray = to_grayscale(canonical);
  std::vector<double> feature(grid_h * grid_w, 0.0);
  // Exact area average of each cell's pixel span (cells may be fractional).
  double cell_h = double(kCanonicalHeight) / grid_h;
  double cell_w = double(kCanonicalWidth) / grid_w;
  for (std::size_t gy = 0; gy < grid_h; ++gy) {
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      double y0 = gy * cell_h, y1 = (gy + 1) * cell_h;
      double x0 = gx * cell_w, x1 = (gx + 1) * cell_w;
      double acc = 0.0, area = 0.0;
      for (int y = int(std::floor(y0)); y < int(std::ceil(y1)); ++y) {
        double oy = std::min(y1, double(y + 1)) - std::max(y0, double(y));
        if (oy <= 0) continue;
        for (int x = int(std::floor(x0)); x < int(std::ceil(x1)); ++x) {
          double ox = std::min(x1, double(x + 1)) - std::max(x0, double(x));
          if (ox <= 0) continue;
          acc += oy * ox * gray[std::size_t(y) * kCanonicalWidth + x];
          area += oy * ox;
        }
      }
      feature[gy * grid_w + gx] = acc / (area * 255.0);
    }
  }
  return feature;
}

GlyphCrop read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DataError("cannot read PNG " + path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  GlyphCrop crop;
  crop.width = int(image.width);
  crop.height = int(image.height);
  crop.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, crop.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path + ": " + image.message);
  }
  return crop;
}

void write_png(const GlyphCrop& crop, const std::string& path) {
  if (!crop.valid()) throw InvalidGeometry("invalid glyph crop");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(crop.width);
  image.height = png_uint_32(crop.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, crop.pixels.data(), 0,
                               nullptr))
    throw DataError("cannot write PNG " + path + ": " + image.message);
}

}  // namespace genrelens::img
