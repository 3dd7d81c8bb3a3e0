#include "genrelens/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "genrelens/errors.hpp"

namespace genrelens::data {

using features::FeatureKind;
using nlohmann::json;

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

// Character palettes: dark, mutually distant colors (luma well below the
// light backgrounds so Otsu separates regions despite jitter).
constexpr std::array<Rgb, kCharPaletteCount> kCharPalettes = {{
    {180, 20, 20},   // red
    {20, 140, 20},   // green
    {30, 30, 200},   // blue
    {120, 20, 160},  // purple
    {20, 130, 130},  // teal
}};

// Background palettes: light tints.
constexpr std::array<Rgb, 5> kBgPalettes = {{
    {250, 250, 250},
    {250, 215, 215},
    {215, 250, 215},
    {215, 215, 250},
    {250, 250, 200},
}};

// Stripe textures: (stripe, gap, horizontal?)
struct Texture {
  int stripe, gap;
  bool horizontal;
};
constexpr std::array<Texture, 5> kTextures = {{
    {2, 2, false},
    {5, 2, false},
    {2, 5, false},
    {3, 3, true},
    {6, 2, true},
}};

// Vertical bands for position-driven genres (fraction of cover height).
constexpr std::array<double, 5> kPositionBands = {0.02, 0.25, 0.48, 0.66, 0.86};
constexpr double kPositionBandWidth = 0.06;

// Relative-height bands for height-driven genres.
constexpr std::array<std::pair<double, double>, 5> kHeightBands = {{
    {0.030, 0.038},
    {0.046, 0.054},
    {0.062, 0.070},
    {0.078, 0.086},
    {0.094, 0.102},
}};

constexpr int kCoverWidth = 400;
constexpr int kCoverHeight = 600;

std::uint8_t jitter(std::uint8_t base, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-8, 8);
  return std::uint8_t(std::clamp(int(base) + d(rng), 0, 255));
}

}  // namespace

PlantedCrop synth_crop(int width, int height, std::size_t char_palette,
                       std::size_t bg_palette, std::size_t texture,
                       std::mt19937_64& rng) {
  const Rgb fg = kCharPalettes[char_palette % kCharPalettes.size()];
  const Rgb bg = kBgPalettes[bg_palette % kBgPalettes.size()];
  const Texture tex = kTextures[texture % kTextures.size()];

  PlantedCrop out;
  out.crop.width = width;
  out.crop.height = height;
  out.crop.pixels.resize(std::size_t(3) * width * height);
  out.char_mask.assign(std::size_t(width) * height, false);

  constexpr int margin = 2;  // border stays pure background
  int period = tex.stripe + tex.gap;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      bool interior = x >= margin && x < width - margin && y >= margin &&
                      y < height - margin;
      int phase = tex.horizontal ? (y - margin) % period : (x - margin) % period;
      bool is_char = interior && phase < tex.stripe;
      out.char_mask[std::size_t(y) * width + x] = is_char;
      const Rgb& c = is_char ? fg : bg;
      std::uint8_t* p = out.crop.px(x, y);
      p[0] = jitter(c.r, rng);
      p[1] = jitter(c.g, rng);
      p[2] = jitter(c.b, rng);
    }
  }
  return out;
}

std::vector<GenreDriver> SynthManifest::design_only() const {
  std::vector<GenreDriver> out;
  for (const auto& d : drivers)
    if (d.mode == "design") out.push_back(d);
  return out;
}

const GenreDriver& SynthManifest::driver(int genre) const {
  for (const auto& d : drivers)
    if (d.genre == genre) return d;
  throw InvalidConfig("no driver for genre " + std::to_string(genre));
}

json SynthManifest::to_json() const {
  json j;
  j["char_palette_count"] = char_palette_count;
  j["bg_palette_count"] = bg_palette_count;
  j["expected_words_per_book"] = expected_words_per_book;
  json ds = json::array();
  for (const auto& d : drivers) {
    json dj;
    dj["genre"] = d.genre;
    dj["mode"] = d.mode;
    if (d.design_kind) dj["design_kind"] = features::kind_name(*d.design_kind);
    if (d.design_variant >= 0) dj["design_variant"] = d.design_variant;
    ds.push_back(dj);
  }
  j["drivers"] = ds;
  return j;
}

SynthManifest SynthManifest::from_json(const json& j) {
  SynthManifest m;
  m.char_palette_count = j.at("char_palette_count").get<std::size_t>();
  m.bg_palette_count = j.at("bg_palette_count").get<std::size_t>();
  m.expected_words_per_book = j.at("expected_words_per_book").get<double>();
  for (const auto& dj : j.at("drivers")) {
    GenreDriver d;
    d.genre = dj.at("genre").get<int>();
    d.mode = dj.at("mode").get<std::string>();
    if (dj.contains("design_kind"))
      d.design_kind = features::kind_from_name(dj.at("design_kind"));
    d.design_variant = dj.value("design_variant", -1);
    m.drivers.push_back(d);
  }
  return m;
}

SynthResult synth_generate(const SynthConfig& config) {
  if (config.genres < 1 || config.genres > kNumGenres)
    throw InvalidConfig("genres must be in [1, 30]");
  if (config.books_per_genre < 2)
    throw InvalidConfig("books_per_genre must be >= 2");
  if (config.min_words < 1 || config.max_words < config.min_words)
    throw InvalidConfig("bad word count range");
  if (config.design_kinds.empty())
    throw InvalidConfig("design_kinds must be non-empty");

  std::mt19937_64 rng(config.seed);
  SynthResult out;
  out.manifest.char_palette_count = kCharPaletteCount;
  out.manifest.bg_palette_count = kBgPalettes.size();
  out.manifest.expected_words_per_book =
      0.5 * (config.min_words + config.max_words);

  // Driver assignment: leading block design-only, then word-only, rest dual.
  int n_design = int(std::lround(config.design_fraction * config.genres));
  int n_word = int(std::lround(config.word_fraction * config.genres));
  std::map<FeatureKind, int> variant_counter;
  for (int g = 0; g < config.genres; ++g) {
    GenreDriver d;
    d.genre = g;
    if (g < n_design) d.mode = "design";
    else if (g < n_design + n_word) d.mode = "word";
    else d.mode = "both";
    if (d.mode != "word") {
      // Design-carrying genres cycle through the configured kinds in genre
      // order; variants cycle within each kind.
      std::size_t idx = std::size_t(g < n_design ? g : g - n_design - n_word) %
                        config.design_kinds.size();
      d.design_kind = config.design_kinds[idx];
      d.design_variant = variant_counter[*d.design_kind]++ % 5;
    }
    out.manifest.drivers.push_back(d);
  }

  // Word pools. Shared pool for design-only genres; per-genre pools otherwise.
  std::vector<std::string> shared_pool;
  for (int i = 0; i < 200; ++i)
    shared_pool.push_back("common" + std::to_string(i));

  int n_test = config.test_fraction >= 1.0
                   ? config.books_per_genre
                   : std::clamp(int(std::lround(config.test_fraction *
                                                config.books_per_genre)),
                                1, config.books_per_genre - 1);

  std::uniform_int_distribution<int> word_count_dist(config.min_words,
                                                     config.max_words);
  std::uniform_int_distribution<int> height_px(20, 40);
  std::uniform_int_distribution<std::size_t> palette_dist(0, kCharPaletteCount - 1);
  std::uniform_int_distribution<std::size_t> bg_dist(0, kBgPalettes.size() - 1);
  std::uniform_int_distribution<std::size_t> tex_dist(0, kTextures.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int g = 0; g < config.genres; ++g) {
    const GenreDriver& driver = out.manifest.drivers[std::size_t(g)];
    std::vector<std::string> genre_pool;
    if (driver.mode != "design")
      for (int i = 0; i < 12; ++i)
        genre_pool.push_back("g" + std::to_string(g) + "word" + std::to_string(i));

    for (int b = 0; b < config.books_per_genre; ++b) {
      BookSample book;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "g%02d_b%04d", g, b);
      book.book_id = buf;
      book.genre = g;
      book.cover_width = kCoverWidth;
      book.cover_height = kCoverHeight;

      int n_words = word_count_dist(rng);
      for (int wi = 0; wi < n_words; ++wi) {
        WordRecord w;
        w.id = book.book_id + "_w" + std::to_string(wi);
        const auto& pool = driver.mode == "design" ? shared_pool : genre_pool;
        w.text = pool[std::uniform_int_distribution<std::size_t>(
            0, pool.size() - 1)(rng)];

        std::size_t char_palette = palette_dist(rng);
        std::size_t bg_palette = bg_dist(rng);
        std::size_t texture = tex_dist(rng);
        int h = height_px(rng);
        double y_frac = unit(rng) * 0.85;
        double x_frac = unit(rng) * 0.6;

        if (driver.design_kind) {
          switch (*driver.design_kind) {
            case FeatureKind::char_color:
              char_palette = std::size_t(driver.design_variant);
              break;
            case FeatureKind::bg_color:
              bg_palette = std::size_t(driver.design_variant);
              break;
            case FeatureKind::font_style:
              texture = std::size_t(driver.design_variant);
              break;
            case FeatureKind::position:
              y_frac = kPositionBands[std::size_t(driver.design_variant)] +
                       unit(rng) * kPositionBandWidth;
              break;
            case FeatureKind::height: {
              auto [lo, hi] = kHeightBands[std::size_t(driver.design_variant)];
              h = int(std::lround((lo + unit(rng) * (hi - lo)) * kCoverHeight));
              break;
            }
            case FeatureKind::semantic:
              throw InvalidConfig("semantic is not a design kind");
          }
        }

        int wpx = 2 * h;
        w.bbox.h = h;
        w.bbox.w = wpx;
        w.bbox.x = std::floor(x_frac * (kCoverWidth - wpx));
        w.bbox.y = std::floor(y_frac * kCoverHeight);
        w.bbox.y = std::min(w.bbox.y, double(kCoverHeight - h));

        w.crop = synth_crop(wpx, h, char_palette, bg_palette, texture, rng).crop;
        book.words.push_back(std::move(w));
      }

      bool is_test = b >= config.books_per_genre - n_test;
      (is_test ? out.split.test : out.split.train).push_back(std::move(book));
    }
  }
  return out;
}

}  // namespace genrelens::data
