#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrelens/dataset.hpp"
#include "genrelens/features.hpp"

namespace genrelens::data {

/// Synthetic corpus with planted genre <-> design correlations. Each genre is
/// separable only through word choice, only through one designated design
/// feature, or through both; the manifest records which.
struct SynthConfig {
  int genres = kNumGenres;
  int books_per_genre = 10;  // >= 2
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  int min_words = 4;
  int max_words = 10;
  /// Which design kinds drive the design-only and dual-driven genres
  /// (cycled in order).
  std::vector<features::FeatureKind> design_kinds = {
      features::FeatureKind::char_color, features::FeatureKind::bg_color,
      features::FeatureKind::position};
  /// Fractions of genres that are design-only / word-only; remainder is dual.
  double design_fraction = 1.0 / 3.0;
  double word_fraction = 1.0 / 3.0;
};

struct GenreDriver {
  int genre = 0;
  std::string mode;  // "word" | "design" | "both"
  std::optional<features::FeatureKind> design_kind;
  int design_variant = -1;  // palette id / position band / texture id
};

struct SynthManifest {
  std::vector<GenreDriver> drivers;
  std::size_t char_palette_count = 0;
  std::size_t bg_palette_count = 0;
  double expected_words_per_book = 0.0;

  std::vector<GenreDriver> design_only() const;
  const GenreDriver& driver(int genre) const;

  nlohmann::json to_json() const;
  static SynthManifest from_json(const nlohmann::json& j);
};

struct SynthResult {
  DatasetSplit split;
  SynthManifest manifest;
};

/// Deterministic in `config.seed` (bit-identical corpora).
SynthResult synth_generate(const SynthConfig& config);

/// Number of distinct character-color palettes the generator plants; the
/// color feature of the whole corpus clusters into exactly this many groups.
constexpr std::size_t kCharPaletteCount = 5;

/// One procedural 2-color crop plus its ground-truth character mask
/// (exposed so extraction can be checked against the planting map).
struct PlantedCrop {
  img::GlyphCrop crop;
  std::vector<bool> char_mask;
};

PlantedCrop synth_crop(int width, int height, std::size_t char_palette,
                       std::size_t bg_palette, std::size_t texture,
                       std::mt19937_64& rng);

}  // namespace genrelens::data
