#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "genrelens/image.hpp"

namespace genrelens::features {

enum class FeatureKind : int {
  semantic = 0,
  font_style = 1,
  char_color = 2,
  bg_color = 3,
  height = 4,
  position = 5,
};

/// Canonical token order in the word-level encoder.
inline constexpr std::array<FeatureKind, 6> kAllKinds = {
    FeatureKind::semantic,  FeatureKind::font_style, FeatureKind::char_color,
    FeatureKind::bg_color,  FeatureKind::height,     FeatureKind::position};

std::string kind_name(FeatureKind kind);
FeatureKind kind_from_name(const std::string& name);

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
};

/// All raw features of one word. Vector features share one dimension
/// (300 by default); height and position stay raw scalars until the model's
/// adapters expand them.
struct FeatureBundle {
  std::map<FeatureKind, std::vector<double>> vectors;  // semantic/font/colors
  double height_raw = 0.0;
  std::array<double, 2> position_raw = {0.0, 0.0};
  std::set<FeatureKind> present;

  bool has(FeatureKind kind) const { return present.count(kind) > 0; }
};

double relative_height(const BBox& bbox, double cover_height);
std::array<double, 2> relative_position(const BBox& bbox, double cover_width,
                                        double cover_height);

// --- embeddings -----------------------------------------------------------

/// Case-insensitive word -> fixed-dimension vector map.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 300) : dim_(dim) {}

  /// Deterministic stub: every queried word hashes to a seeded unit-norm
  /// vector, so lookups never miss. Drop-in stand-in for a word2vec export.
  static EmbeddingTable deterministic_stub(std::size_t dim, std::uint64_t seed);

  /// Plain-text `<word> <v1> ... <vdim>` per line, UTF-8, keys lowercased.
  static EmbeddingTable load_file(const std::string& path, std::size_t dim);

  void insert(const std::string& word, std::vector<double> vector);
  bool contains(const std::string& word) const;
  /// Throws OutOfVocabulary when absent (and not in stub mode).
  std::vector<double> lookup(const std::string& word) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::size_t dim_;
  bool stub_mode_ = false;
  std::uint64_t stub_seed_ = 0;
  std::map<std::string, std::vector<double>> table_;
};

std::string lowercase(const std::string& word);
std::uint64_t fnv1a64(const std::string& text, std::uint64_t seed = 0);

/// Precomputed per-record design embeddings (e.g. real font-CNN outputs),
/// `<record_id> <dim reals>` per line.
class PrecomputedEmbeddings {
 public:
  static PrecomputedEmbeddings load_file(const std::string& path,
                                         std::size_t dim);
  void insert(const std::string& record_id, std::vector<double> vector);
  /// Throws MissingEmbedding when the id is absent.
  std::vector<double> lookup(const std::string& record_id) const;
  bool contains(const std::string& record_id) const;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> table_;
};

// --- extraction -----------------------------------------------------------

struct ExtractorConfig {
  std::size_t feature_dim = 300;
  std::size_t raster_grid_h = 15;  // grid_h * grid_w == feature_dim
  std::size_t raster_grid_w = 20;
  std::size_t color_top_k = 100;   // 3 * color_top_k == feature_dim
  const PrecomputedEmbeddings* font_provider = nullptr;  // overrides raster

  static ExtractorConfig for_dim(std::size_t dim);
};

std::vector<double> semantic_embedding(const std::string& word,
                                       const EmbeddingTable& table);

std::vector<double> font_embedding(const img::GlyphCrop& crop,
                                   const ExtractorConfig& config,
                                   const std::string& record_id);

/// Runs every extractor over one word's crop and geometry. Precomputed
/// vectors (when given) take precedence over recomputation.
FeatureBundle extract_bundle(
    const std::string& record_id, const std::string& text, const BBox& bbox,
    double cover_width, double cover_height, const img::GlyphCrop* crop,
    const std::map<FeatureKind, std::vector<double>>* precomputed,
    const EmbeddingTable& table, const ExtractorConfig& config);

}  // namespace genrelens::features
