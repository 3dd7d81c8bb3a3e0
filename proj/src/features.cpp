#include "genrelens/features.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "genrelens/errors.hpp"

namespace genrelens::features {

std::string kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::semantic: return "semantic";
    case FeatureKind::font_style: return "font_style";
    case FeatureKind::char_color: return "char_color";
    case FeatureKind::bg_color: return "bg_color";
    case FeatureKind::height: return "height";
    case FeatureKind::position: return "position";
  }
  throw InvalidConfig("unknown feature kind");
}

FeatureKind kind_from_name(const std::string& name) {
  for (FeatureKind k : kAllKinds)
    if (kind_name(k) == name) return k;
  throw InvalidConfig("unknown feature kind: " + name);
}

double relative_height(const BBox& bbox, double cover_height) {
  if (bbox.h <= 0 || bbox.h > cover_height)
    throw InvalidGeometry("bbox height " + std::to_string(bbox.h) +
                          " outside (0, " + std::to_string(cover_height) + "]");
  return bbox.h / cover_height;
}

std::array<double, 2> relative_position(const BBox& bbox, double cover_width,
                                        double cover_height) {
  if (bbox.x < 0 || bbox.x >= cover_width || bbox.y < 0 || bbox.y >= cover_height)
    throw InvalidGeometry("bbox origin (" + std::to_string(bbox.x) + ", " +
                          std::to_string(bbox.y) + ") outside cover");
  return {bbox.x / cover_width, bbox.y / cover_height};
}

std::string lowercase(const std::string& word) {
  std::string out = word;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
  return out;
}

std::uint64_t fnv1a64(const std::string& text, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

EmbeddingTable EmbeddingTable::deterministic_stub(std::size_t dim,
                                                  std::uint64_t seed) {
  EmbeddingTable t(dim);
  t.stub_mode_ = true;
  t.stub_seed_ = seed;
  return t;
}

EmbeddingTable EmbeddingTable::load_file(const std::string& path,
                                         std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding table " + path);
  EmbeddingTable t(dim);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<double> vec(dim);
    for (std::size_t i = 0; i < dim; ++i)
      if (!(ss >> vec[i]))
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected " + std::to_string(dim) + " values");
    t.insert(word, std::move(vec));
  }
  return t;
}

void EmbeddingTable::insert(const std::string& word, std::vector<double> vector) {
  if (vector.size() != dim_)
    throw DimensionError("embedding for '" + word + "' has " +
                         std::to_string(vector.size()) + " entries, expected " +
                         std::to_string(dim_));
  table_[lowercase(word)] = std::move(vector);
}

bool EmbeddingTable::contains(const std::string& word) const {
  return stub_mode_ || table_.count(lowercase(word)) > 0;
}

std::vector<double> EmbeddingTable::lookup(const std::string& word) const {
  std::string key = lowercase(word);
  auto it = table_.find(key);
  if (it != table_.end()) return it->second;
  if (!stub_mode_)
    throw OutOfVocabulary("word not in embedding table: " + word);
  // Seeded hash -> unit-norm vector, stable per (word, seed).
  std::mt19937_64 rng(fnv1a64(key, stub_seed_));
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> vec(dim_);
  double norm2 = 0.0;
  for (double& v : vec) {
    v = dist(rng);
    norm2 += v * v;
  }
  double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));
  for (double& v : vec) v *= inv;
  return vec;
}

PrecomputedEmbeddings PrecomputedEmbeddings::load_file(const std::string& path,
                                                       std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open precomputed embeddings " + path);
  PrecomputedEmbeddings p;
  p.dim_ = dim;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    ss >> id;
    std::vector<double> vec(dim);
    for (std::size_t i = 0; i < dim; ++i)
      if (!(ss >> vec[i]))
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected " + std::to_string(dim) + " values");
    p.table_[id] = std::move(vec);
  }
  return p;
}

void PrecomputedEmbeddings::insert(const std::string& record_id,
                                   std::vector<double> vector) {
  if (dim_ == 0) dim_ = vector.size();
  table_[record_id] = std::move(vector);
}

bool PrecomputedEmbeddings::contains(const std::string& record_id) const {
  return table_.count(record_id) > 0;
}

std::vector<double> PrecomputedEmbeddings::lookup(
    const std::string& record_id) const {
  auto it = table_.find(record_id);
  if (it == table_.end())
    throw MissingEmbedding("no precomputed embedding for record " + record_id);
  return it->second;
}

ExtractorConfig ExtractorConfig::for_dim(std::size_t dim) {
  ExtractorConfig c;
  c.feature_dim = dim;
  if (dim % 3 != 0) throw InvalidConfig("feature dim must be divisible by 3");
  c.color_top_k = dim / 3;
  // Pick the most square grid whose product is dim.
  c.raster_grid_h = 1;
  for (std::size_t h = 1; h * h <= dim; ++h)
    if (dim % h == 0) c.raster_grid_h = h;
  c.raster_grid_w = dim / c.raster_grid_h;
  return c;
}

std::vector<double> semantic_embedding(const std::string& word,
                                       const EmbeddingTable& table) {
  if (word.empty()) throw DataError("semantic_embedding: empty word");
  return table.lookup(word);
}

std::vector<double> font_embedding(const img::GlyphCrop& crop,
                                   const ExtractorConfig& config,
                                   const std::string& record_id) {
  if (config.font_provider) return config.font_provider->lookup(record_id);
  img::GlyphCrop canonical = img::canonicalize_glyph(crop);
  return img::raster_font_embedding(canonical, config.raster_grid_h,
                                    config.raster_grid_w);
}

FeatureBundle extract_bundle(
    const std::string& record_id, const std::string& text, const BBox& bbox,
    double cover_width, double cover_height, const img::GlyphCrop* crop,
    const std::map<FeatureKind, std::vector<double>>* precomputed,
    const EmbeddingTable& table, const ExtractorConfig& config) {
  FeatureBundle bundle;
  auto pre = [&](FeatureKind kind) -> const std::vector<double>* {
    if (!precomputed) return nullptr;
    auto it = precomputed->find(kind);
    return it == precomputed->end() ? nullptr : &it->second;
  };

  if (const auto* v = pre(FeatureKind::semantic))
    bundle.vectors[FeatureKind::semantic] = *v;
  else
    bundle.vectors[FeatureKind::semantic] = semantic_embedding(text, table);
  bundle.present.insert(FeatureKind::semantic);

  if (const auto* v = pre(FeatureKind::font_style)) {
    bundle.vectors[FeatureKind::font_style] = *v;
    bundle.present.insert(FeatureKind::font_style);
  } else if (crop) {
    bundle.vectors[FeatureKind::font_style] =
        font_embedding(*crop, config, record_id);
    bundle.present.insert(FeatureKind::font_style);
  }

  const auto* pre_char = pre(FeatureKind::char_color);
  const auto* pre_bg = pre(FeatureKind::bg_color);
  if (pre_char && pre_bg) {
    bundle.vectors[FeatureKind::char_color] = *pre_char;
    bundle.vectors[FeatureKind::bg_color] = *pre_bg;
    bundle.present.insert(FeatureKind::char_color);
    bundle.present.insert(FeatureKind::bg_color);
  } else if (crop) {
    img::RegionMasks masks = img::split_char_background(*crop);
    bundle.vectors[FeatureKind::char_color] =
        pre_char ? *pre_char
                 : img::top_k_color_feature(*crop, masks.character,
                                            config.color_top_k);
    bundle.vectors[FeatureKind::bg_color] =
        pre_bg ? *pre_bg
               : img::top_k_color_feature(*crop, masks.background,
                                          config.color_top_k);
    bundle.present.insert(FeatureKind::char_color);
    bundle.present.insert(FeatureKind::bg_color);
  }

  bundle.height_raw = relative_height(bbox, cover_height);
  bundle.present.insert(FeatureKind::height);
  bundle.position_raw = relative_position(bbox, cover_width, cover_height);
  bundle.present.insert(FeatureKind::position);

  for (const auto& [kind, vec] : bundle.vectors)
    if (vec.size() != config.feature_dim)
      throw DimensionError(kind_name(kind) + " feature for " + record_id +
                           " has " + std::to_string(vec.size()) +
                           " entries, expected " +
                           std::to_string(config.feature_dim));
  return bundle;
}

}  // namespace genrelens::features
