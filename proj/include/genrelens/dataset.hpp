#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genrelens/features.hpp"
#include "genrelens/image.hpp"

namespace genrelens::data {

inline constexpr int kNumGenres = 30;
inline constexpr std::size_t kMaxWordsPerBook = 16;
inline constexpr double kMinWordSide = 14.0;  // strict lower bound

struct WordRecord {
  std::string id;
  std::string text;
  features::BBox bbox;
  std::optional<std::string> crop_path;
  std::optional<img::GlyphCrop> crop;  // in-memory; serialized via crop_path
  std::map<features::FeatureKind, std::vector<double>> precomputed;

  /// Loads crop from crop_path when not already in memory; nullptr if the
  /// record has no pixel source.
  const img::GlyphCrop* load_crop() const;

 private:
  mutable std::optional<img::GlyphCrop> loaded_;
};

struct BookSample {
  std::string book_id;
  int genre = 0;
  int cover_width = 0;
  int cover_height = 0;
  std::vector<WordRecord> words;
  bool excluded = false;  // zero words after filtering
};

struct DatasetSplit {
  std::vector<BookSample> train;
  std::vector<BookSample> test;
};

struct LoadError {
  std::size_t line = 0;
  std::string message;
};

struct LoadReport {
  std::vector<LoadError> errors;
  std::map<int, std::size_t> train_counts;  // genre -> books
  std::map<int, std::size_t> test_counts;
};

/// One JSON object per line:
/// {book_id, split, genre, cover_width, cover_height,
///  words:[{id, text, bbox:[x,y,w,h], crop_path?, precomputed?:{kind:[..]}}]}
DatasetSplit load_dataset(const std::string& path, LoadReport* report = nullptr);

/// Canonical writer: stable key order, one line per book, so a loaded and
/// rewritten file is byte-equal. In-memory crops are written as PNGs under
/// `crop_dir` (required when any record carries one).
void save_dataset(const DatasetSplit& split, const std::string& path,
                  const std::string& crop_dir = "");

/// Vocabulary + size filters and the 16-word cap. Subsampling beyond the cap
/// is uniform, seeded from (seed, book_id). Books left with no words come
/// back flagged excluded.
BookSample filter_words(const BookSample& book,
                        const features::EmbeddingTable& table,
                        std::uint64_t seed);

struct DatasetStats {
  std::map<int, std::size_t> genre_counts;
  std::size_t books = 0;
  std::size_t words = 0;
  double words_per_book = 0.0;
};

DatasetStats dataset_stats(const std::vector<BookSample>& books);

}  // namespace genrelens::data
