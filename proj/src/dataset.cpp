#include "genrelens/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "genrelens/errors.hpp"

namespace genrelens::data {

using nlohmann::json;
namespace fs = std::filesystem;

const img::GlyphCrop* WordRecord::load_crop() const {
  if (crop) return &*crop;
  if (loaded_) return &*loaded_;
  if (crop_path) {
    loaded_ = img::read_png(*crop_path);
    return &*loaded_;
  }
  return nullptr;
}

namespace {

// Doubles that carry no fractional part are written as integers so that
// load -> save round-trips reproduce hand-written files.
json number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return json(std::int64_t(v));
  return json(v);
}

BookSample parse_book(const json& j, std::string* split_out) {
  BookSample book;
  book.book_id = j.at("book_id").get<std::string>();
  *split_out = j.at("split").get<std::string>();
  if (*split_out != "train" && *split_out != "test")
    throw DataError("split must be \"train\" or \"test\"");
  book.genre = j.at("genre").get<int>();
  if (book.genre < 0 || book.genre >= kNumGenres)
    throw DataError("genre " + std::to_string(book.genre) + " out of range");
  book.cover_width = j.at("cover_width").get<int>();
  book.cover_height = j.at("cover_height").get<int>();
  if (book.cover_width <= 0 || book.cover_height <= 0)
    throw DataError("cover dimensions must be positive");
  for (const auto& wj : j.at("words")) {
    WordRecord w;
    w.id = wj.at("id").get<std::string>();
    w.text = wj.at("text").get<std::string>();
    if (w.text.empty()) throw DataError("word " + w.id + " has empty text");
    const auto& bb = wj.at("bbox");
    if (!bb.is_array() || bb.size() != 4)
      throw DataError("word " + w.id + " bbox must be [x,y,w,h]");
    w.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
              bb[3].get<double>()};
    if (w.bbox.x < 0 || w.bbox.y < 0 || w.bbox.w <= 0 || w.bbox.h <= 0 ||
        w.bbox.x + w.bbox.w > book.cover_width ||
        w.bbox.y + w.bbox.h > book.cover_height)
      throw DataError("word " + w.id + " bbox outside cover");
    if (wj.contains("crop_path"))
      w.crop_path = wj.at("crop_path").get<std::string>();
    if (wj.contains("precomputed"))
      for (const auto& [kind, vec] : wj.at("precomputed").items())
        w.precomputed[features::kind_from_name(kind)] =
            vec.get<std::vector<double>>();
    book.words.push_back(std::move(w));
  }
  return book;
}

json book_to_json(const BookSample& book, const std::string& split,
                  const std::string& crop_dir) {
  json j;
  j["book_id"] = book.book_id;
  j["split"] = split;
  j["genre"] = book.genre;
  j["cover_width"] = book.cover_width;
  j["cover_height"] = book.cover_height;
  json words = json::array();
  for (const auto& w : book.words) {
    json wj;
    wj["id"] = w.id;
    wj["text"] = w.text;
    wj["bbox"] = json::array({number(w.bbox.x), number(w.bbox.y),
                              number(w.bbox.w), number(w.bbox.h)});
    if (w.crop) {
      if (crop_dir.empty())
        throw DataError("book " + book.book_id +
                        " carries in-memory crops; save_dataset needs a crop_dir");
      std::string path = (fs::path(crop_dir) / (w.id + ".png")).string();
      img::write_png(*w.crop, path);
      wj["crop_path"] = path;
    } else if (w.crop_path) {
      wj["crop_path"] = *w.crop_path;
    }
    if (!w.precomputed.empty()) {
      json pre;
      for (const auto& [kind, vec] : w.precomputed)
        pre[features::kind_name(kind)] = vec;
      wj["precomputed"] = pre;
    }
    words.push_back(std::move(wj));
  }
  j["words"] = std::move(words);
  return j;
}

}  // namespace

DatasetSplit load_dataset(const std::string& path, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  DatasetSplit split;
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::string> seen;  // book_id -> split
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      std::string which;
      BookSample book = parse_book(j, &which);
      auto it = seen.find(book.book_id);
      if (it != seen.end())
        throw DataError("duplicate book_id " + book.book_id +
                        " (already in " + it->second + ")");
      seen[book.book_id] = which;
      if (which == "train") {
        rep.train_counts[book.genre]++;
        split.train.push_back(std::move(book));
      } else {
        rep.test_counts[book.genre]++;
        split.test.push_back(std::move(book));
      }
    } catch (const std::exception& e) {
      rep.errors.push_back({lineno, e.what()});
    }
  }
  return split;
}

void save_dataset(const DatasetSplit& split, const std::string& path,
                  const std::string& crop_dir) {
  if (!crop_dir.empty()) fs::create_directories(crop_dir);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const auto& book : split.train)
    out << book_to_json(book, "train", crop_dir).dump() << "\n";
  for (const auto& book : split.test)
    out << book_to_json(book, "test", crop_dir).dump() << "\n";
}

BookSample filter_words(const BookSample& book,
                        const features::EmbeddingTable& table,
                        std::uint64_t seed) {
  BookSample out = book;
  out.words.clear();
  for (const auto& w : book.words) {
    if (w.bbox.w < kMinWordSide || w.bbox.h < kMinWordSide) continue;
    if (!table.contains(w.text)) continue;
    out.words.push_back(w);
  }
  if (out.words.size() > kMaxWordsPerBook) {
    std::mt19937_64 rng(features::fnv1a64(book.book_id, seed));
    // Seeded uniform subset of 16, original order preserved.
    std::vector<std::size_t> idx(out.words.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(kMaxWordsPerBook);
    std::sort(idx.begin(), idx.end());
    std::vector<WordRecord> kept;
    kept.reserve(kMaxWordsPerBook);
    for (std::size_t i : idx) kept.push_back(std::move(out.words[i]));
    out.words = std::move(kept);
  }
  out.excluded = out.words.empty();
  return out;
}

DatasetStats dataset_stats(const std::vector<BookSample>& books) {
  DatasetStats stats;
  for (const auto& b : books) {
    if (b.excluded) continue;
    stats.genre_counts[b.genre]++;
    stats.books++;
    stats.words += b.words.size();
  }
  stats.words_per_book =
      stats.books ? double(stats.words) / double(stats.books) : 0.0;
  return stats;
}

}  // namespace genrelens::data
