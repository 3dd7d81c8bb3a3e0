#include "genrelens/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "genrelens/checkpoint.hpp"
#include "genrelens/errors.hpp"

namespace genrelens::training {

using namespace genrelens::nn;
using model::HierModel;
using model::ModelConfig;
using nlohmann::json;

std::vector<ExtractedBook> extract_books(
    const std::vector<data::BookSample>& books,
    const features::EmbeddingTable& table,
    const features::ExtractorConfig& config, std::uint64_t seed,
    std::size_t jobs) {
  std::vector<data::BookSample> filtered;
  filtered.reserve(books.size());
  for (const auto& b : books) {
    data::BookSample f = data::filter_words(b, table, seed);
    if (!f.excluded) filtered.push_back(std::move(f));
  }

  std::vector<ExtractedBook> out(filtered.size());
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& b = filtered[i];
      ExtractedBook e;
      e.book_id = b.book_id;
      e.genre = b.genre;
      try {
        for (const auto& w : b.words) {
          e.word_ids.push_back(w.id);
          e.bundles.push_back(features::extract_bundle(
              w.id, w.text, w.bbox, b.cover_width, b.cover_height,
              w.load_crop(), w.precomputed.empty() ? nullptr : &w.precomputed,
              table, config));
        }
      } catch (const std::exception& ex) {
        throw DataError("feature extraction failed for book " + b.book_id +
                        ": " + ex.what());
      }
      out[i] = std::move(e);
    }
  };

  if (jobs <= 1 || filtered.size() < 2) {
    worker(0, filtered.size());
  } else {
    jobs = std::min(jobs, filtered.size());
    std::vector<std::thread> threads;
    std::size_t chunk = (filtered.size() + jobs - 1) / jobs;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < jobs; ++t) {
      std::size_t b = t * chunk, e = std::min(filtered.size(), b + chunk);
      if (b >= e) break;
      threads.emplace_back([&, b, e] {
        try {
          worker(b, e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
  }
  return out;
}

void save_feature_cache(const std::vector<ExtractedBook>& books,
                        const std::string& prefix) {
  std::vector<NamedTensor> tensors;
  json index = json::array();
  for (std::size_t bi = 0; bi < books.size(); ++bi) {
    const auto& b = books[bi];
    json bj;
    bj["book_id"] = b.book_id;
    bj["genre"] = b.genre;
    bj["word_ids"] = b.word_ids;
    json kinds = json::array();
    for (std::size_t wi = 0; wi < b.bundles.size(); ++wi) {
      const auto& bundle = b.bundles[wi];
      json present = json::array();
      std::string base = "b" + std::to_string(bi) + "/w" + std::to_string(wi);
      for (const auto& [kind, vec] : bundle.vectors) {
        present.push_back(features::kind_name(kind));
        tensors.push_back({base + "/" + features::kind_name(kind),
                           Tensor::row(vec)});
      }
      tensors.push_back({base + "/height", Tensor({1, 1}, {bundle.height_raw})});
      tensors.push_back({base + "/position",
                         Tensor({1, 2}, {bundle.position_raw[0],
                                         bundle.position_raw[1]})});
      kinds.push_back(present);
    }
    bj["vector_kinds"] = kinds;
    index.push_back(bj);
  }
  json extra;
  extra["kind"] = "feature_cache";
  extra["books"] = index;
  save_tensors(tensors, prefix, extra);
}

std::vector<ExtractedBook> load_feature_cache(const std::string& prefix) {
  LoadedCheckpoint ck = load_tensors(prefix);
  if (ck.extra.value("kind", "") != "feature_cache")
    throw DataError(prefix + " is not a feature cache");
  std::map<std::string, Tensor> by_name;
  for (auto& nt : ck.tensors) by_name[nt.name] = std::move(nt.tensor);

  std::vector<ExtractedBook> books;
  const json& index = ck.extra.at("books");
  for (std::size_t bi = 0; bi < index.size(); ++bi) {
    const json& bj = index[bi];
    ExtractedBook b;
    b.book_id = bj.at("book_id").get<std::string>();
    b.genre = bj.at("genre").get<int>();
    b.word_ids = bj.at("word_ids").get<std::vector<std::string>>();
    const json& kinds = bj.at("vector_kinds");
    for (std::size_t wi = 0; wi < kinds.size(); ++wi) {
      features::FeatureBundle bundle;
      std::string base = "b" + std::to_string(bi) + "/w" + std::to_string(wi);
      for (const auto& kname : kinds[wi]) {
        features::FeatureKind kind = features::kind_from_name(kname);
        bundle.vectors[kind] = by_name.at(base + "/" + std::string(kname)).vec();
        bundle.present.insert(kind);
      }
      bundle.height_raw = by_name.at(base + "/height")[0];
      const Tensor& pos = by_name.at(base + "/position");
      bundle.position_raw = {pos[0], pos[1]};
      bundle.present.insert(features::FeatureKind::height);
      bundle.present.insert(features::FeatureKind::position);
      b.bundles.push_back(std::move(bundle));
    }
    books.push_back(std::move(b));
  }
  return books;
}

namespace {

std::vector<double> predict_logits(const HierModel& net, const ExtractedBook& b) {
  NodePtr logits = net.classify(b.bundles);
  return logits->value.vec();
}

}  // namespace

TrainResult train(HierModel& net, const std::vector<ExtractedBook>& train_set,
                  const std::vector<ExtractedBook>& test_set,
                  const TrainConfig& config) {
  if (train_set.empty()) throw DataError("train: empty training set");
  TrainResult result;
  AdamOptimizer opt({config.learning_rate});
  std::mt19937_64 shuffle_rng(config.seed);
  std::mt19937_64 drop_rng(config.seed ^ 0x9e3779b97f4a7c15ull);

  std::vector<Tensor> best_values;
  double best_top1 = -1.0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      std::size_t end = std::min(order.size(), start + config.batch_size);
      double inv = 1.0 / double(end - start);
      net.params().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const ExtractedBook& b = train_set[order[i]];
        NodePtr logits = net.classify(b.bundles, nullptr, true, &drop_rng);
        NodePtr loss = scale(cross_entropy(logits, {b.genre}), inv);
        backward(loss);
        batch_loss += loss->value[0];
      }
      opt.step(net.params().all());
      result.optimizer_steps++;
      epoch_loss += batch_loss;
      ++batches;
    }
    EpochRecord rec;
    rec.train_loss = epoch_loss / double(batches);
    if (!test_set.empty())
      rec.test_top1 = evaluate_topn(net, test_set, {1}).at(1);
    result.history.push_back(rec);

    if (rec.test_top1 > best_top1) {
      best_top1 = rec.test_top1;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& p : net.params().all()) best_values.push_back(p.value());
    }
    if (config.verbose)
      std::fprintf(stderr, "epoch %zu loss %.4f test_top1 %.4f\n", epoch,
                   rec.train_loss, rec.test_top1);
  }

  if (!best_values.empty())
    for (std::size_t i = 0; i < best_values.size(); ++i)
      net.params().all()[i].value() = best_values[i];
  return result;
}

int argmax_prediction(const std::vector<double>& logits) {
  int best = 0;
  for (int j = 1; j < int(logits.size()); ++j)
    if (logits[std::size_t(j)] > logits[std::size_t(best)]) best = j;
  return best;
}

std::map<std::size_t, double> topn_from_logits(
    const std::vector<std::vector<double>>& logits,
    const std::vector<int>& labels, const std::vector<std::size_t>& ns) {
  if (logits.empty()) throw DataError("topn: empty sample set");
  if (logits.size() != labels.size())
    throw DimensionError("topn: logits/labels size mismatch");
  std::map<std::size_t, double> acc;
  for (std::size_t n : ns) acc[n] = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    std::vector<int> rank(logits[i].size());
    std::iota(rank.begin(), rank.end(), 0);
    std::sort(rank.begin(), rank.end(), [&](int a, int b) {
      if (logits[i][std::size_t(a)] != logits[i][std::size_t(b)])
        return logits[i][std::size_t(a)] > logits[i][std::size_t(b)];
      return a < b;  // ties by genre index ascending
    });
    for (std::size_t n : ns) {
      for (std::size_t r = 0; r < std::min(n, rank.size()); ++r)
        if (rank[r] == labels[i]) {
          acc[n] += 1.0;
          break;
        }
    }
  }
  for (auto& [n, a] : acc) a /= double(logits.size());
  return acc;
}

std::map<std::size_t, double> evaluate_topn(
    const HierModel& net, const std::vector<ExtractedBook>& samples,
    const std::vector<std::size_t>& ns) {
  std::vector<std::vector<double>> logits;
  std::vector<int> labels;
  for (const auto& b : samples) {
    logits.push_back(predict_logits(net, b));
    labels.push_back(b.genre);
  }
  return topn_from_logits(logits, labels, ns);
}

analysis::ConfusionMatrix confusion_matrix(
    const HierModel& net, const std::vector<ExtractedBook>& samples) {
  analysis::ConfusionMatrix m(net.config().num_classes);
  for (const auto& b : samples)
    m.add(b.genre, argmax_prediction(predict_logits(net, b)));
  return m;
}

std::vector<AblationRow> standard_rows() {
  using features::FeatureKind;
  return {
      {"full", {}, false},
      {"wo_font", {FeatureKind::font_style}, false},
      {"wo_char_color", {FeatureKind::char_color}, false},
      {"wo_bg_color", {FeatureKind::bg_color}, false},
      {"wo_colors", {FeatureKind::char_color, FeatureKind::bg_color}, false},
      {"wo_height", {FeatureKind::height}, false},
      {"wo_position", {FeatureKind::position}, false},
      {"wo_height_position", {FeatureKind::height, FeatureKind::position}, false},
      {"wo_semantic", {FeatureKind::semantic}, false},
      {"baseline", {}, true},
  };
}

AblationRow row_from_name(const std::string& name) {
  for (const auto& row : standard_rows())
    if (row.name == name) return row;
  if (name.rfind("wo_", 0) == 0)
    return {name, {features::kind_from_name(name.substr(3))}, false};
  throw InvalidConfig("unknown ablation row: " + name);
}

std::vector<RowResult> run_ablation_suite(
    const ModelConfig& base, const std::vector<ExtractedBook>& train_set,
    const std::vector<ExtractedBook>& test_set, const TrainConfig& tc,
    const std::vector<AblationRow>& rows, std::size_t jobs) {
  std::vector<RowResult> results(rows.size());

  auto run_row = [&](std::size_t i) {
    RowResult& r = results[i];
    r.name = rows[i].name;
    try {
      ModelConfig config = base;
      if (rows[i].baseline) {
        config.enabled_features = {FeatureKind::semantic};
        config.semantic_only_baseline = true;
      } else {
        config = model::ablation_config(base, rows[i].removed);
      }
      HierModel net(config, tc.seed);
      train(net, train_set, test_set, tc);
      auto acc = evaluate_topn(net, test_set, {1, 3});
      r.top1 = acc.at(1);
      r.top3 = acc.at(3);
      r.confusion = confusion_matrix(net, test_set);
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
  };

  if (jobs <= 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) run_row(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < std::min(jobs, rows.size()); ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < rows.size();
             i = next.fetch_add(1))
          run_row(i);
      });
    for (auto& t : pool) t.join();
  }
  return results;
}

void write_suite_csv(const std::vector<RowResult>& rows,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "row,top1,top3\n";
  char buf[64];
  for (const auto& r : rows) {
    if (r.ok) {
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.top1, r.top3);
      out << r.name << "," << buf << "\n";
    } else {
      out << r.name << ",failed,failed\n";
    }
  }
}

}  // namespace genrelens::training
