#include "genrelens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "genrelens/errors.hpp"

namespace genrelens::analysis {

using nlohmann::json;
using nn::Tensor;

std::vector<std::int64_t> ConfusionMatrix::row_sums() const {
  std::vector<std::int64_t> sums(classes, 0);
  for (std::size_t t = 0; t < classes; ++t)
    for (std::size_t p = 0; p < classes; ++p) sums[t] += at(t, p);
  return sums;
}

SignedMatrix confusion_diff(const ConfusionMatrix& ablated,
                            const ConfusionMatrix& full) {
  if (ablated.classes != full.classes)
    throw IncompatibleMatrices("confusion matrices have different sizes");
  if (ablated.row_sums() != full.row_sums())
    throw IncompatibleMatrices(
        "confusion matrices cover different test sets (row sums differ)");
  SignedMatrix out;
  out.classes = full.classes;
  out.delta.resize(full.counts.size());
  for (std::size_t i = 0; i < full.counts.size(); ++i)
    out.delta[i] = ablated.counts[i] - full.counts[i];
  return out;
}

std::vector<std::string> genre_names(std::size_t classes) {
  std::vector<std::string> names;
  for (std::size_t g = 0; g < classes; ++g) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "g%02zu", g);
    names.emplace_back(buf);
  }
  return names;
}

namespace {

template <typename T>
void write_matrix_csv(std::size_t classes, const std::vector<T>& cells,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  auto names = genre_names(classes);
  out << "true";
  for (const auto& n : names) out << "," << n;
  out << "\n";
  for (std::size_t t = 0; t < classes; ++t) {
    out << names[t];
    for (std::size_t p = 0; p < classes; ++p)
      out << "," << cells[t * classes + p];
    out << "\n";
  }
}

}  // namespace

void write_confusion_csv(const ConfusionMatrix& m, const std::string& path) {
  write_matrix_csv(m.classes, m.counts, path);
}

ConfusionMatrix read_confusion_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::size_t classes = std::count(header.begin(), header.end(), ',');
  ConfusionMatrix m(classes);
  std::string line;
  std::size_t t = 0;
  while (std::getline(in, line) && t < classes) {
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // row label
    for (std::size_t p = 0; p < classes; ++p) {
      if (!std::getline(ss, cell, ',')) throw DataError("short row in " + path);
      m.at(t, p) = std::stoll(cell);
    }
    ++t;
  }
  if (t != classes) throw DataError("short matrix in " + path);
  return m;
}

void write_signed_csv(const SignedMatrix& m, const std::string& path) {
  write_matrix_csv(m.classes, m.delta, path);
}

std::vector<GenreVariance> genre_feature_variance(
    const std::vector<std::vector<double>>& features,
    const std::vector<int>& genres) {
  if (features.size() != genres.size())
    throw DimensionError("feature/genre count mismatch");
  std::map<int, std::vector<std::size_t>> by_genre;
  for (std::size_t i = 0; i < genres.size(); ++i)
    by_genre[genres[i]].push_back(i);

  std::vector<GenreVariance> rows;
  for (const auto& [g, idx] : by_genre) {
    if (idx.size() < 2) continue;  // skipped with a warning upstream
    std::size_t dim = features[idx[0]].size();
    double total = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      double mean = 0.0;
      for (std::size_t i : idx) mean += features[i][d];
      mean /= double(idx.size());
      double var = 0.0;
      for (std::size_t i : idx) {
        double c = features[i][d] - mean;
        var += c * c;
      }
      total += var / double(idx.size());
    }
    rows.push_back({g, total / double(dim), ""});
  }

  // Flag the three highest and three lowest variances.
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows[a].variance < rows[b].variance;
  });
  for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i)
    rows[order[i]].rank_flag = "lowest";
  for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) {
    auto& flag = rows[order[order.size() - 1 - i]].rank_flag;
    if (flag.empty()) flag = "highest";
  }
  return rows;
}

void write_variance_csv(const std::vector<GenreVariance>& rows,
                        FeatureKind kind, const std::string& path,
                        bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::out);
  if (!out) throw DataError("cannot open " + path + " for writing");
  if (!append) out << "genre,kind,variance,rank_flag\n";
  auto names = genre_names(30);
  for (const auto& r : rows)
    out << names[std::size_t(r.genre)] << "," << features::kind_name(kind) << ","
        << r.variance << "," << r.rank_flag << "\n";
}

// --- rollout --------------------------------------------------------------

namespace {

Tensor average_heads(const std::vector<Tensor>& heads) {
  if (heads.empty()) throw DataError("rollout: layer with no attention heads");
  Tensor avg = heads[0];
  for (std::size_t h = 1; h < heads.size(); ++h)
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += heads[h][i];
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] /= double(heads.size());
  return avg;
}

// A^ = 0.5 A + 0.5 I, rows renormalized.
Tensor identity_mix(const Tensor& a) {
  std::size_t n = a.rows();
  Tensor out = a;
  for (std::size_t i = 0; i < n; ++i) {
    out.at(i, i) += 1.0;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += out.at(i, j);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= sum;
  }
  return out;
}

}  // namespace

Tensor rollout_matrix(const std::vector<std::vector<Tensor>>& layers) {
  if (layers.empty()) throw DataError("rollout: trace has no layers");
  Tensor r = identity_mix(average_heads(layers[0]));
  for (std::size_t l = 1; l < layers.size(); ++l) {
    Tensor a = identity_mix(average_heads(layers[l]));
    std::size_t n = r.rows();
    Tensor next({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        double av = a.at(i, k);
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j)
          next.at(i, j) += av * r.at(k, j);
      }
    r = next;
  }
  return r;
}

RolloutResult attention_rollout(const model::AttentionTrace& trace) {
  if (trace.book_level.empty())
    throw DataError("rollout: trace has no book-level layers");
  RolloutResult result;

  Tensor book = rollout_matrix(trace.book_level);
  // CLS row over the real word positions (slot 0 is the book CLS).
  std::vector<double> word_mass(trace.num_words, 0.0);
  double total = 0.0;
  for (std::size_t w = 0; w < trace.num_words; ++w) {
    word_mass[w] = book.at(0, w + 1);
    total += word_mass[w];
  }
  result.word_contributions.assign(trace.num_words, 0.0);
  if (total > 0.0)
    for (std::size_t w = 0; w < trace.num_words; ++w)
      result.word_contributions[w] = word_mass[w] / total;
  else
    result.degenerate = true;

  for (std::size_t w = 0; w < trace.word_level.size(); ++w) {
    const auto& layers = trace.word_level[w];
    if (layers.empty()) throw DataError("rollout: word trace has no layers");
    Tensor word = rollout_matrix(layers);
    std::map<FeatureKind, double> contrib;
    double mass = 0.0;
    for (std::size_t f = 0; f < trace.token_kinds.size(); ++f)
      mass += word.at(0, f + 1);
    for (std::size_t f = 0; f < trace.token_kinds.size(); ++f) {
      double v = mass > 0.0 ? word.at(0, f + 1) / mass : 0.0;
      contrib[trace.token_kinds[f]] = v;
    }
    if (mass <= 0.0) result.degenerate = true;
    result.feature_contributions.push_back(std::move(contrib));
  }

  for (std::size_t w = 0; w < result.feature_contributions.size(); ++w) {
    std::map<FeatureKind, double> composed;
    for (const auto& [k, v] : result.feature_contributions[w])
      composed[k] = result.word_contributions[w] * v;
    result.composed.push_back(std::move(composed));
  }
  return result;
}

json rollout_to_json(const RolloutResult& r,
                     const std::vector<std::string>& word_ids) {
  json j;
  j["degenerate"] = r.degenerate;
  j["word_contrib"] = r.word_contributions;
  json feats = json::object();
  json composed = json::object();
  for (std::size_t w = 0; w < r.feature_contributions.size(); ++w) {
    std::string id = w < word_ids.size() ? word_ids[w] : std::to_string(w);
    json fw = json::object(), cw = json::object();
    for (const auto& [k, v] : r.feature_contributions[w])
      fw[features::kind_name(k)] = v;
    for (const auto& [k, v] : r.composed[w]) cw[features::kind_name(k)] = v;
    feats[id] = fw;
    composed[id] = cw;
  }
  j["features"] = feats;
  j["composed"] = composed;
  return j;
}

// --- k-means --------------------------------------------------------------

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

ClusterModel kmeans_fit(const std::vector<std::vector<double>>& points,
                        std::size_t k, std::uint64_t seed) {
  if (k == 0 || points.size() < k)
    throw InvalidConfig("kmeans: need n >= k >= 1, got n=" +
                        std::to_string(points.size()) + " k=" + std::to_string(k));
  std::mt19937_64 rng(seed);
  std::size_t n = points.size();

  // k-means++ seeding.
  ClusterModel model;
  model.k = k;
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  model.centroids.push_back(points[first(rng)]);
  std::vector<double> d2(n);
  while (model.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : model.centroids)
        best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    model.centroids.push_back(points[pick]);
  }

  model.assignments.assign(n, 0);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(points[i], model.centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        double d = sq_dist(points[i], model.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (model.assignments[i] != best) changed = true;
      model.assignments[i] = best;
    }
    if (!changed && iter > 0) break;

    std::size_t dim = points[0].size();
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[model.assignments[i]]++;
      for (std::size_t d = 0; d < dim; ++d)
        sums[model.assignments[i]][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster to the farthest point.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = sq_dist(points[i], model.centroids[model.assignments[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        model.centroids[c] = points[far];
        changed = true;
      } else {
        for (std::size_t d = 0; d < dim; ++d)
          model.centroids[c][d] = sums[c][d] / double(counts[c]);
      }
    }
    if (!changed) break;
  }

  // Final assignment + inertia against the final centroids.
  model.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = sq_dist(points[i], model.centroids[0]);
    for (std::size_t c = 1; c < k; ++c) {
      double d = sq_dist(points[i], model.centroids[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    model.assignments[i] = best;
    model.inertia += best_d;
  }
  return model;
}

std::size_t elbow_select_k(const std::vector<std::vector<double>>& points,
                           std::uint64_t seed, std::size_t k_min,
                           std::size_t k_max,
                           std::optional<std::size_t> override_k) {
  if (override_k) return *override_k;
  if (points.size() <= k_max)
    throw InvalidConfig("elbow: need more points than the largest k");
  std::vector<double> inertia;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    double v = kmeans_fit(points, k, seed).inertia;
    // Inertia spans orders of magnitude across k; measure curvature on the
    // log curve so early huge drops don't drown out the knee.
    inertia.push_back(std::log(std::max(v, 1e-12)));
  }

  // Max curvature = argmax of the second difference over interior ks.
  std::size_t best_k = k_min + 1;
  double best_curv = -std::numeric_limits<double>::max();
  for (std::size_t i = 1; i + 1 < inertia.size(); ++i) {
    double curv = inertia[i - 1] - 2.0 * inertia[i] + inertia[i + 1];
    if (curv > best_curv + 1e-12) {
      best_curv = curv;
      best_k = k_min + i;
    }
  }
  return best_k;
}

std::vector<ClusterReportEntry> cluster_report(
    const ClusterModel& clusters, const std::vector<int>& word_genres,
    const std::vector<std::string>& word_ids, const SignedMatrix& diff) {
  if (word_genres.size() != clusters.assignments.size() ||
      word_ids.size() != clusters.assignments.size())
    throw DimensionError("cluster_report: inputs disagree in length");

  std::vector<ClusterReportEntry> report;
  for (std::size_t g = 0; g < diff.classes; ++g) {
    std::int64_t d = diff.at(g, g);
    if (d >= 0) continue;
    ClusterReportEntry entry;
    entry.genre = int(g);
    entry.diag_delta = d;
    entry.histogram.assign(clusters.k, 0.0);
    std::size_t total = 0;
    for (std::size_t i = 0; i < word_genres.size(); ++i) {
      if (word_genres[i] != int(g)) continue;
      entry.histogram[clusters.assignments[i]] += 1.0;
      ++total;
    }
    if (total > 0)
      for (double& h : entry.histogram) h /= double(total);

    std::vector<std::size_t> order(clusters.k);
    for (std::size_t c = 0; c < clusters.k; ++c) order[c] = c;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (entry.histogram[a] != entry.histogram[b])
        return entry.histogram[a] > entry.histogram[b];
      return a < b;
    });
    for (std::size_t c = 0; c < std::min<std::size_t>(2, order.size()); ++c)
      if (entry.histogram[order[c]] > 0.0) entry.top_clusters.push_back(order[c]);

    for (std::size_t cluster : entry.top_clusters) {
      std::size_t emitted = 0;
      for (std::size_t i = 0; i < word_ids.size() && emitted < 3; ++i)
        if (word_genres[i] == int(g) && clusters.assignments[i] == cluster) {
          entry.exemplar_ids.push_back(word_ids[i]);
          ++emitted;
        }
    }
    report.push_back(std::move(entry));
  }
  return report;
}

json cluster_report_to_json(const std::vector<ClusterReportEntry>& entries,
                            FeatureKind kind) {
  json j;
  j["kind"] = features::kind_name(kind);
  json rows = json::array();
  for (const auto& e : entries) {
    json r;
    r["genre"] = e.genre;
    r["diag_delta"] = e.diag_delta;
    r["histogram"] = e.histogram;
    r["top_clusters"] = e.top_clusters;
    r["exemplars"] = e.exemplar_ids;
    rows.push_back(r);
  }
  j["genres"] = rows;
  return j;
}

}  // namespace genrelens::analysis
