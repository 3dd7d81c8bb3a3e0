#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrelens/model.hpp"

namespace genrelens::analysis {

using features::FeatureKind;

// --- confusion matrices ---------------------------------------------------

struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::int64_t> counts;  // row = true, col = predicted

  explicit ConfusionMatrix(std::size_t classes = 0)
      : classes(classes), counts(classes * classes, 0) {}
  std::int64_t& at(std::size_t t, std::size_t p) { return counts[t * classes + p]; }
  std::int64_t at(std::size_t t, std::size_t p) const { return counts[t * classes + p]; }
  void add(int true_genre, int predicted) { at(std::size_t(true_genre), std::size_t(predicted))++; }
  std::vector<std::int64_t> row_sums() const;
};

/// ablated - full. Negative diagonal: the removed feature was helping that
/// genre; positive off-diagonal: removal created that confusion.
struct SignedMatrix {
  std::size_t classes = 0;
  std::vector<std::int64_t> delta;
  std::int64_t at(std::size_t t, std::size_t p) const { return delta[t * classes + p]; }
};

SignedMatrix confusion_diff(const ConfusionMatrix& ablated,
                            const ConfusionMatrix& full);

void write_confusion_csv(const ConfusionMatrix& m, const std::string& path);
ConfusionMatrix read_confusion_csv(const std::string& path);
void write_signed_csv(const SignedMatrix& m, const std::string& path);

std::vector<std::string> genre_names(std::size_t classes);

// --- per-genre feature variance -------------------------------------------

struct GenreVariance {
  int genre = 0;
  double variance = 0.0;  // mean per-dimension variance
  std::string rank_flag;  // "highest" | "lowest" | ""
};

/// Mean over dimensions of the per-dimension variance across a genre's word
/// instances; genres with fewer than two words are skipped. The three
/// largest and three smallest get rank flags.
std::vector<GenreVariance> genre_feature_variance(
    const std::vector<std::vector<double>>& features,
    const std::vector<int>& genres);

void write_variance_csv(const std::vector<GenreVariance>& rows,
                        FeatureKind kind, const std::string& path,
                        bool append = false);

// --- attention rollout ----------------------------------------------------

struct RolloutResult {
  /// Contribution of each word to the book CLS (renormalized over real
  /// word positions; all zeros when the rollout is degenerate).
  std::vector<double> word_contributions;
  /// Per word, contribution of each feature token (renormalized).
  std::vector<std::map<FeatureKind, double>> feature_contributions;
  /// composed(w, f) = word_contributions[w] * feature_contributions[w][f].
  std::vector<std::map<FeatureKind, double>> composed;
  bool degenerate = false;
};

/// Per level: average heads per layer, mix A^ = 0.5 A + 0.5 I, row-normalize,
/// multiply the layers in order; read the CLS rows.
RolloutResult attention_rollout(const model::AttentionTrace& trace);

nn::Tensor rollout_matrix(const std::vector<std::vector<nn::Tensor>>& layers);

nlohmann::json rollout_to_json(const RolloutResult& r,
                               const std::vector<std::string>& word_ids);

// --- k-means --------------------------------------------------------------

struct ClusterModel {
  std::size_t k = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
};

/// k-means++ seeding, Lloyd iterations to an assignment fixpoint (or 300
/// rounds); an emptied cluster is re-seeded to the farthest point.
ClusterModel kmeans_fit(const std::vector<std::vector<double>>& points,
                        std::size_t k, std::uint64_t seed);

/// Argmax of the second difference of inertia over k_min..k_max (ties to the
/// smaller k). `override_k` wins verbatim when set.
std::size_t elbow_select_k(const std::vector<std::vector<double>>& points,
                           std::uint64_t seed, std::size_t k_min = 1,
                           std::size_t k_max = 10,
                           std::optional<std::size_t> override_k = std::nullopt);

// --- cluster report -------------------------------------------------------

struct ClusterReportEntry {
  int genre = 0;
  std::int64_t diag_delta = 0;
  std::vector<double> histogram;           // cluster membership fractions
  std::vector<std::size_t> top_clusters;   // two most populated
  std::vector<std::string> exemplar_ids;   // record ids from top clusters
};

/// For each genre whose diagonal went negative in the kind's confusion diff,
/// the cluster-membership histogram of its words and the top-2 clusters.
std::vector<ClusterReportEntry> cluster_report(
    const ClusterModel& clusters, const std::vector<int>& word_genres,
    const std::vector<std::string>& word_ids, const SignedMatrix& diff);

nlohmann::json cluster_report_to_json(const std::vector<ClusterReportEntry>& entries,
                                      FeatureKind kind);

}  // namespace genrelens::analysis
