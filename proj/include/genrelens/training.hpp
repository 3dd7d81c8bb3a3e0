#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "genrelens/analysis.hpp"
#include "genrelens/dataset.hpp"
#include "genrelens/model.hpp"

namespace genrelens::training {

using features::FeatureKind;

/// One book's features, ready for the model.
struct ExtractedBook {
  std::string book_id;
  int genre = 0;
  std::vector<std::string> word_ids;
  std::vector<features::FeatureBundle> bundles;
};

/// Filter (vocabulary, size, 16-cap) then extract every book; excluded books
/// are dropped. Throws with the book id on extraction failure.
std::vector<ExtractedBook> extract_books(
    const std::vector<data::BookSample>& books,
    const features::EmbeddingTable& table,
    const features::ExtractorConfig& config, std::uint64_t seed,
    std::size_t jobs = 1);

/// Feature cache on disk (same manifest + blob scheme as checkpoints).
void save_feature_cache(const std::vector<ExtractedBook>& books,
                        const std::string& prefix);
std::vector<ExtractedBook> load_feature_cache(const std::string& prefix);

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-5;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct EpochRecord {
  double train_loss = 0.0;
  double test_top1 = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // best test top-1; those weights are restored
  std::size_t optimizer_steps = 0;
};

/// Seeded shuffled mini-batches, cross-entropy + Adam. Keeps the
/// best-test-top-1 weights and restores them on return.
TrainResult train(model::HierModel& net, const std::vector<ExtractedBook>& train_set,
                  const std::vector<ExtractedBook>& test_set,
                  const TrainConfig& config);

/// Top-N accuracy; ranking ties break by genre index ascending.
std::map<std::size_t, double> evaluate_topn(const model::HierModel& net,
                                            const std::vector<ExtractedBook>& samples,
                                            const std::vector<std::size_t>& ns);

std::map<std::size_t, double> topn_from_logits(
    const std::vector<std::vector<double>>& logits,
    const std::vector<int>& labels, const std::vector<std::size_t>& ns);

int argmax_prediction(const std::vector<double>& logits);

analysis::ConfusionMatrix confusion_matrix(const model::HierModel& net,
                                           const std::vector<ExtractedBook>& samples);

// --- ablation suite -------------------------------------------------------

struct AblationRow {
  std::string name;
  std::set<FeatureKind> removed;
  bool baseline = false;
};

/// Table-1 row list: full, the seven single/paired removals, w/o semantic,
/// and the semantic-only baseline.
std::vector<AblationRow> standard_rows();
AblationRow row_from_name(const std::string& name);

struct RowResult {
  std::string name;
  bool ok = false;
  std::string error;
  double top1 = 0.0;
  double top3 = 0.0;
  analysis::ConfusionMatrix confusion;
};

/// Trains one model per row from the identical seed. Failures are recorded
/// and the suite continues.
std::vector<RowResult> run_ablation_suite(
    const model::ModelConfig& base, const std::vector<ExtractedBook>& train_set,
    const std::vector<ExtractedBook>& test_set, const TrainConfig& tc,
    const std::vector<AblationRow>& rows, std::size_t jobs = 1);

void write_suite_csv(const std::vector<RowResult>& rows, const std::string& path);

}  // namespace genrelens::training
