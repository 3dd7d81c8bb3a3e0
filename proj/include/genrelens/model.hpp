#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrelens/features.hpp"
#include "genrelens/nn.hpp"

namespace genrelens::model {

using features::FeatureKind;

struct ModelConfig {
  std::size_t dim = 300;
  std::size_t word_layers = 1;
  std::size_t book_layers = 4;
  std::size_t heads = 6;
  std::size_t classifier_hidden = 300;
  std::size_t num_classes = 30;
  std::size_t max_words = 16;
  std::size_t ffn_mult = 4;
  std::set<FeatureKind> enabled_features{features::kAllKinds.begin(),
                                         features::kAllKinds.end()};
  bool semantic_only_baseline = false;
  /// Whether the semantic token joins the word-level encoder (paper leaves
  /// this ambiguous); when false the semantic vector is summed onto the
  /// word vector after the word-level encoder.
  bool semantic_in_word_encoder = true;
  double dropout = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// New config with the given feature kinds removed (Table-1-style ablation
/// rows, including "w/o semantic"). Removing everything is invalid.
ModelConfig ablation_config(const ModelConfig& base,
                            const std::set<FeatureKind>& removed);

/// Per-layer, per-head attention matrices captured at both levels.
struct AttentionTrace {
  // word_level[word][layer][head], each (1+F) x (1+F); empty in baseline mode.
  std::vector<std::vector<std::vector<nn::Tensor>>> word_level;
  // book_level[layer][head], each (1+max_words) x (1+max_words).
  std::vector<std::vector<nn::Tensor>> book_level;
  std::vector<bool> book_mask;  // CLS + word slots
  std::size_t num_words = 0;
  std::vector<FeatureKind> token_kinds;  // word-level tokens after CLS
};

class HierModel {
 public:
  HierModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

  /// Closed-form parameter count implied by the config; asserted against the
  /// store in tests.
  std::size_t expected_param_count() const;

  /// CLS + one token per enabled feature in canonical order; height and
  /// position pass through their adapters, every feature token gets its
  /// learned type bias. No positional encoding.
  std::vector<nn::NodePtr> build_word_tokens(
      const features::FeatureBundle& bundle) const;

  /// 1-layer word encoder over the tokens; returns the CLS output (1 x dim).
  nn::NodePtr word_encoder_forward(
      const std::vector<nn::NodePtr>& tokens,
      std::vector<std::vector<nn::Tensor>>* capture = nullptr,
      double dropout_rate = 0.0, std::mt19937_64* drop_rng = nullptr) const;

  /// Pads the word vectors to max_words with masked zero slots, runs the
  /// book encoder, returns the book CLS output.
  nn::NodePtr book_encoder_forward(
      const std::vector<nn::NodePtr>& word_vectors,
      std::vector<std::vector<nn::Tensor>>* capture = nullptr,
      std::vector<bool>* mask_out = nullptr, double dropout_rate = 0.0,
      std::mt19937_64* drop_rng = nullptr) const;

  nn::NodePtr classifier_forward(const nn::NodePtr& book_vector) const;

  /// Full pipeline for one book. In baseline mode semantic vectors feed the
  /// book encoder directly and the trace has no word-level matrices.
  nn::NodePtr classify(const std::vector<features::FeatureBundle>& bundles,
                       AttentionTrace* trace = nullptr, bool training = false,
                       std::mt19937_64* drop_rng = nullptr) const;

  std::vector<FeatureKind> word_token_kinds() const;

 private:
  ModelConfig config_;
  nn::ParameterStore params_;

  nn::LinearParams height_adapter_, position_adapter_;
  std::map<FeatureKind, nn::Parameter*> type_bias_;
  nn::Parameter* word_cls_ = nullptr;
  nn::Parameter* book_cls_ = nullptr;
  nn::EncoderStackParams word_encoder_, book_encoder_;
  nn::LinearParams classifier_hidden_layer_, classifier_out_layer_;
};

/// Checkpoint = nn manifest/blob pair with the config stored in the
/// manifest extras.
void save_model(const HierModel& net, const std::string& prefix);
std::unique_ptr<HierModel> load_model(const std::string& prefix,
                                      std::uint64_t seed = 0);

}  // namespace genrelens::model
