#include "genrelens/model.hpp"

#include <algorithm>

#include "genrelens/checkpoint.hpp"
#include "genrelens/errors.hpp"

namespace genrelens::model {

using namespace genrelens::nn;
using nlohmann::json;

void ModelConfig::validate() const {
  if (heads == 0 || dim % heads != 0)
    throw InvalidConfig("dim must be divisible by heads");
  if (enabled_features.empty())
    throw InvalidConfig("enabled_features must be non-empty");
  if (semantic_only_baseline &&
      (enabled_features.size() != 1 ||
       !enabled_features.count(FeatureKind::semantic)))
    throw InvalidConfig("baseline mode requires enabled_features == {semantic}");
  if (num_classes == 0 || max_words == 0 || word_layers == 0 || book_layers == 0)
    throw InvalidConfig("layer/word/class counts must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw InvalidConfig("dropout must be in [0, 1)");
}

json ModelConfig::to_json() const {
  json j;
  j["dim"] = dim;
  j["word_layers"] = word_layers;
  j["book_layers"] = book_layers;
  j["heads"] = heads;
  j["classifier_hidden"] = classifier_hidden;
  j["num_classes"] = num_classes;
  j["max_words"] = max_words;
  j["ffn_mult"] = ffn_mult;
  json feats = json::array();
  for (FeatureKind k : features::kAllKinds)
    if (enabled_features.count(k)) feats.push_back(features::kind_name(k));
  j["enabled_features"] = feats;
  j["semantic_only_baseline"] = semantic_only_baseline;
  j["semantic_in_word_encoder"] = semantic_in_word_encoder;
  j["dropout"] = dropout;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.dim = j.value("dim", c.dim);
  c.word_layers = j.value("word_layers", c.word_layers);
  c.book_layers = j.value("book_layers", c.book_layers);
  c.heads = j.value("heads", c.heads);
  c.classifier_hidden = j.value("classifier_hidden", c.dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.max_words = j.value("max_words", c.max_words);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  if (j.contains("enabled_features")) {
    c.enabled_features.clear();
    for (const auto& name : j.at("enabled_features"))
      c.enabled_features.insert(features::kind_from_name(name));
  }
  c.semantic_only_baseline = j.value("semantic_only_baseline", false);
  c.semantic_in_word_encoder = j.value("semantic_in_word_encoder", true);
  c.dropout = j.value("dropout", c.dropout);
  c.validate();
  return c;
}

ModelConfig ablation_config(const ModelConfig& base,
                            const std::set<FeatureKind>& removed) {
  for (FeatureKind k : removed)
    if (!base.enabled_features.count(k))
      throw InvalidConfig("cannot remove disabled feature " +
                          features::kind_name(k));
  ModelConfig out = base;
  for (FeatureKind k : removed) out.enabled_features.erase(k);
  if (out.enabled_features.empty())
    throw InvalidConfig("ablation would remove every feature");
  out.validate();
  return out;
}

HierModel::HierModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t d = config_.dim;
  std::size_t ffn_hidden = config_.ffn_mult * d;

  auto enabled = [&](FeatureKind k) { return config_.enabled_features.count(k) > 0; };

  if (!config_.semantic_only_baseline) {
    if (enabled(FeatureKind::height))
      height_adapter_ = make_linear(params_, "height_adapter", 1, d, rng);
    if (enabled(FeatureKind::position))
      position_adapter_ = make_linear(params_, "position_adapter", 2, d, rng);
    for (FeatureKind k : features::kAllKinds)
      if (enabled(k))
        type_bias_[k] = &params_.create("type_bias." + features::kind_name(k),
                                        normal_init({1, d}, rng));
    word_cls_ = &params_.create("word_cls", normal_init({1, d}, rng));
    word_encoder_ = make_encoder_stack(params_, "word_encoder",
                                       config_.word_layers, d, config_.heads,
                                       ffn_hidden, rng);
  }
  book_cls_ = &params_.create("book_cls", normal_init({1, d}, rng));
  book_encoder_ = make_encoder_stack(params_, "book_encoder",
                                     config_.book_layers, d, config_.heads,
                                     ffn_hidden, rng);
  classifier_hidden_layer_ =
      make_linear(params_, "classifier.hidden", d, config_.classifier_hidden, rng);
  classifier_out_layer_ = make_linear(params_, "classifier.out",
                                      config_.classifier_hidden,
                                      config_.num_classes, rng);
}

std::size_t HierModel::expected_param_count() const {
  std::size_t d = config_.dim;
  std::size_t f = config_.ffn_mult * d;
  // Per encoder layer: QKV+output projections, two layer norms, the FFN pair.
  std::size_t per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d);
  std::size_t n = 0;
  auto enabled = [&](FeatureKind k) { return config_.enabled_features.count(k) > 0; };
  if (!config_.semantic_only_baseline) {
    if (enabled(FeatureKind::height)) n += 1 * d + d;
    if (enabled(FeatureKind::position)) n += 2 * d + d;
    n += config_.enabled_features.size() * d;  // type biases
    n += d;                                    // word CLS
    n += config_.word_layers * per_layer;
  }
  n += d;  // book CLS
  n += config_.book_layers * per_layer;
  n += d * config_.classifier_hidden + config_.classifier_hidden;
  n += config_.classifier_hidden * config_.num_classes + config_.num_classes;
  return n;
}

std::vector<FeatureKind> HierModel::word_token_kinds() const {
  std::vector<FeatureKind> kinds;
  for (FeatureKind k : features::kAllKinds) {
    if (!config_.enabled_features.count(k)) continue;
    if (k == FeatureKind::semantic && !config_.semantic_in_word_encoder) continue;
    kinds.push_back(k);
  }
  return kinds;
}

std::vector<NodePtr> HierModel::build_word_tokens(
    const features::FeatureBundle& bundle) const {
  if (config_.semantic_only_baseline)
    throw InvalidConfig("baseline mode has no word-level tokens");
  std::vector<NodePtr> tokens;
  tokens.push_back(word_cls_->node);
  for (FeatureKind k : word_token_kinds()) {
    if (!bundle.has(k))
      throw MissingFeature("bundle missing enabled feature " +
                           features::kind_name(k));
    NodePtr token;
    switch (k) {
      case FeatureKind::height:
        token = linear(constant(Tensor({1, 1}, {bundle.height_raw})),
                       height_adapter_);
        break;
      case FeatureKind::position:
        token = linear(constant(Tensor({1, 2}, {bundle.position_raw[0],
                                                bundle.position_raw[1]})),
                       position_adapter_);
        break;
      default:
        token = constant(Tensor::row(bundle.vectors.at(k)));
    }
    tokens.push_back(add(token, type_bias_.at(k)->node));
  }
  return tokens;
}

NodePtr HierModel::word_encoder_forward(
    const std::vector<NodePtr>& tokens,
    std::vector<std::vector<Tensor>>* capture, double dropout_rate,
    std::mt19937_64* drop_rng) const {
  if (tokens.size() < 2)
    throw InvalidConfig("word encoder needs CLS plus at least one feature token");
  NodePtr x = stack_rows(tokens);
  std::vector<bool> valid(tokens.size(), true);
  NodePtr out = encoder_forward(x, word_encoder_, valid, capture, dropout_rate,
                                drop_rng);
  return select_row(out, 0);
}

NodePtr HierModel::book_encoder_forward(
    const std::vector<NodePtr>& word_vectors,
    std::vector<std::vector<Tensor>>* capture, std::vector<bool>* mask_out,
    double dropout_rate, std::mt19937_64* drop_rng) const {
  if (word_vectors.empty()) throw EmptyBook("book has no word vectors");
  if (word_vectors.size() > config_.max_words)
    throw InvalidConfig("more word vectors than max_words");
  std::vector<NodePtr> rows;
  rows.push_back(book_cls_->node);
  for (const auto& w : word_vectors) rows.push_back(w);
  NodePtr zero = constant(Tensor({1, config_.dim}));
  for (std::size_t i = word_vectors.size(); i < config_.max_words; ++i)
    rows.push_back(zero);
  std::vector<bool> valid(1 + config_.max_words, false);
  for (std::size_t i = 0; i <= word_vectors.size(); ++i) valid[i] = true;
  if (mask_out) *mask_out = valid;
  NodePtr x = stack_rows(rows);
  NodePtr out = encoder_forward(x, book_encoder_, valid, capture, dropout_rate,
                                drop_rng);
  return select_row(out, 0);
}

NodePtr HierModel::classifier_forward(const NodePtr& book_vector) const {
  return linear(relu(linear(book_vector, classifier_hidden_layer_)),
                classifier_out_layer_);
}

NodePtr HierModel::classify(const std::vector<features::FeatureBundle>& bundles,
                            AttentionTrace* trace, bool training,
                            std::mt19937_64* drop_rng) const {
  if (bundles.empty()) throw EmptyBook("book has no words");
  double rate = training ? config_.dropout : 0.0;
  std::vector<NodePtr> word_vectors;
  word_vectors.reserve(bundles.size());
  for (const auto& bundle : bundles) {
    if (config_.semantic_only_baseline) {
      if (!bundle.has(FeatureKind::semantic))
        throw MissingFeature("bundle missing enabled feature semantic");
      word_vectors.push_back(
          constant(Tensor::row(bundle.vectors.at(FeatureKind::semantic))));
      continue;
    }
    std::vector<std::vector<Tensor>>* capture = nullptr;
    if (trace) {
      trace->word_level.emplace_back();
      capture = &trace->word_level.back();
    }
    NodePtr vec = word_encoder_forward(build_word_tokens(bundle), capture, rate,
                                       drop_rng);
    if (config_.enabled_features.count(FeatureKind::semantic) &&
        !config_.semantic_in_word_encoder)
      vec = add(vec, constant(Tensor::row(bundle.vectors.at(FeatureKind::semantic))));
    word_vectors.push_back(vec);
  }

  std::vector<std::vector<Tensor>>* book_capture = nullptr;
  std::vector<bool>* mask_out = nullptr;
  if (trace) {
    trace->num_words = bundles.size();
    trace->token_kinds = word_token_kinds();
    book_capture = &trace->book_level;
    mask_out = &trace->book_mask;
  }
  NodePtr book_vec = book_encoder_forward(word_vectors, book_capture, mask_out,
                                          rate, drop_rng);
  return classifier_forward(book_vec);
}

void save_model(const HierModel& net, const std::string& prefix) {
  json extra;
  extra["kind"] = "hier_model";
  extra["model_config"] = net.config().to_json();
  nn::save_parameters(net.params(), prefix, extra);
}

std::unique_ptr<HierModel> load_model(const std::string& prefix,
                                      std::uint64_t seed) {
  nn::LoadedCheckpoint ck = nn::load_tensors(prefix);
  if (ck.extra.value("kind", "") != "hier_model")
    throw DataError(prefix + " is not a model checkpoint");
  ModelConfig config = ModelConfig::from_json(ck.extra.at("model_config"));
  auto net = std::make_unique<HierModel>(config, seed);
  nn::load_parameters(net->params(), prefix);
  return net;
}

}  // namespace genrelens::model
