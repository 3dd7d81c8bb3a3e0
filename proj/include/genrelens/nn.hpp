#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "genrelens/autodiff.hpp"
#include "genrelens/tensor.hpp"

namespace genrelens::nn {

/// A named trainable tensor. The node persists across forward passes so
/// gradients accumulate into it during backward.
struct Parameter {
  std::string name;
  NodePtr node;

  Tensor& value() { return node->value; }
  const Tensor& value() const { return node->value; }
  Tensor& grad() { return node->grad; }
  const Tensor& grad() const { return node->grad; }
};

/// Flat registry of parameters with unique path-like names. Backed by a
/// deque so created parameters keep stable addresses.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, Tensor init);
  Parameter* find(const std::string& name);
  const std::deque<Parameter>& all() const { return params_; }
  std::deque<Parameter>& all() { return params_; }
  void zero_grad();
  std::size_t total_count() const;

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

Tensor normal_init(std::vector<std::size_t> shape, std::mt19937_64& rng,
                   double stddev = 0.02);

// --- layers ---------------------------------------------------------------

struct LinearParams {
  Parameter* weight = nullptr;  // d_in x d_out
  Parameter* bias = nullptr;    // 1 x d_out
};

LinearParams make_linear(ParameterStore& store, const std::string& prefix,
                         std::size_t d_in, std::size_t d_out,
                         std::mt19937_64& rng);

NodePtr linear(const NodePtr& x, const LinearParams& p);

struct LayerNormParams {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
};

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix,
                                std::size_t dim);

struct AttentionParams {
  LinearParams query, key, value, output;
  std::size_t heads = 1;
};

AttentionParams make_attention(ParameterStore& store, const std::string& prefix,
                               std::size_t dim, std::size_t heads,
                               std::mt19937_64& rng);

/// Scaled dot-product self-attention over all heads. `valid` masks key
/// positions; when `capture` is non-null the row-stochastic per-head
/// attention matrices are appended to it.
NodePtr multi_head_self_attention(const NodePtr& x, const AttentionParams& p,
                                  const std::vector<bool>& valid,
                                  std::vector<Tensor>* capture = nullptr);

struct FeedForwardParams {
  LinearParams expand, contract;
};

FeedForwardParams make_feed_forward(ParameterStore& store,
                                    const std::string& prefix, std::size_t dim,
                                    std::size_t hidden, std::mt19937_64& rng);

NodePtr feed_forward(const NodePtr& x, const FeedForwardParams& p);

/// Pre-norm residual encoder layer: x + Attn(LN(x)), then h + FFN(LN(h)).
struct EncoderLayerParams {
  LayerNormParams norm_attn, norm_ffn;
  AttentionParams attention;
  FeedForwardParams ffn;
};

struct EncoderStackParams {
  std::vector<EncoderLayerParams> layers;
};

EncoderStackParams make_encoder_stack(ParameterStore& store,
                                      const std::string& prefix,
                                      std::size_t layers, std::size_t dim,
                                      std::size_t heads, std::size_t ffn_hidden,
                                      std::mt19937_64& rng);

/// Runs the stack. `capture` receives, per layer, the per-head attention
/// matrices. `drop_rng` must be set when dropout_rate > 0.
NodePtr encoder_forward(const NodePtr& x, const EncoderStackParams& p,
                        const std::vector<bool>& valid,
                        std::vector<std::vector<Tensor>>* capture = nullptr,
                        double dropout_rate = 0.0,
                        std::mt19937_64* drop_rng = nullptr);

// --- optimization ---------------------------------------------------------

struct AdamHyper {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  Tensor m, v;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamHyper hyper = {}) : hyper_(hyper) {}
  void step(std::deque<Parameter>& params);
  const AdamState* state(const std::string& name) const;
  AdamHyper& hyper() { return hyper_; }

 private:
  AdamHyper hyper_;
  std::map<std::string, AdamState> states_;
};

// --- gradient verification ------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  /// Coordinates sitting on a ReLU corner (one-sided derivatives disagree);
  /// central differences are meaningless there and the scalar is skipped.
  std::size_t kinks_skipped = 0;
  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Central-difference check of analytic gradients. `loss_fn` must rebuild
/// the graph from current parameter values and return the scalar loss node.
/// Throws if two evaluations of the closure disagree (non-determinism).
GradCheckReport finite_difference_check(
    const std::function<NodePtr()>& loss_fn, std::deque<Parameter>& params,
    double h = 1e-5);

}  // namespace genrelens::nn
