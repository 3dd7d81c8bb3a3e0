#include "genrelens/nn.hpp"

#include <cmath>

#include "genrelens/errors.hpp"

namespace genrelens::nn {

Parameter& ParameterStore::create(const std::string& name, Tensor init) {
  if (index_.count(name))
    throw InvalidConfig("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, leaf(std::move(init))});
  return params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad().fill(0.0);
}

std::size_t ParameterStore::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

Tensor normal_init(std::vector<std::size_t> shape, std::mt19937_64& rng,
                   double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

LinearParams make_linear(ParameterStore& store, const std::string& prefix,
                         std::size_t d_in, std::size_t d_out,
                         std::mt19937_64& rng) {
  LinearParams p;
  // Fan-in scaled init keeps activation variance roughly constant through
  // stacked layers; a fixed small stddev starves deep paths of signal.
  p.weight = &store.create(
      prefix + ".weight",
      normal_init({d_in, d_out}, rng, 1.0 / std::sqrt(double(d_in))));
  p.bias = &store.create(prefix + ".bias", Tensor({1, d_out}));
  return p;
}

NodePtr linear(const NodePtr& x, const LinearParams& p) {
  if (x->value.cols() != p.weight->value().rows())
    throw DimensionError("linear: input " + x->value.shape_str() +
                         " does not match weight " +
                         p.weight->value().shape_str());
  return add_rowvec(matmul(x, p.weight->node), p.bias->node);
}

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix,
                                std::size_t dim) {
  LayerNormParams p;
  p.gain = &store.create(prefix + ".gain", Tensor({1, dim}, 1.0));
  p.bias = &store.create(prefix + ".bias", Tensor({1, dim}));
  return p;
}

AttentionParams make_attention(ParameterStore& store, const std::string& prefix,
                               std::size_t dim, std::size_t heads,
                               std::mt19937_64& rng) {
  if (heads == 0 || dim % heads != 0)
    throw InvalidConfig("attention: dim " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
  AttentionParams p;
  p.heads = heads;
  p.query = make_linear(store, prefix + ".query", dim, dim, rng);
  p.key = make_linear(store, prefix + ".key", dim, dim, rng);
  p.value = make_linear(store, prefix + ".value", dim, dim, rng);
  p.output = make_linear(store, prefix + ".output", dim, dim, rng);
  return p;
}

NodePtr multi_head_self_attention(const NodePtr& x, const AttentionParams& p,
                                  const std::vector<bool>& valid,
                                  std::vector<Tensor>* capture) {
  std::size_t n = x->value.rows(), d = x->value.cols();
  if (valid.size() != n)
    throw DimensionError("attention: mask length != sequence length");
  std::size_t head_dim = d / p.heads;
  double att_scale = 1.0 / std::sqrt(double(head_dim));

  NodePtr q = linear(x, p.query);
  NodePtr k = linear(x, p.key);
  NodePtr v = linear(x, p.value);

  std::vector<NodePtr> head_outputs;
  head_outputs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    std::size_t c0 = h * head_dim, c1 = c0 + head_dim;
    NodePtr qh = slice_cols(q, c0, c1);
    NodePtr kh = slice_cols(k, c0, c1);
    NodePtr vh = slice_cols(v, c0, c1);
    NodePtr scores = scale(matmul(qh, transpose(kh)), att_scale);
    NodePtr weights = masked_row_softmax(scores, valid);
    if (capture) capture->push_back(weights->value);
    head_outputs.push_back(matmul(weights, vh));
  }
  return linear(concat_cols(head_outputs), p.output);
}

FeedForwardParams make_feed_forward(ParameterStore& store,
                                    const std::string& prefix, std::size_t dim,
                                    std::size_t hidden, std::mt19937_64& rng) {
  FeedForwardParams p;
  p.expand = make_linear(store, prefix + ".expand", dim, hidden, rng);
  p.contract = make_linear(store, prefix + ".contract", hidden, dim, rng);
  return p;
}

NodePtr feed_forward(const NodePtr& x, const FeedForwardParams& p) {
  return linear(relu(linear(x, p.expand)), p.contract);
}

EncoderStackParams make_encoder_stack(ParameterStore& store,
                                      const std::string& prefix,
                                      std::size_t layers, std::size_t dim,
                                      std::size_t heads, std::size_t ffn_hidden,
                                      std::mt19937_64& rng) {
  EncoderStackParams stack;
  for (std::size_t l = 0; l < layers; ++l) {
    std::string lp = prefix + "." + std::to_string(l);
    EncoderLayerParams layer;
    layer.norm_attn = make_layer_norm(store, lp + ".norm_attn", dim);
    layer.norm_ffn = make_layer_norm(store, lp + ".norm_ffn", dim);
    layer.attention = make_attention(store, lp + ".attn", dim, heads, rng);
    layer.ffn = make_feed_forward(store, lp + ".ffn", dim, ffn_hidden, rng);
    stack.layers.push_back(layer);
  }
  return stack;
}

NodePtr encoder_forward(const NodePtr& x, const EncoderStackParams& p,
                        const std::vector<bool>& valid,
                        std::vector<std::vector<Tensor>>* capture,
                        double dropout_rate, std::mt19937_64* drop_rng) {
  if (dropout_rate > 0.0 && !drop_rng)
    throw InvalidConfig("encoder_forward: dropout requires an RNG");
  NodePtr h = x;
  for (const auto& layer : p.layers) {
    std::vector<Tensor>* layer_capture = nullptr;
    if (capture) {
      capture->emplace_back();
      layer_capture = &capture->back();
    }
    NodePtr att = multi_head_self_attention(
        layer_norm(h, layer.norm_attn.gain->node, layer.norm_attn.bias->node),
        layer.attention, valid, layer_capture);
    if (dropout_rate > 0.0) att = dropout(att, dropout_rate, *drop_rng);
    h = add(h, att);
    NodePtr ff = feed_forward(
        layer_norm(h, layer.norm_ffn.gain->node, layer.norm_ffn.bias->node),
        layer.ffn);
    if (dropout_rate > 0.0) ff = dropout(ff, dropout_rate, *drop_rng);
    h = add(h, ff);
  }
  return h;
}

void AdamOptimizer::step(std::deque<Parameter>& params) {
  for (auto& p : params) {
    AdamState& s = states_[p.name];
    if (s.m.size() == 0) {
      s.m = Tensor(p.value().shape());
      s.v = Tensor(p.value().shape());
    }
    s.step += 1;
    double bc1 = 1.0 - std::pow(hyper_.beta1, double(s.step));
    double bc2 = 1.0 - std::pow(hyper_.beta2, double(s.step));
    for (std::size_t i = 0; i < p.value().size(); ++i) {
      double g = p.grad()[i];
      s.m[i] = hyper_.beta1 * s.m[i] + (1.0 - hyper_.beta1) * g;
      s.v[i] = hyper_.beta2 * s.v[i] + (1.0 - hyper_.beta2) * g * g;
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      p.value()[i] -= hyper_.learning_rate * mhat / (std::sqrt(vhat) + hyper_.epsilon);
    }
  }
}

const AdamState* AdamOptimizer::state(const std::string& name) const {
  auto it = states_.find(name);
  return it == states_.end() ? nullptr : &it->second;
}

GradCheckReport finite_difference_check(
    const std::function<NodePtr()>& loss_fn, std::deque<Parameter>& params,
    double h) {
  auto eval = [&]() { return loss_fn()->value[0]; };
  double base1 = eval();
  double base2 = eval();
  if (base1 != base2)
    throw std::runtime_error("finite_difference_check: closure is non-deterministic");

  // Analytic gradients.
  for (auto& p : params) p.grad().fill(0.0);
  NodePtr loss = loss_fn();
  backward(loss);

  GradCheckReport report;
  for (auto& p : params) {
    GradCheckEntry entry{p.name, 0.0};
    for (std::size_t i = 0; i < p.value().size(); ++i) {
      double saved = p.value()[i];
      p.value()[i] = saved + h;
      double up = eval();
      p.value()[i] = saved - h;
      double down = eval();
      p.value()[i] = saved;
      // Central difference is invalid across a ReLU corner: the one-sided
      // slopes disagree there, so skip those coordinates instead of
      // reporting a spurious mismatch.
      double fwd = (up - base1) / h;
      double bwd = (base1 - down) / h;
      if (std::abs(fwd - bwd) > 0.25 * std::max(std::abs(fwd), std::abs(bwd)) &&
          std::abs(fwd - bwd) > 1e-9) {
        ++report.kinks_skipped;
        continue;
      }
      double numeric = (up - down) / (2.0 * h);
      double analytic = p.grad()[i];
      // Floor at the FD noise scale: |loss| * eps / h of roundoff makes
      // gradients much below 1e-6 unmeasurable by central differences.
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      double rel = std::abs(numeric - analytic) / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace genrelens::nn
