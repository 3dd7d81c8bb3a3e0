#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "genrelens/tensor.hpp"

namespace genrelens::nn {

/// One node of the dynamically built computation graph. Leaves are either
/// constants (requires_grad = false) or parameters that persist across steps;
/// interior nodes own a closure that scatters this node's gradient into its
/// parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  explicit Node(Tensor v, bool needs_grad = false)
      : value(std::move(v)),
        grad(value.shape()),
        requires_grad(needs_grad) {}
};

using NodePtr = std::shared_ptr<Node>;

NodePtr constant(Tensor value);
NodePtr leaf(Tensor value);  // requires_grad = true

/// Runs reverse-mode accumulation from `root`, seeding its gradient with
/// ones. Gradients accumulate; callers zero parameter grads between steps.
void backward(const NodePtr& root);

// --- primitive operations -------------------------------------------------

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double c);
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);
NodePtr add_rowvec(const NodePtr& x, const NodePtr& bias);  // bias 1xD
NodePtr relu(const NodePtr& x);
NodePtr slice_cols(const NodePtr& x, std::size_t c0, std::size_t c1);
NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr stack_rows(const std::vector<NodePtr>& rows);  // each 1xD
NodePtr select_row(const NodePtr& x, std::size_t r);   // 1xD view copy
NodePtr sum_all(const NodePtr& x);                     // 1x1

/// Row-wise softmax over columns flagged valid; invalid columns get weight
/// exactly 0. Max-subtraction applied over the valid set.
NodePtr masked_row_softmax(const NodePtr& x, const std::vector<bool>& valid);

/// Per-row normalization to mean 0 / variance 1 (epsilon inside the sqrt),
/// then elementwise gain and bias (both 1xD).
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias,
                   double epsilon = 1e-5);

/// Inverted dropout. rate == 0 returns x untouched.
NodePtr dropout(const NodePtr& x, double rate, std::mt19937_64& rng);

/// Mean negative log softmax probability of each row's label. Returns 1x1.
NodePtr cross_entropy(const NodePtr& logits, const std::vector<int>& labels);

Tensor softmax_rows(const Tensor& x);  // forward-only helper

}  // namespace genrelens::nn
