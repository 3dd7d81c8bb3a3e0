#include "genrelens/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "genrelens/errors.hpp"

namespace genrelens::nn {

namespace {

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " +
                         t.shape_str());
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> back) {
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  auto n = std::make_shared<Node>(std::move(value), needs);
  if (needs) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(back);
  }
  return n;
}

// y += a * b  (dense row-major, ikj order)
void gemm_acc(const double* a, const double* b, double* y, std::size_t n,
              std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* yi = y + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) yi[j] += av * bp[j];
    }
  }
}

// y += a^T * b where a is n x k, b is n x m, y is k x m
void gemm_tn_acc(const double* a, const double* b, double* y, std::size_t n,
                 std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      double* yp = y + p * m;
      for (std::size_t j = 0; j < m; ++j) yp[j] += av * bi[j];
    }
  }
}

// y += a * b^T where a is n x k, b is m x k, y is n x m
void gemm_nt_acc(const double* a, const double* b, double* y, std::size_t n,
                 std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* yi = y + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      yi[j] += s;
    }
  }
}

}  // namespace

NodePtr constant(Tensor value) {
  return std::make_shared<Node>(std::move(value), false);
}

NodePtr leaf(Tensor value) {
  return std::make_shared<Node>(std::move(value), true);
}

void backward(const NodePtr& root) {
  // Topological order by iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr child = node->parents[next++];
      if (child->requires_grad && !visited.count(child.get())) {
        visited.insert(child.get());
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(node.get());
      stack.pop_back();
    }
  }
  root->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value))
    throw DimensionError("add: shape mismatch " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad)
        for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
  });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value))
    throw DimensionError("sub: shape mismatch " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (pa->requires_grad) pa->grad[i] += n.grad[i];
      if (pb->requires_grad) pb->grad[i] -= n.grad[i];
    }
  });
}

NodePtr scale(const NodePtr& a, double c) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return make_node(std::move(out), {a}, [c](Node& n) {
    auto& p = n.parents[0];
    for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += c * n.grad[i];
  });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  require_2d(a->value, "matmul lhs");
  require_2d(b->value, "matmul rhs");
  std::size_t n = a->value.rows(), k = a->value.cols();
  std::size_t k2 = b->value.rows(), m = b->value.cols();
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree, " +
                         a->value.shape_str() + " * " + b->value.shape_str());
  Tensor out({n, m});
  gemm_acc(a->value.data(), b->value.data(), out.data(), n, k, m);
  return make_node(std::move(out), {a, b}, [n, k, m](Node& node) {
    auto& a = node.parents[0];
    auto& b = node.parents[1];
    if (a->requires_grad)  // dA += G * B^T
      gemm_nt_acc(node.grad.data(), b->value.data(), a->grad.data(), n, m, k);
    if (b->requires_grad)  // dB += A^T * G
      gemm_tn_acc(a->value.data(), node.grad.data(), b->grad.data(), n, k, m);
  });
}

NodePtr transpose(const NodePtr& a) {
  require_2d(a->value, "transpose");
  std::size_t n = a->value.rows(), m = a->value.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a->value.at(i, j);
  return make_node(std::move(out), {a}, [n, m](Node& node) {
    auto& p = node.parents[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p->grad[i * m + j] += node.grad[j * n + i];
  });
}

NodePtr add_rowvec(const NodePtr& x, const NodePtr& bias) {
  require_2d(x->value, "add_rowvec x");
  if (bias->value.rows() != 1 || bias->value.cols() != x->value.cols())
    throw DimensionError("add_rowvec: bias " + bias->value.shape_str() +
                         " incompatible with " + x->value.shape_str());
  std::size_t n = x->value.rows(), d = x->value.cols();
  Tensor out = x->value;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bias->value[j];
  return make_node(std::move(out), {x, bias}, [n, d](Node& node) {
    auto& x = node.parents[0];
    auto& b = node.parents[1];
    if (x->requires_grad)
      for (std::size_t i = 0; i < n * d; ++i) x->grad[i] += node.grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) b->grad[j] += node.grad[i * d + j];
  });
}

NodePtr relu(const NodePtr& x) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
  return make_node(std::move(out), {x}, [](Node& node) {
    auto& p = node.parents[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (p->value[i] > 0.0) p->grad[i] += node.grad[i];
  });
}

NodePtr slice_cols(const NodePtr& x, std::size_t c0, std::size_t c1) {
  require_2d(x->value, "slice_cols");
  std::size_t n = x->value.rows(), d = x->value.cols();
  if (c0 >= c1 || c1 > d) throw DimensionError("slice_cols: bad range");
  std::size_t w = c1 - c0;
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x->value[i * d + c0 + j];
  return make_node(std::move(out), {x}, [n, d, c0, w](Node& node) {
    auto& p = node.parents[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j)
        p->grad[i * d + c0 + j] += node.grad[i * w + j];
  });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  std::size_t n = parts[0]->value.rows(), total = 0;
  for (const auto& p : parts) {
    require_2d(p->value, "concat_cols part");
    if (p->value.rows() != n) throw DimensionError("concat_cols: row mismatch");
    total += p->value.cols();
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t w = p->value.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[i * total + off + j] = p->value[i * w + j];
    off += w;
  }
  return make_node(std::move(out), parts, [n, total](Node& node) {
    std::size_t off = 0;
    for (auto& p : node.parents) {
      std::size_t w = p->value.cols();
      if (p->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j)
            p->grad[i * w + j] += node.grad[i * total + off + j];
      off += w;
    }
  });
}

NodePtr stack_rows(const std::vector<NodePtr>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  std::size_t d = rows[0]->value.cols();
  for (const auto& r : rows)
    if (r->value.rows() != 1 || r->value.cols() != d)
      throw DimensionError("stack_rows: every row must be 1x" + std::to_string(d));
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = rows[i]->value[j];
  return make_node(std::move(out), rows, [d](Node& node) {
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      auto& p = node.parents[i];
      if (!p->requires_grad) continue;
      for (std::size_t j = 0; j < d; ++j) p->grad[j] += node.grad[i * d + j];
    }
  });
}

NodePtr select_row(const NodePtr& x, std::size_t r) {
  require_2d(x->value, "select_row");
  std::size_t d = x->value.cols();
  if (r >= x->value.rows()) throw DimensionError("select_row: index out of range");
  Tensor out({1, d});
  for (std::size_t j = 0; j < d; ++j) out[j] = x->value[r * d + j];
  return make_node(std::move(out), {x}, [r, d](Node& node) {
    auto& p = node.parents[0];
    for (std::size_t j = 0; j < d; ++j) p->grad[r * d + j] += node.grad[j];
  });
}

NodePtr sum_all(const NodePtr& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  return make_node(Tensor({1, 1}, {s}), {x}, [](Node& node) {
    auto& p = node.parents[0];
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += node.grad[0];
  });
}

NodePtr masked_row_softmax(const NodePtr& x, const std::vector<bool>& valid) {
  require_2d(x->value, "masked_row_softmax");
  std::size_t n = x->value.rows(), m = x->value.cols();
  if (valid.size() != m)
    throw DimensionError("masked_row_softmax: mask length != columns");
  bool any = false;
  for (bool v : valid) any = any || v;
  if (!any) throw DimensionError("empty attention context");
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < m; ++j)
      if (valid[j]) mx = std::max(mx, x->value.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!valid[j]) continue;
      double e = std::exp(x->value.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j)
      if (valid[j]) out.at(i, j) /= z;
  }
  Tensor y = out;
  return make_node(std::move(out), {x}, [n, m, valid, y](Node& node) {
    auto& p = node.parents[0];
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        if (valid[j]) dot += y.at(i, j) * node.grad[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        if (valid[j])
          p->grad[i * m + j] += y.at(i, j) * (node.grad[i * m + j] - dot);
    }
  });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias,
                   double epsilon) {
  require_2d(x->value, "layer_norm");
  std::size_t n = x->value.rows(), d = x->value.cols();
  if (gain->value.cols() != d || bias->value.cols() != d)
    throw DimensionError("layer_norm: affine params must be 1x" + std::to_string(d));
  Tensor out({n, d});
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x->value.at(i, j);
    mu /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = x->value.at(i, j) - mu;
      var += c * c;
    }
    var /= double(d);
    inv_std[i] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      double h = (x->value.at(i, j) - mu) * inv_std[i];
      xhat.at(i, j) = h;
      out.at(i, j) = gain->value[j] * h + bias->value[j];
    }
  }
  return make_node(std::move(out), {x, gain, bias},
                   [n, d, xhat, inv_std](Node& node) {
    auto& x = node.parents[0];
    auto& g = node.parents[1];
    auto& b = node.parents[2];
    for (std::size_t i = 0; i < n; ++i) {
      double sum_gdy = 0.0, sum_gdy_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double gdy = g->value[j] * node.grad[i * d + j];
        sum_gdy += gdy;
        sum_gdy_xhat += gdy * xhat.at(i, j);
      }
      for (std::size_t j = 0; j < d; ++j) {
        double dy = node.grad[i * d + j];
        if (g->requires_grad) g->grad[j] += dy * xhat.at(i, j);
        if (b->requires_grad) b->grad[j] += dy;
        if (x->requires_grad) {
          double gdy = g->value[j] * dy;
          x->grad[i * d + j] += inv_std[i] * (gdy - sum_gdy / double(d) -
                                              xhat.at(i, j) * sum_gdy_xhat / double(d));
        }
      }
    }
  });
}

NodePtr dropout(const NodePtr& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw InvalidConfig("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(x->value.size());
  double inv = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = keep(rng) ? inv : 0.0;
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_node(std::move(out), {x}, [mask](Node& node) {
    auto& p = node.parents[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      p->grad[i] += mask[i] * node.grad[i];
  });
}

NodePtr cross_entropy(const NodePtr& logits, const std::vector<int>& labels) {
  require_2d(logits->value, "cross_entropy");
  std::size_t batch = logits->value.rows(), k = logits->value.cols();
  if (labels.size() != batch)
    throw DimensionError("cross_entropy: label count != batch size");
  for (std::size_t i = 0; i < batch; ++i)
    if (labels[i] < 0 || std::size_t(labels[i]) >= k)
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) +
                      " out of range at row " + std::to_string(i));
  Tensor probs = softmax_rows(logits->value);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double p = probs.at(i, std::size_t(labels[i]));
    loss += -std::log(std::max(p, 1e-300));
  }
  loss /= double(batch);
  return make_node(Tensor({1, 1}, {loss}), {logits},
                   [probs, labels, batch, k](Node& node) {
    auto& p = node.parents[0];
    double g = node.grad[0] / double(batch);
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double delta = (std::size_t(labels[i]) == j) ? 1.0 : 0.0;
        p->grad[i * k + j] += g * (probs.at(i, j) - delta);
      }
  });
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  std::size_t n = x.rows(), m = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, out.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= z;
  }
  return out;
}

}  // namespace genrelens::nn
