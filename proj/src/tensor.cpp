#include "gatewire/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "gatewire/errors.hpp"

namespace gatewire {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_bias: return "add_bias";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::relu: return "relu";
    case OpKind::batchnorm: return "batchnorm";
    case OpKind::softmax: return "softmax";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::ce_loss: return "ce_loss";
    case OpKind::bce_loss: return "bce_loss";
  }
  return "?";
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<GraphNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw DimensionError("matrix needs at least one row");
  const std::size_t n = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged matrix rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), n}, std::move(data), requires_grad);
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ArgumentError("mutable_data() on a non-leaf tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw RankError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw ArgumentError("requires_grad can only be set on leaves");
  node_->requires_grad = value;
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->data, node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

Tensor make_op_result(Shape shape, std::vector<double> data, OpKind op,
                      std::vector<std::shared_ptr<GraphNode>> parents,
                      std::function<void(GraphNode&)> backward_fn) {
  auto node = std::make_shared<GraphNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

namespace {

// Gradient buffer of a parent, or nullptr if the parent takes no gradient.
std::vector<double>* grad_of(const std::shared_ptr<GraphNode>& p) {
  if (!p->requires_grad) return nullptr;
  if (p->grad.empty()) p->grad.assign(p->data.size(), 0.0);
  return &p->grad;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw LabelError("expected " + std::to_string(batch) + " labels, got " +
                     std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw LabelError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  // i-p-j order: each output element sums over p in ascending order no matter
  // how many rows are in the batch, so row results are batch-independent.
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return make_op_result({m, n}, std::move(out), OpKind::matmul, {an, bn},
                        [an, bn, m, k, n](GraphNode& self) {
                          const auto& G = self.grad;
                          if (auto* ga = grad_of(an)) {
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                double s = 0.0;
                                for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * bn->data[p * n + j];
                                (*ga)[i * k + p] += s;
                              }
                          }
                          if (auto* gb = grad_of(bn)) {
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                const double av = an->data[i * k + p];
                                for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av * G[i * n + j];
                              }
                          }
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op_result(a.shape(), std::move(out), OpKind::add, {an, bn}, [an, bn](GraphNode& self) {
    for (const auto& p : {an, bn}) {
      if (auto* g = grad_of(p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.rank() != 1 || bias.numel() != n) {
    throw DimensionError("add_bias shape mismatch: " + shape_str(x.shape()) + " + " +
                         shape_str(bias.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  auto xn = x.node(), bn = bias.node();
  return make_op_result(x.shape(), std::move(out), OpKind::add_bias, {xn, bn},
                        [xn, bn, m, n](GraphNode& self) {
                          if (auto* gx = grad_of(xn))
                            for (std::size_t i = 0; i < m * n; ++i) (*gx)[i] += self.grad[i];
                          if (auto* gb = grad_of(bn))
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad[i * n + j];
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_op_result(a.shape(), std::move(out), OpKind::mul, {an, bn}, [an, bn](GraphNode& self) {
    if (auto* ga = grad_of(an))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * bn->data[i];
    if (auto* gb = grad_of(bn))
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * an->data[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), OpKind::scale, {an}, [an, factor](GraphNode& self) {
    if (auto* g = grad_of(an))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return make_op_result({}, {s}, OpKind::sum, {an}, [an](GraphNode& self) {
    if (auto* g = grad_of(an))
      for (auto& v : *g) v += self.grad[0];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto xn = x.node();
  return make_op_result(x.shape(), std::move(out), OpKind::relu, {xn}, [xn](GraphNode& self) {
    if (auto* g = grad_of(xn))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xn->data[i] > 0.0) (*g)[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  auto xn = x.node();
  return make_op_result(x.shape(), std::move(out), OpKind::sigmoid, {xn}, [xn](GraphNode& self) {
    if (auto* g = grad_of(xn))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double s = self.data[i];
        (*g)[i] += self.grad[i] * s * (1.0 - s);
      }
  });
}

Tensor softmax(const Tensor& y) {
  require_rank2(y, "softmax");
  const std::size_t m = y.rows(), n = y.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = y.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(r[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  auto yn = y.node();
  return make_op_result(y.shape(), std::move(out), OpKind::softmax, {yn}, [yn, m, n](GraphNode& self) {
    auto* g = grad_of(yn);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.data[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        (*g)[i * n + j] += self.data[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

BatchNormState BatchNormState::make(std::size_t width) {
  BatchNormState s;
  s.gamma = Tensor::full({width}, 1.0, true);
  s.beta = Tensor::zeros({width}, true);
  s.running_mean.assign(width, 0.0);
  s.running_var.assign(width, 1.0);
  return s;
}

BatchNormState BatchNormState::clone() const {
  BatchNormState s = *this;
  s.gamma = gamma.clone();
  s.beta = beta.clone();
  return s;
}

namespace {

void check_batchnorm_input(const Tensor& x, const BatchNormState& state) {
  require_rank2(x, "batchnorm");
  if (x.cols() != state.width() || state.gamma.numel() != state.width() ||
      state.beta.numel() != state.width()) {
    throw DimensionError("batchnorm width " + std::to_string(state.width()) +
                         " does not match input " + shape_str(x.shape()));
  }
}

Tensor batchnorm_with_stats(const Tensor& x, const BatchNormState& state,
                            const std::vector<double>& mean, const std::vector<double>& inv_std,
                            bool batch_stats) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> xhat(m * n), out(m * n);
  const auto X = x.data();
  const auto G = state.gamma.data();
  const auto B = state.beta.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = i * n + j;
      xhat[k] = (X[k] - mean[j]) * inv_std[j];
      out[k] = G[j] * xhat[k] + B[j];
    }
  auto xn = x.node(), gn = state.gamma.node(), bn = state.beta.node();
  return make_op_result(
      x.shape(), std::move(out), OpKind::batchnorm, {xn, gn, bn},
      [xn, gn, bn, m, n, xhat = std::move(xhat), inv_std, batch_stats](GraphNode& self) {
        const auto& dy = self.grad;
        if (auto* gg = grad_of(gn))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += dy[i * n + j] * xhat[i * n + j];
        if (auto* gb = grad_of(bn))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += dy[i * n + j];
        auto* gx = grad_of(xn);
        if (!gx) return;
        if (!batch_stats) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              (*gx)[i * n + j] += dy[i * n + j] * gn->data[j] * inv_std[j];
          return;
        }
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t j = 0; j < n; ++j) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            const double d = dy[i * n + j] * gn->data[j];
            sum_d += d;
            sum_dx += d * xhat[i * n + j];
          }
          for (std::size_t i = 0; i < m; ++i) {
            const double d = dy[i * n + j] * gn->data[j];
            (*gx)[i * n + j] += inv_std[j] * inv_m *
                                (static_cast<double>(m) * d - sum_d - xhat[i * n + j] * sum_dx);
          }
        }
      });
}

}  // namespace

Tensor batchnorm(const Tensor& x, BatchNormState& state) {
  if (state.mode == Mode::eval) return batchnorm(x, static_cast<const BatchNormState&>(state));
  check_batchnorm_input(x, state);
  const std::size_t m = x.rows(), n = x.cols();
  if (m < 2) throw DegenerateBatchError("batchnorm in train mode needs a batch of at least 2, got 1");
  std::vector<double> mean(n, 0.0), var(n, 0.0), inv_std(n);
  const auto X = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) mean[j] += X[i * n + j];
  for (auto& v : mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = X[i * n + j] - mean[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < n; ++j) {
    const double biased = var[j] / static_cast<double>(m);
    const double unbiased = var[j] / static_cast<double>(m - 1);
    inv_std[j] = 1.0 / std::sqrt(biased + state.eps);
    state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
    state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
  }
  return batchnorm_with_stats(x, state, mean, inv_std, true);
}

Tensor batchnorm(const Tensor& x, const BatchNormState& state) {
  check_batchnorm_input(x, state);
  std::vector<double> inv_std(state.width());
  for (std::size_t j = 0; j < inv_std.size(); ++j)
    inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
  return batchnorm_with_stats(x, state, state.running_mean, inv_std, false);
}

Tensor cross_entropy(const Tensor& probs, std::span<const int> labels) {
  require_rank2(probs, "cross_entropy");
  const std::size_t m = probs.rows(), n = probs.cols();
  check_labels(labels, m, n);
  std::vector<int> lab(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) total -= std::log(std::max(probs.at(i, lab[i]), kProbClamp));
  auto pn = probs.node();
  return make_op_result({}, {total / static_cast<double>(m)}, OpKind::ce_loss, {pn},
                        [pn, m, n, lab = std::move(lab)](GraphNode& self) {
                          auto* g = grad_of(pn);
                          if (!g) return;
                          const double up = self.grad[0] / static_cast<double>(m);
                          for (std::size_t i = 0; i < m; ++i) {
                            const double p = pn->data[i * n + lab[i]];
                            if (p > kProbClamp) (*g)[i * n + lab[i]] -= up / p;
                          }
                        });
}

Tensor bce_loss(const Tensor& probs, std::span<const int> labels) {
  require_rank2(probs, "bce_loss");
  const std::size_t m = probs.rows();
  if (probs.cols() != 1) throw DimensionError("bce_loss expects [batch x 1], got " + shape_str(probs.shape()));
  check_labels(labels, m, 2);
  std::vector<int> lab(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = probs.data()[i];
    total -= lab[i] ? std::log(std::max(p, kProbClamp)) : std::log(std::max(1.0 - p, kProbClamp));
  }
  auto pn = probs.node();
  return make_op_result({}, {total / static_cast<double>(m)}, OpKind::bce_loss, {pn},
                        [pn, m, lab = std::move(lab)](GraphNode& self) {
                          auto* g = grad_of(pn);
                          if (!g) return;
                          const double up = self.grad[0] / static_cast<double>(m);
                          for (std::size_t i = 0; i < m; ++i) {
                            const double p = pn->data[i];
                            if (lab[i]) {
                              if (p > kProbClamp) (*g)[i] -= up / p;
                            } else if (1.0 - p > kProbClamp) {
                              (*g)[i] += up / (1.0 - p);
                            }
                          }
                        });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw RankError("backward needs a scalar loss, got shape " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<GraphNode*> order;
  std::unordered_set<GraphNode*> visited;
  std::vector<std::pair<GraphNode*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      GraphNode* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (GraphNode* n : order)
    if (n->op != OpKind::leaf) n->grad.assign(n->data.size(), 0.0);
  GraphNode* root = loss.node().get();
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    GraphNode* n = *it;
    if (n->op != OpKind::leaf && n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace gatewire
