#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gatewire {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

enum class OpKind {
  leaf,
  matmul,
  add,
  add_bias,
  mul,
  scale,
  sum,
  relu,
  batchnorm,
  softmax,
  sigmoid,
  ce_loss,
  bce_loss,
};

const char* op_name(OpKind kind);

struct GraphNode {
  Shape shape;
  std::vector<double> data;
  // Empty when no gradient has been accumulated.
  std::vector<double> grad;
  bool requires_grad = false;
  OpKind op = OpKind::leaf;
  std::vector<std::shared_ptr<GraphNode>> parents;
  // Pushes this node's grad into the grads of its parents.
  std::function<void(GraphNode&)> backward_fn;
};

// Handle to a node of the autodiff graph. Copies share the node; use clone()
// for an independent leaf copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Rank-2 tensor from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  std::span<const double> data() const { return node_->data; }
  // Writable access is for leaves only (parameter init, optimizer updates).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i, std::size_t j) const { return node_->data[i * cols() + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(node_->data).subspan(i * cols(), cols());
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node_->op == OpKind::leaf; }
  OpKind op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  // Resets the gradient to an allocated all-zero buffer.
  void zero_grad();
  // Drops the gradient buffer entirely.
  void clear_grad() { node_->grad.clear(); }

  Tensor clone() const;
  // Leaf sharing no graph history with this tensor.
  Tensor detach() const;

  const std::shared_ptr<GraphNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<GraphNode> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, OpKind,
                               std::vector<std::shared_ptr<GraphNode>>,
                               std::function<void(GraphNode&)>);

  std::shared_ptr<GraphNode> node_;
};

// Builds a non-leaf node; requires_grad is inherited from the parents.
Tensor make_op_result(Shape shape, std::vector<double> data, OpKind op,
                      std::vector<std::shared_ptr<GraphNode>> parents,
                      std::function<void(GraphNode&)> backward_fn);

enum class Mode { train, eval };

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  Mode mode = Mode::train;

  static BatchNormState make(std::size_t width);
  std::size_t width() const { return running_mean.size(); }
  BatchNormState clone() const;
};

Tensor matmul(const Tensor& a, const Tensor& b);
// Elementwise sum of two tensors of identical shape.
Tensor add(const Tensor& a, const Tensor& b);
// x[batch x n] + bias[n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Row-wise softmax over a [batch x n] tensor.
Tensor softmax(const Tensor& y);

// Train mode normalizes by batch statistics and updates the running
// statistics; eval mode uses the running statistics only.
Tensor batchnorm(const Tensor& x, BatchNormState& state);
// Always evaluates with running statistics; never mutates the state.
Tensor batchnorm(const Tensor& x, const BatchNormState& state);

inline constexpr double kProbClamp = 1e-12;

// Mean over the batch of -log p[label].
Tensor cross_entropy(const Tensor& probs, std::span<const int> labels);
// Binary cross entropy on sigmoid outputs of shape [batch x 1].
Tensor bce_loss(const Tensor& probs, std::span<const int> labels);

// Reverse-mode pass from a scalar. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

}  // namespace gatewire
