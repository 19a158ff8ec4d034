#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stvod/tensor.hpp"

namespace stvod {

/// One vertex of the differentiation graph.
///
/// `backward` reads `grad` of this node and accumulates into the parents.
/// Nodes built while no input requires a gradient keep neither parents nor a
/// backward rule, so evaluation-only forwards do not retain the graph.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::string op;
  bool requires_grad = false;

  /// Gradient buffer, zero-initialized to the value shape on first use.
  Tensor& grad_buffer();
  void accumulate(const Tensor& g, double scale = 1.0);
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value, bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  /// Gradient after backward; zeros when nothing flowed here.
  const Tensor& grad() const;
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();
  const std::string& op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph construction for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Registers a new op. `backward` is kept only when some parent needs a
/// gradient.
Var make_op(std::string op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward);

/// Reverse sweep from a scalar loss. Gradients accumulate into every
/// reachable node that requires one.
void backward(const Var& loss);

// Elementwise, same-shape operands only.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var add_n(const std::vector<Var>& terms);

// Scalar-times-tensor is the one permitted broadcast.
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// x[N,in] * W[in,out] + b[out] with b added to every row.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var linear(const Var& x, const Var& weight);

Var softmax(const Var& x, std::size_t axis);
/// Normalizes each row of x[N,C], then applies per-channel gain and bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// x[C,H,W] normalized over channel groups.
Var group_norm(const Var& x, const Var& gain, const Var& bias, std::size_t groups,
               double eps = 1e-5);
/// x[Cin,H,W], weight[Cout,Cin,kh,kw], bias[Cout] -> [Cout,Ho,Wo].
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride,
           std::size_t padding);

Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length);
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);

Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace stvod
