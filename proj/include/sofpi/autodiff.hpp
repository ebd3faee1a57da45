// Reverse-mode automatic differentiation over dense tensors.
//
// A Var is a shared handle to a DiffNode holding a value, the parents it was
// computed from and the rule that maps an upstream gradient to per-parent
// gradients. Graphs are built eagerly while tracing is enabled and are
// confined to the thread that built them.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sofpi/tensor.hpp"

namespace sofpi {

struct DiffNode;
using NodePtr = std::shared_ptr<DiffNode>;

/// Maps the upstream gradient of a node to one gradient per parent. An empty
/// tensor in the result means "no contribution".
using BackwardRule = std::function<std::vector<Tensor>(const DiffNode& self, const Tensor& upstream)>;

struct DiffNode {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string op;
  std::vector<NodePtr> parents;
  BackwardRule backward;
};

class Var {
 public:
  Var() = default;
  /// Leaf variable. Leaves with requires_grad accumulate gradients on backward().
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  /// Mutable access for leaves only (optimizer updates).
  Tensor& mutable_value();
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->parents.empty(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  const std::string& op() const { return node_->op; }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }
  static Var wrap(NodePtr node);

 private:
  NodePtr node_;
};

/// Tracing is on by default. While a guard is alive no graph is recorded.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds a result node. Parents that do not require gradients are kept out of
/// the graph; when tracing is off or no parent requires a gradient the result
/// is a constant leaf.
Var make_result(Tensor value, std::vector<Var> parents, BackwardRule rule, std::string op);

/// Operation with a hand-derived backward rule.
class CustomGradOp {
 public:
  virtual ~CustomGradOp() = default;
  virtual std::string name() const = 0;
  virtual Tensor forward(const std::vector<const Tensor*>& inputs) const = 0;
  /// Returns exactly one gradient per input, shaped like that input. An empty
  /// tensor marks an input as non-differentiable.
  virtual std::vector<Tensor> backward(const std::vector<const Tensor*>& inputs, const Tensor& output,
                                       const Tensor& upstream) const = 0;
};

Var apply(std::shared_ptr<const CustomGradOp> op, const std::vector<Var>& inputs);

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires a
/// gradient. The root must hold a single element.
void backward(const Var& root);

/// Gradients of a scalar root with respect to the given variables, without
/// touching leaf accumulators. Unreached variables get zero tensors.
std::vector<Tensor> gradients(const Var& root, const std::vector<Var>& wrt);

// Elementwise and reduction ops. Binary ops broadcast single-element operands.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var sum(const Var& a);
/// Sum over one axis; the axis is removed (rank-1 inputs reduce to shape [1]).
Var sum_axis(const Var& a, std::size_t axis);
Var mean(const Var& a);
Var squared_norm(const Var& a);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace sofpi
