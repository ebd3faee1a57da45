#include "sofpi/autodiff.hpp"

#include <unordered_map>
#include <unordered_set>

namespace sofpi {
namespace {

thread_local bool g_grad_enabled = true;

bool is_single(const Tensor& t) { return t.size() == 1; }

// Shape of a broadcasting binary op, or throws.
Shape broadcast_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_single(b)) return a.shape();
  if (is_single(a)) return b.shape();
  throw ShapeError(op, a.shape(), b.shape());
}

// Reduces a gradient of the broadcast shape back to the operand's shape.
Tensor unbroadcast(const Tensor& grad, const Tensor& operand) {
  if (grad.shape() == operand.shape()) return grad;
  return Tensor(operand.shape(), sofpi::sum(grad));
}

double elem(const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; }

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<DiffNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->op = "leaf";
}

Tensor& Var::mutable_value() {
  if (!is_leaf()) throw Error("mutable_value() on non-leaf variable '" + node_->op + "'");
  return node_->value;
}

Var Var::wrap(NodePtr node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_result(Tensor value, std::vector<Var> parents, BackwardRule rule, std::string op) {
  auto node = std::make_shared<DiffNode>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool any = false;
  if (g_grad_enabled)
    for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(rule);
  }
  return Var::wrap(std::move(node));
}

Var apply(std::shared_ptr<const CustomGradOp> op, const std::vector<Var>& inputs) {
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  for (const auto& in : inputs) values.push_back(&in.value());
  Tensor out = op->forward(values);
  const std::string name = op->name();
  return make_result(
      std::move(out), inputs,
      [op](const DiffNode& self, const Tensor& upstream) {
        std::vector<const Tensor*> in;
        in.reserve(self.parents.size());
        for (const auto& p : self.parents) in.push_back(&p->value);
        auto grads = op->backward(in, self.value, upstream);
        if (grads.size() != in.size())
          throw Error("custom op '" + op->name() + "' returned " + std::to_string(grads.size()) +
                      " gradients for " + std::to_string(in.size()) + " inputs");
        for (std::size_t i = 0; i < grads.size(); ++i)
          if (!grads[i].empty() && grads[i].shape() != in[i]->shape())
            throw ShapeError("custom op '" + op->name() + "' gradient " + std::to_string(i),
                             grads[i].shape(), in[i]->shape());
        return grads;
      },
      name);
}

namespace {

std::unordered_map<const DiffNode*, Tensor> propagate(const Var& root) {
  if (!root.defined()) throw Error("backward on undefined variable");
  if (root.value().size() != 1)
    throw Error("backward requires a scalar root, got shape " + shape_string(root.shape()));

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<const DiffNode*> order;
  std::unordered_set<const DiffNode*> seen;
  std::vector<std::pair<const DiffNode*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const DiffNode* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const DiffNode*, Tensor> grads;
  grads.emplace(root.node().get(), Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const DiffNode* node = *it;
    auto g = grads.find(node);
    if (g == grads.end() || node->parents.empty() || !node->backward) continue;
    std::vector<Tensor> pg = node->backward(*node, g->second);
    for (std::size_t i = 0; i < node->parents.size() && i < pg.size(); ++i) {
      const DiffNode* p = node->parents[i].get();
      if (!p->requires_grad || pg[i].empty()) continue;
      auto [slot, inserted] = grads.try_emplace(p, std::move(pg[i]));
      if (!inserted) slot->second += pg[i];
    }
  }
  return grads;
}

}  // namespace

void backward(const Var& root) {
  auto grads = propagate(root);
  for (auto& [node, g] : grads) {
    if (!node->parents.empty()) continue;
    auto* leaf = const_cast<DiffNode*>(node);
    if (leaf->grad.empty())
      leaf->grad = std::move(g);
    else
      leaf->grad += g;
  }
}

std::vector<Tensor> gradients(const Var& root, const std::vector<Var>& wrt) {
  auto grads = propagate(root);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& v : wrt) {
    auto it = grads.find(v.node().get());
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(v.shape()));
  }
  return out;
}

Var add(const Var& a, const Var& b) {
  const Shape s = broadcast_shape("add", a.value(), b.value());
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = elem(a.value(), i) + elem(b.value(), i);
  return make_result(
      std::move(out), {a, b},
      [](const DiffNode& self, const Tensor& up) {
        return std::vector<Tensor>{unbroadcast(up, self.parents[0]->value), unbroadcast(up, self.parents[1]->value)};
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  const Shape s = broadcast_shape("sub", a.value(), b.value());
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = elem(a.value(), i) - elem(b.value(), i);
  return make_result(
      std::move(out), {a, b},
      [](const DiffNode& self, const Tensor& up) {
        return std::vector<Tensor>{unbroadcast(up, self.parents[0]->value),
                                   unbroadcast(-1.0 * up, self.parents[1]->value)};
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  const Shape s = broadcast_shape("mul", a.value(), b.value());
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = elem(a.value(), i) * elem(b.value(), i);
  return make_result(
      std::move(out), {a, b},
      [](const DiffNode& self, const Tensor& up) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        Tensor ga(up.shape()), gb(up.shape());
        for (std::size_t i = 0; i < up.size(); ++i) {
          ga[i] = up[i] * elem(bv, i);
          gb[i] = up[i] * elem(av, i);
        }
        return std::vector<Tensor>{unbroadcast(ga, av), unbroadcast(gb, bv)};
      },
      "mul");
}

Var scale(const Var& a, double s) {
  return make_result(
      s * a.value(), {a}, [s](const DiffNode&, const Tensor& up) { return std::vector<Tensor>{s * up}; }, "scale");
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return make_result(
      std::move(out), {a}, [](const DiffNode&, const Tensor& up) { return std::vector<Tensor>{up}; }, "add_scalar");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var sum(const Var& a) {
  return make_result(
      Tensor::scalar(sofpi::sum(a.value())), {a},
      [](const DiffNode& self, const Tensor& up) {
        return std::vector<Tensor>{Tensor(self.parents[0]->value.shape(), up[0])};
      },
      "sum");
}

Var sum_axis(const Var& a, std::size_t axis) {
  const Shape& in = a.shape();
  if (axis >= in.size()) throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for " + shape_string(in));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t n = in[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (i != axis) out_shape.push_back(in[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i];
  return make_result(
      std::move(out), {a},
      [outer, inner, n](const DiffNode& self, const Tensor& up) {
        Tensor g(self.parents[0]->value.shape());
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i) g[(o * n + k) * inner + i] = up[o * inner + i];
        return std::vector<Tensor>{std::move(g)};
      },
      "sum_axis");
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var squared_norm(const Var& a) {
  return make_result(
      Tensor::scalar(sofpi::squared_norm(a.value())), {a},
      [](const DiffNode& self, const Tensor& up) { return std::vector<Tensor>{(2.0 * up[0]) * self.parents[0]->value}; },
      "squared_norm");
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat", first, s);
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& x = parts[p].value();
    const std::size_t n = extents[p];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data().begin() + o * n * inner, n * inner, out.data().begin() + (o * total + offset) * inner);
    offset += n;
  }
  return make_result(
      std::move(out), parts,
      [extents, outer, inner, total](const DiffNode& self, const Tensor& up) {
        std::vector<Tensor> grads;
        std::size_t off = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
          const std::size_t n = extents[p];
          Tensor g(self.parents[p]->value.shape());
          for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(up.data().begin() + (o * total + off) * inner, n * inner, g.data().begin() + o * n * inner);
          grads.push_back(std::move(g));
          off += n;
        }
        return grads;
      },
      "concat");
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in = a.shape();
  if (axis >= in.size() || begin >= end || end > in[axis])
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_string(in));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t n = in[axis], m = end - begin;
  Shape out_shape = in;
  out_shape[axis] = m;
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().begin() + (o * n + begin) * inner, m * inner, out.data().begin() + o * m * inner);
  return make_result(
      std::move(out), {a},
      [outer, inner, n, m, begin](const DiffNode& self, const Tensor& up) {
        Tensor g(self.parents[0]->value.shape());
        for (std::size_t o = 0; o < outer; ++o)
          std::copy_n(up.data().begin() + o * m * inner, m * inner, g.data().begin() + (o * n + begin) * inner);
        return std::vector<Tensor>{std::move(g)};
      },
      "slice");
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(
      std::move(out), {a},
      [](const DiffNode& self, const Tensor& up) {
        return std::vector<Tensor>{up.reshaped(self.parents[0]->value.shape())};
      },
      "reshape");
}

}  // namespace sofpi
