#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "icdc/errors.hpp"
#include "icdc/rng.hpp"

namespace icdc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

// One value in the reverse-mode graph. Parent links form the tape: the graph
// is acyclic by construction (an op's inputs always exist before its output),
// and backward() walks nodes exactly once in reverse topological order.
// `value` is immutable after the op that produced it; only `grad` mutates.
template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until first needed; same length as value after
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // accumulates into parents' grads
  const char* op_name = "leaf";

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

template <class S>
class Tensor {
 public:
  using Scalar = S;
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S value, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node<S>>();
    n->value.assign(numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(S value) { return filled(Shape{1}, value); }

  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<detail::Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor randn(Shape shape, RngStream& rng, double stddev, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node<S>>();
    n->value.resize(numel(shape));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    for (auto& v : n->value) v = static_cast<S>(rng.normal() * stddev);
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  S item() const {
    if (size() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  std::span<const S> values() const { return node_->value; }

  // Mutable access for parameter updates and initialization. Callers must not
  // mutate a tensor that is already part of a live graph.
  std::span<S> values_mut() { return node_->value; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  std::span<const S> grad() const {
    if (!has_grad()) throw std::logic_error("Tensor::grad: no gradient computed");
    return node_->grad;
  }

  std::span<S> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  // Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
  // repeated calls; interior gradients are transient per sweep.
  void backward() const {
    if (size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(shape()));
    }
    if (!node_->backward_fn) {
      throw std::invalid_argument("backward: loss is detached (no graph recorded)");
    }
    std::vector<detail::Node<S>*> topo = topo_order();
    for (detail::Node<S>* n : topo) {
      if (n->backward_fn) {  // interior: clear stale grads from earlier sweeps
        n->grad.assign(n->value.size(), S(0));
      }
    }
    node_->ensure_grad();
    node_->grad[0] = S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  const NodePtr& node() const { return node_; }

 private:
  // Iterative post-order DFS over parent links: parents precede children.
  std::vector<detail::Node<S>*> topo_order() const {
    std::vector<detail::Node<S>*> topo;
    std::unordered_set<detail::Node<S>*> visited;
    std::vector<std::pair<detail::Node<S>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        detail::Node<S>* p = n->parents[i++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        topo.push_back(n);
        stack.pop_back();
      }
    }
    return topo;
  }

  NodePtr node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

namespace detail {

template <class S>
inline void check_finite(const char* op_name, const std::vector<S>& values) {
  for (const S v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op_name) + ": produced non-finite value");
    }
  }
}

// Wires a freshly computed op result into the graph. The node records parents
// and a backward closure only when some input requires a gradient.
template <class S>
Tensor<S> make_op(const char* op_name, Shape out_shape, std::vector<S> out_values,
                  std::vector<Tensor<S>> parents,
                  std::function<void(Node<S>&)> backward_fn) {
  check_finite(op_name, out_values);
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(out_shape);
  n->value = std::move(out_values);
  n->op_name = op_name;
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (needs_grad) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<S>(std::move(n));
}

}  // namespace detail

}  // namespace icdc
