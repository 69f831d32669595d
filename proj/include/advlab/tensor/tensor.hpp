#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "advlab/core/error.hpp"

namespace advlab {

using Shape = std::vector<std::size_t>;
using Labels = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline std::atomic<bool>& finite_checks_flag() {
#ifdef NDEBUG
  static std::atomic<bool> flag{false};
#else
  static std::atomic<bool> flag{true};
#endif
  return flag;
}

inline std::uint64_t next_node_order() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

/// When enabled, every primitive scans its output and raises NumericError on
/// NaN or Inf. On by default in builds without NDEBUG.
inline void set_finite_checks(bool enabled) {
  detail::finite_checks_flag().store(enabled);
}
inline bool finite_checks_enabled() { return detail::finite_checks_flag().load(); }

template <typename T>
struct Node {
  using BackwardFn = std::function<void(Node&)>;

  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::uint64_t order = detail::next_node_order();
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + to_string(shape) + " needs " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("zero-length dimension in " + to_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, fill), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }

  T item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  // Only leaves (parameters, inputs) may be written in place; every value
  // produced by an operation is immutable.
  std::span<T> mutable_data() {
    if (!node_->is_leaf()) throw UsageError("mutable_data() on a non-leaf tensor");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw UsageError("set_requires_grad() on a non-leaf tensor");
    node_->requires_grad = on;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const {
    if (!has_grad()) throw UsageError("tensor holds no gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values, disconnected from any tape.
  Tensor detach(bool requires_grad = false) const {
    return from(shape(), node_->value, requires_grad);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(size());
    std::transform(node_->value.begin(), node_->value.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>::from(shape(), std::move(out));
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  const char* op() const { return node_->op; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op +
                         " at element " + std::to_string(i));
    }
  }
}

}  // namespace detail

/// Records a primitive's output on the tape. Parents and the backward closure
/// are kept only when some parent participates in differentiation.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      typename Node<T>::BackwardFn backward_fn) {
  if (finite_checks_enabled()) detail::check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool tracked = std::any_of(parents.begin(), parents.end(),
                                   [](const Tensor<T>& p) { return p.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

// Accumulates `contrib` into a parent's gradient if the parent is tracked.
template <typename T, typename F>
void accumulate_into(Node<T>& parent, F&& contrib) {
  if (!parent.requires_grad) return;
  contrib(parent.ensure_grad());
}

/// Ordered record of the primitives reachable from a root. Node creation
/// order is a topological order of the graph, so sorting the reachable set by
/// descending creation index yields a strict reverse topological traversal.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root) {
    std::vector<Node<T>*> stack{root.node().get()};
    std::unordered_set<const Node<T>*> seen;
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad) continue;
      if (!seen.insert(n).second) continue;
      nodes_.push_back(n);
      for (auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(nodes_.begin(), nodes_.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->order > b->order; });
  }

  const std::vector<Node<T>*>& reverse_topological() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node<T>*> nodes_;
};

/// Reverse-mode sweep from a scalar loss. Interior gradients are recomputed
/// from scratch on every call; leaf gradients accumulate until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw UsageError("backward() on a tensor that is not tape-tracked");

  Tape<T> tape(loss);
  for (Node<T>* n : tape.reverse_topological()) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (Node<T>* n : tape.reverse_topological()) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace advlab
