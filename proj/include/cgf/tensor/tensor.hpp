#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cgf/core/error.hpp"

namespace cgf {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
inline thread_local bool grad_mode = true;
}

inline bool grad_enabled() { return detail::grad_mode; }

// Disables tape recording for the enclosing scope.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// One entry of the tape. A node that carries a backward rule is an interior
// primitive application; a node without one is a leaf.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  T* ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    validate(shape);
    node_->data.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    validate(shape);
    if (numel_of(shape) != values.size()) {
      throw ShapeError("tensor shape " + to_string(shape) + " needs " +
                       std::to_string(numel_of(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->data = std::move(values);
    node_->shape = std::move(shape);
  }

  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::size_t size(int axis) const {
    const int a = axis < 0 ? axis + static_cast<int>(dim()) : axis;
    if (a < 0 || a >= static_cast<int>(dim())) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       to_string(shape()));
    }
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  std::vector<T> to_vector() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->ensure_grad(), node_->data.size()}; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !node_->backward; }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  T at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != dim()) throw ShapeError("index rank mismatch for " + to_string(shape()));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= node_->shape[axis]) {
        throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                         std::to_string(axis));
      }
      off = off * node_->shape[axis] + i;
      ++axis;
    }
    return off;
  }

  // Copy of the values with no tape history.
  BasicTensor detach() const { return BasicTensor(shape(), to_vector()); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return BasicTensor<U>(shape(), std::move(out));
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  static void validate(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
  }

  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace detail

// Creates the result of a primitive and, when any input participates in
// differentiation, appends it to the tape with the given backward rule.
// The rule receives the result node (whose grad is populated) and must
// accumulate into the grads of the inputs that require them.
template <typename T, typename Backward>
BasicTensor<T> record(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<BasicTensor<T>> inputs, Backward&& backward) {
  detail::check_finite(data, op);
  BasicTensor<T> out(std::move(shape), std::move(data));
  out.node()->op = op;
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) node->parents.push_back(in.node_ptr());
  }
  node->backward = std::forward<Backward>(backward);
  return out;
}

template <typename T, typename Backward>
BasicTensor<T> record(const char* op, Shape shape, std::vector<T> data,
                      const std::vector<BasicTensor<T>>& inputs, Backward&& backward) {
  detail::check_finite(data, op);
  BasicTensor<T> out(std::move(shape), std::move(data));
  out.node()->op = op;
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->parents.push_back(in.node_ptr());
  }
  node->backward = std::forward<Backward>(backward);
  return out;
}

// Grad buffer of an input if it participates, nullptr otherwise.
template <typename T>
T* grad_of(const BasicTensor<T>& t) {
  return t.defined() && t.requires_grad() ? t.node()->ensure_grad() : nullptr;
}

// Reverse-mode sweep from a scalar loss. Leaves accumulate into their grad;
// interior grads and the recorded history are released afterwards.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw InvalidArgument("loss does not depend on any tensor that requires grad");
  }
  Node<T>* root = loss.node();
  if (root->consumed) throw InvalidArgument("tape for this loss was already consumed");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward) continue;
    n->ensure_grad();
    n->backward(*n);
  }
  for (Node<T>* n : order) {
    if (!n->backward) continue;
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->backward = nullptr;
    n->parents.clear();
    n->consumed = true;
  }
}

}  // namespace cgf
