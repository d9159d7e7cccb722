#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dflnet/errors.hpp"

namespace dflnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node;

// Gradient buffer of one op input; nullptr when that input needs no gradient.
template <typename T>
using GradSlot = std::vector<T>*;

// Backward closures accumulate (+=) into the input slots. They receive the
// node itself so that they can read saved inputs and outputs without holding
// an owning reference to it.
template <typename T>
using BackwardFn =
    std::function<void(const Node<T>& self, const std::vector<T>& grad_out, std::span<const GradSlot<T>> grad_in)>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  // Creation order. An op output is always created after its inputs, so
  // descending seq is a valid reverse topological order of the graph.
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<T> backward;

  const std::vector<T>& in(std::size_t i) const { return parents[i]->data; }
  const Shape& in_shape(std::size_t i) const { return parents[i]->shape; }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

// Dense row-major N-d array. Copies share storage (handle semantics); use
// clone() or detach() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->seq = detail::next_seq();
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->seq = detail::next_seq();
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    if (node_->grad.empty()) node_->grad.assign(numel(), T(0));
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Graph-free copy of the values.
  Tensor detach() const { return Tensor(shape(), node_->data); }
  Tensor clone() const { return detach(); }

  const char* op() const { return node_->op; }
  std::uint64_t seq() const { return node_->seq; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Wraps an op's output. Records parents and the backward closure only when
// graph recording is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = next_seq();
  bool needs = false;
  if (grad_mode()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                      BackwardFn<T> backward) {
  return make_result(op, std::move(shape), std::move(data), std::vector<Tensor<T>>(inputs), std::move(backward));
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. With an empty `only`, every leaf
// requiring grad that contributed to the loss receives (accumulates) its
// gradient. Otherwise only the listed leaves do, and no work is spent on
// branches that cannot reach them. Returns the number of op nodes visited.
template <typename T>
std::size_t backward(const Tensor<T>& loss, std::span<const Tensor<T>> only = {}) {
  using detail::Node;
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor that requires grad");
  }

  std::vector<Node<T>*> nodes;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{loss.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });

  std::unordered_set<const Node<T>*> targets;
  for (const auto& t : only) targets.insert(t.node().get());
  std::unordered_set<const Node<T>*> needed;
  for (const Node<T>* n : nodes) {
    bool need = targets.empty() || targets.count(n) > 0;
    for (const auto& p : n->parents) need = need || needed.count(p.get()) > 0;
    if (need) needed.insert(n);
  }

  std::unordered_map<const Node<T>*, std::vector<T>> grads;
  grads[loss.node().get()] = std::vector<T>{T(1)};
  std::size_t visited = 0;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node<T>* n = *it;
    auto g = grads.find(n);
    if (g == grads.end()) continue;
    if (n->parents.empty()) {
      if (targets.empty() || targets.count(n)) {
        if (n->grad.empty()) n->grad.assign(n->data.size(), T(0));
        for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += g->second[i];
      }
      grads.erase(g);
      continue;
    }
    std::vector<detail::GradSlot<T>> slots(n->parents.size(), nullptr);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      Node<T>* p = n->parents[i].get();
      if (!p->requires_grad || !needed.count(p)) continue;
      auto& buf = grads[p];
      if (buf.empty()) buf.assign(p->data.size(), T(0));
      slots[i] = &buf;
    }
    std::vector<T> grad_out = std::move(grads[n]);
    grads.erase(n);
    n->backward(*n, grad_out, slots);
    ++visited;
  }
  return visited;
}

template <typename T>
std::size_t backward(const Tensor<T>& loss, std::initializer_list<Tensor<T>> only) {
  std::vector<Tensor<T>> v(only);
  return backward(loss, std::span<const Tensor<T>>(v));
}

}  // namespace dflnet
