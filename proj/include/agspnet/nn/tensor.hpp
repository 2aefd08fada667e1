#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "agspnet/error.hpp"

namespace agspnet::nn {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NCHW extents; lower-rank tensors use 1 for the leading dimensions.
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
  std::size_t chw() const { return static_cast<std::size_t>(c) * h * w; }
  int dim(int axis) const { return axis == 0 ? n : axis == 1 ? c : axis == 2 ? h : w; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w;
  }
  T& at(int n, int c, int h, int w) { return data[offset(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return data[offset(n, c, h, w)]; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

inline bool& grad_enabled() {
  thread_local bool on = true;
  return on;
}

/// Disables graph recording for its lifetime.
class NoGrad {
 public:
  NoGrad() : prev_(grad_enabled()) { grad_enabled() = false; }
  ~NoGrad() { grad_enabled() = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (const T v : t.data) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
  }
}

/// Wraps an op result, recording parents and the backward rule when any
/// parent needs a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, const char* op, std::function<void(Node<T>&)> backward) {
  check_finite(value, op);
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  if (grad_enabled()) {
    for (const auto& p : parents) n->requires_grad = n->requires_grad || (p && p->requires_grad);
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return n;
}

/// Reverse-mode sweep from `root`, seeded with `seed` (ones when empty).
template <typename T>
void backward(const Var<T>& root, const std::vector<T>& seed = {}) {
  if (!root->requires_grad) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  auto& g = root->grad_buffer();
  if (seed.empty()) {
    for (auto& v : g) v += T(1);
  } else {
    if (seed.size() != g.size()) throw ShapeError("backward seed size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

}  // namespace agspnet::nn
