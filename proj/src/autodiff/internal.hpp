#pragma once

#include <cmath>
#include <initializer_list>
#include <string>

#include "rawdeblur/autodiff.hpp"

namespace rawdeblur::ad::detail {

template <typename T>
void check_finite(std::span<const T> values, const char* op, const char* what) {
  for (T v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " in " + op);
}

/// Wraps freshly computed values into a graph node. The backward closure is
/// attached only when recording is on and some input needs a gradient.
template <typename T>
Tensor<T> make_result(const Shape& shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                      const char* op, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(values);
  node->op = op;
  if (checked_mode()) check_finite<T>(node->value, op, "value");
  bool needs = false;
  if (grad_enabled())
    for (const Tensor<T>* in : inputs)
      if (in && in->defined() && in->requires_grad()) needs = true;
  if (needs) {
    node->requires_grad = true;
    for (const Tensor<T>* in : inputs) node->parents.push_back(in && in->defined() ? in->node() : nullptr);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

/// Gradient buffer of parent `i`, or nullptr when it does not need one.
template <typename T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return &p->grad_buffer();
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

inline void require_rank4(const Shape& s, const char* op) {
  if (s.rank != 4) throw ShapeError(std::string(op) + ": expected an NCHW tensor, got " + s.str());
}

}  // namespace rawdeblur::ad::detail
