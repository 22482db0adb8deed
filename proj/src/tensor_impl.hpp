// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "gsc/tensor.hpp"

namespace gsc {
namespace detail {

// Fixed alignment makes vectorized kernels take the same path, and round the same way,
// wherever the heap places a buffer.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward_fn;

  Buffer& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

struct TensorAccess {
  static const detail::NodePtr& node(const Tensor& t) {
    if (!t.node_) throw TensorError("use of undefined tensor");
    return t.node_;
  }
  static Tensor wrap(detail::NodePtr n) { return Tensor(std::move(n)); }
};

namespace detail {

// Builds an op output. The backward closure is kept only if some input
// requires grad; non-finite outputs are rejected.
Tensor make_result(Shape shape, Buffer value, const char* op,
                   const std::vector<Tensor>& inputs, std::function<void(Node&)> backward_fn);

// Leaf tensor over an existing buffer.
Tensor make_leaf(Shape shape, Buffer data, bool requires_grad);

inline bool wants_grad(const NodePtr& n) { return n->requires_grad; }

}  // namespace detail
}  // namespace gsc
