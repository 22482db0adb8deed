// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsc/rng.hpp"

namespace gsc {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Node;
}

// Dense row-major float64 array that may participate in a reverse-mode
// differentiation graph.
//
// A Tensor is a handle: copies share the same node, so an optimizer that
// updates a parameter through one handle is seen by every layer holding it.
// Use clone() for an independent copy and detach() for a value without graph.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view of a leaf's values (parameters, inputs). Throws on a
  // tensor produced by a recorded op.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // New leaf sharing nothing with this tensor; requires_grad is false.
  Tensor detach() const;
  // New leaf with copied values and the same requires_grad flag.
  Tensor clone() const;

  const detail::Node* node_id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct TensorAccess;
};

// ---------------------------------------------------------------------------
// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// Unary maps.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);

// Softmax over the last axis.
Tensor softmax(const Tensor& x);

// a: [..., m, k]; b: [k, n] (shared) or [..., k, n] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swap the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Zero-extend along an axis to new_length (inverse of a leading slice).
Tensor pad_axis(const Tensor& x, std::size_t axis, std::size_t new_length);
// Gather rows of a [rows, cols] table.
Tensor index_rows(const Tensor& table, const std::vector<std::size_t>& rows);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

// x: [N, Cin, H, W]; weight: [Cout, Cin, k, k]; bias: [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// x: [N, Cin, H, W]; weight: [Cin, Cout, k, k]; bias: [Cout] or undefined.
// Output side (H - 1) * stride - 2 * padding + k + output_padding.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding, std::size_t output_padding = 0);

// Identity in value; contributes no gradient to its argument.
Tensor stop_gradient(const Tensor& x);

// ---------------------------------------------------------------------------
// Reverse-mode differentiation.

// Topologically ordered list of the recorded ops reachable from a root.
class Tape {
 public:
  struct Entry {
    std::string op;
    const detail::Node* output;
    std::vector<const detail::Node*> inputs;
  };

  static Tape record(const Tensor& root);
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  friend void backward(const Tensor& loss);
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf and consumes the
// recorded graph. Calling it again on the same graph throws.
void backward(const Tensor& loss);

// Max over components of |a - n| / max(|a|, |n|, 1e-3 * max_i(|a_i|, |n_i|)) for
// analytic gradient a and fourth-order central difference n of a scalar function of x.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps);
// Same check against a leaf already captured by f (e.g. a model parameter);
// the leaf is perturbed in place and restored.
double finite_diff_check_leaf(const std::function<Tensor()>& f, Tensor& leaf, double eps);

}  // namespace gsc
