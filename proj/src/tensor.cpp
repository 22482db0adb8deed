// SPDX-License-Identifier: Apache-2.0
#include "gsc/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tensor_impl.hpp"

namespace gsc {

using detail::Node;
using detail::NodePtr;
using detail::Buffer;

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

const NodePtr& N(const Tensor& t) { return TensorAccess::node(t); }

void require_finite(const Buffer& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw TensorError(std::string("non-finite result in ") + op);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape helpers

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

Tensor make_result(Shape shape, Buffer value, const char* op,
                   const std::vector<Tensor>& inputs, std::function<void(Node&)> backward_fn) {
  require_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->leaf = false;
  bool any = false;
  for (const auto& in : inputs) any = any || N(in)->requires_grad;
  if (any) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(N(in));
    node->backward_fn = std::move(backward_fn);
  }
  return TensorAccess::wrap(std::move(node));
}

}  // namespace detail

using detail::make_result;

// ---------------------------------------------------------------------------
// Tensor

namespace detail {

Tensor make_leaf(Shape shape, Buffer data, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (data.empty() && n != 0) data.assign(n, 0.0);
  if (data.size() != n) {
    throw TensorError("data length " + std::to_string(data.size()) + " does not match shape " +
                      gsc::to_string(shape));
  }
  require_finite(data, "tensor construction");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return TensorAccess::wrap(std::move(node));
}

}  // namespace detail

using detail::make_leaf;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : Tensor(make_leaf(std::move(shape), Buffer(data.begin(), data.end()), requires_grad)) {}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return make_leaf(shape, Buffer(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return make_leaf(shape, Buffer(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  Buffer v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return make_leaf(shape, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return N(*this)->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw TensorError("axis " + std::to_string(axis) + " out of range for " + gsc::to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return N(*this)->value.size(); }

std::span<const double> Tensor::data() const { return N(*this)->value; }

std::span<double> Tensor::mutable_data() {
  const auto& n = N(*this);
  if (!n->leaf) throw TensorError("mutable_data on a non-leaf tensor");
  return n->value;
}

double Tensor::item() const {
  const auto& n = N(*this);
  if (n->value.size() != 1) throw TensorError("item() on tensor of shape " + gsc::to_string(n->shape));
  return n->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = N(*this);
  if (index.size() != n->shape.size()) throw TensorError("index rank mismatch for " + gsc::to_string(n->shape));
  std::size_t off = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    if (i >= n->shape[d]) throw TensorError("index out of range for " + gsc::to_string(n->shape));
    off = off * n->shape[d] + i;
    ++d;
  }
  return n->value[off];
}

std::vector<double> Tensor::to_vector() const {
  const auto& v = N(*this)->value;
  return {v.begin(), v.end()};
}

bool Tensor::requires_grad() const { return N(*this)->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  const auto& n = N(*this);
  if (!n->leaf) throw TensorError("set_requires_grad on a non-leaf tensor");
  n->requires_grad = flag;
}

bool Tensor::is_leaf() const { return N(*this)->leaf; }

bool Tensor::has_grad() const { return !N(*this)->grad.empty(); }

std::span<const double> Tensor::grad() const { return N(*this)->grad_buffer(); }

void Tensor::zero_grad() {
  auto& g = N(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const { return make_leaf(shape(), N(*this)->value, false); }

Tensor Tensor::clone() const { return make_leaf(shape(), N(*this)->value, requires_grad()); }

// ---------------------------------------------------------------------------
// Broadcasting elementwise ops

namespace {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_stride;
  std::vector<std::size_t> b_stride;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t nd = std::max(a.size(), b.size());
  p.out.assign(nd, 1);
  Shape ap(nd, 1), bp(nd, 1);
  std::copy(a.begin(), a.end(), ap.begin() + static_cast<long>(nd - a.size()));
  std::copy(b.begin(), b.end(), bp.begin() + static_cast<long>(nd - b.size()));
  for (std::size_t d = 0; d < nd; ++d) {
    if (ap[d] != bp[d] && ap[d] != 1 && bp[d] != 1) {
      throw TensorError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
    p.out[d] = std::max(ap[d], bp[d]);
  }
  auto as = contiguous_strides(ap);
  auto bs = contiguous_strides(bp);
  p.a_stride.resize(nd);
  p.b_stride.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    p.a_stride[d] = ap[d] == 1 ? 0 : as[d];
    p.b_stride[d] = bp[d] == 1 ? 0 : bs[d];
  }
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t nd = p.out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ai = 0, bi = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ai, bi);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      ai += p.a_stride[d];
      bi += p.b_stride[d];
      if (idx[d] < p.out[d]) break;
      ai -= p.a_stride[d] * p.out[d];
      bi -= p.b_stride[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

// value(a, b), d/da(a, b), d/db(a, b)
template <class V, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, V value, DA da, DB db) {
  const auto& an = N(a);
  const auto& bn = N(b);
  Broadcast plan = plan_broadcast(an->shape, bn->shape, op);
  Buffer out(shape_numel(plan.out));
  const double* av = an->value.data();
  const double* bv = bn->value.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = value(av[i], bv[j]); });
  return make_result(plan.out, std::move(out), op, {a, b}, [plan, da, db](Node& self) {
    auto& an = self.inputs[0];
    auto& bn = self.inputs[1];
    const double* g = self.grad.data();
    const double* av = an->value.data();
    const double* bv = bn->value.data();
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * da(av[i], bv[j]); });
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * db(av[i], bv[j]); });
    }
  });
}

// value(x), derivative(x, y)
template <class V, class D>
Tensor unary(const Tensor& x, const char* op, V value, D deriv) {
  const auto& xn = N(x);
  Buffer out(xn->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(xn->value[i]);
  return make_result(xn->shape, std::move(out), op, {x}, [deriv](Node& self) {
    auto& in = self.inputs[0];
    auto& gi = in->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * deriv(in->value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
                [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor stop_gradient(const Tensor& x) {
  // Recorded as a constant: no inputs, so nothing flows back.
  return make_result(x.shape(), N(x)->value, "stop_gradient", {}, nullptr);
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& x) {
  const auto& xn = N(x);
  if (xn->shape.empty()) throw TensorError("softmax of a scalar");
  const std::size_t n = xn->shape.back();
  const std::size_t rows = xn->value.size() / n;
  Buffer out(xn->value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xn->value.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (o[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) o[i] /= s;
  }
  return make_result(xn->shape, std::move(out), "softmax", {x}, [n, rows](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < n; ++i) gi[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = N(a);
  const auto& bn = N(b);
  const Shape& as = an->shape;
  const Shape& bs = bn->shape;
  if (as.size() < 2 || bs.size() < 2 || as.back() != bs[bs.size() - 2]) {
    throw TensorError("matmul: shape mismatch " + to_string(as) + " vs " + to_string(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  Shape lead(as.begin(), as.end() - 2);
  const std::size_t batch = shape_numel(lead);
  const bool shared = bs.size() == 2;
  if (!shared && Shape(bs.begin(), bs.end() - 2) != lead) {
    throw TensorError("matmul: batch mismatch " + to_string(as) + " vs " + to_string(bs));
  }
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer out(batch * m * n);
  if (shared) {
    MapR(out.data(), static_cast<long>(batch * m), static_cast<long>(n)).noalias() =
        CMapR(an->value.data(), static_cast<long>(batch * m), static_cast<long>(k)) *
        CMapR(bn->value.data(), static_cast<long>(k), static_cast<long>(n));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MapR(out.data() + i * m * n, static_cast<long>(m), static_cast<long>(n)).noalias() =
          CMapR(an->value.data() + i * m * k, static_cast<long>(m), static_cast<long>(k)) *
          CMapR(bn->value.data() + i * k * n, static_cast<long>(k), static_cast<long>(n));
    }
  }
  return make_result(out_shape, std::move(out), "matmul", {a, b}, [=](Node& self) {
    auto& an = self.inputs[0];
    auto& bn = self.inputs[1];
    const long M = static_cast<long>(m), K = static_cast<long>(k), Nn = static_cast<long>(n);
    if (shared) {
      const long BM = static_cast<long>(batch) * M;
      CMapR g(self.grad.data(), BM, Nn);
      if (an->requires_grad) {
        MapR(an->grad_buffer().data(), BM, K).noalias() += g * CMapR(bn->value.data(), K, Nn).transpose();
      }
      if (bn->requires_grad) {
        MapR(bn->grad_buffer().data(), K, Nn).noalias() += CMapR(an->value.data(), BM, K).transpose() * g;
      }
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      CMapR g(self.grad.data() + i * m * n, M, Nn);
      if (an->requires_grad) {
        MapR(an->grad_buffer().data() + i * m * k, M, K).noalias() +=
            g * CMapR(bn->value.data() + i * k * n, K, Nn).transpose();
      }
      if (bn->requires_grad) {
        MapR(bn->grad_buffer().data() + i * k * n, K, Nn).noalias() +=
            CMapR(an->value.data() + i * m * k, M, K).transpose() * g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout ops

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& xn = N(x);
  const Shape& s = xn->shape;
  const std::size_t nd = s.size();
  if (order.size() != nd) throw TensorError("permute: order rank mismatch for " + to_string(s));
  std::vector<bool> seen(nd, false);
  for (std::size_t o : order) {
    if (o >= nd || seen[o]) throw TensorError("permute: invalid order for " + to_string(s));
    seen[o] = true;
  }
  auto in_stride = contiguous_strides(s);
  Shape out_shape(nd);
  std::vector<std::size_t> stride(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    out_shape[d] = s[order[d]];
    stride[d] = in_stride[order[d]];
  }
  // map[o] = input offset of output element o
  const std::size_t total = xn->value.size();
  auto map = std::make_shared<std::vector<std::size_t>>(total);
  {
    std::vector<std::size_t> idx(nd, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < total; ++o) {
      (*map)[o] = off;
      for (std::size_t d = nd; d-- > 0;) {
        ++idx[d];
        off += stride[d];
        if (idx[d] < out_shape[d]) break;
        off -= stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Buffer out(total);
  for (std::size_t o = 0; o < total; ++o) out[o] = xn->value[(*map)[o]];
  return make_result(out_shape, std::move(out), "permute", {x}, [map](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < map->size(); ++o) gi[(*map)[o]] += self.grad[o];
  });
}

Tensor transpose(const Tensor& x) {
  const std::size_t nd = x.dim();
  if (nd < 2) throw TensorError("transpose: needs rank >= 2, got " + to_string(x.shape()));
  std::vector<std::size_t> order(nd);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[nd - 1], order[nd - 2]);
  return permute(x, order);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  const auto& xn = N(x);
  if (shape_numel(shape) != xn->value.size()) {
    throw TensorError("reshape: " + to_string(xn->shape) + " to " + to_string(shape));
  }
  return make_result(shape, xn->value, "reshape", {x}, [](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

namespace {

struct AxisView {
  std::size_t outer, dim, inner;
};

AxisView axis_view(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw TensorError(std::string(op) + ": axis out of range for " + to_string(s));
  AxisView v{1, s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) v.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) v.inner *= s[d];
  return v;
}

}  // namespace

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& xn = N(x);
  const AxisView v = axis_view(xn->shape, axis, "slice");
  if (start + length > v.dim) {
    throw TensorError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                      ") exceeds " + to_string(xn->shape));
  }
  Shape out_shape = xn->shape;
  out_shape[axis] = length;
  Buffer out(v.outer * length * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(xn->value.data() + (o * v.dim + start) * v.inner, length * v.inner,
                out.data() + o * length * v.inner);
  }
  return make_result(out_shape, std::move(out), "slice", {x}, [v, start, length](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      const double* g = self.grad.data() + o * length * v.inner;
      double* dst = gi.data() + (o * v.dim + start) * v.inner;
      for (std::size_t i = 0; i < length * v.inner; ++i) dst[i] += g[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw TensorError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  std::vector<AxisView> views;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size() && axis < s.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
    if (!ok) throw TensorError("concat: shape mismatch " + to_string(s0) + " vs " + to_string(s));
    views.push_back(axis_view(s, axis, "concat"));
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  const std::size_t outer = views[0].outer, inner = views[0].inner;
  Buffer out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = N(parts[k])->value;
    const std::size_t len = views[k].dim;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * len * inner, len * inner, out.data() + (o * total + offset) * inner);
    }
    offset += len;
  }
  return make_result(out_shape, std::move(out), "concat", parts, [views, total, outer, inner](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t len = views[k].dim;
      auto& in = self.inputs[k];
      if (in->requires_grad) {
        auto& gi = in->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + (o * total + offset) * inner;
          double* dst = gi.data() + o * len * inner;
          for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
        }
      }
      offset += len;
    }
  });
}

Tensor pad_axis(const Tensor& x, std::size_t axis, std::size_t new_length) {
  const auto& xn = N(x);
  const AxisView v = axis_view(xn->shape, axis, "pad_axis");
  if (new_length < v.dim) throw TensorError("pad_axis: cannot shrink " + to_string(xn->shape));
  Shape out_shape = xn->shape;
  out_shape[axis] = new_length;
  Buffer out(v.outer * new_length * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(xn->value.data() + o * v.dim * v.inner, v.dim * v.inner, out.data() + o * new_length * v.inner);
  }
  return make_result(out_shape, std::move(out), "pad_axis", {x}, [v, new_length](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      const double* g = self.grad.data() + o * new_length * v.inner;
      double* dst = gi.data() + o * v.dim * v.inner;
      for (std::size_t i = 0; i < v.dim * v.inner; ++i) dst[i] += g[i];
    }
  });
}

Tensor index_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  const auto& tn = N(table);
  if (tn->shape.size() != 2) throw TensorError("index_rows: table must be 2-D, got " + to_string(tn->shape));
  const std::size_t cols = tn->shape[1];
  Buffer out(rows.size() * cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= tn->shape[0]) {
      throw TensorError("index_rows: row " + std::to_string(rows[r]) + " out of range for " + to_string(tn->shape));
    }
    std::copy_n(tn->value.data() + rows[r] * cols, cols, out.data() + r * cols);
  }
  return make_result({rows.size(), cols}, std::move(out), "index_rows", {table}, [rows, cols](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) gi[rows[r] * cols + c] += self.grad[r * cols + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  const auto& xn = N(x);
  double s = 0.0;
  for (double v : xn->value) s += v;
  return make_result(Shape{}, {s}, "sum", {x}, [](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (double& g : gi) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw TensorError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto& xn = N(x);
  const AxisView v = axis_view(xn->shape, axis, "sum_axis");
  Shape out_shape = xn->shape;
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  }
  Buffer out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t d = 0; d < v.dim; ++d)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += xn->value[(o * v.dim + d) * v.inner + i];
  return make_result(out_shape, std::move(out), "sum_axis", {x}, [v](Node& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t d = 0; d < v.dim; ++d)
        for (std::size_t i = 0; i < v.inner; ++i) gi[(o * v.dim + d) * v.inner + i] += self.grad[o * v.inner + i];
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const std::size_t n = x.size(axis);
  return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Backward

Tape Tape::record(const Tensor& root) {
  Tape tape;
  const NodePtr& r = N(root);
  if (r->consumed) throw TensorError("backward: graph already consumed by a previous backward pass");
  if (r->leaf || !r->requires_grad) return tape;
  std::unordered_set<const Node*> visited;
  struct Frame {
    NodePtr node;
    std::size_t next;
  };
  std::vector<Frame> stack{{r, 0}};
  visited.insert(r.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->inputs.size()) {
      NodePtr child = f.node->inputs[f.next++];
      if (child->consumed) throw TensorError("backward: graph already consumed by a previous backward pass");
      if (child->leaf || !child->requires_grad || visited.count(child.get())) continue;
      visited.insert(child.get());
      stack.push_back({std::move(child), 0});
      continue;
    }
    Entry e{f.node->op, f.node.get(), {}};
    for (const auto& in : f.node->inputs) e.inputs.push_back(in.get());
    tape.entries_.push_back(std::move(e));
    tape.nodes_.push_back(f.node);
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss) {
  const NodePtr& root = N(loss);
  if (root->value.size() != 1) {
    throw TensorError("backward: loss must be a scalar, got shape " + to_string(root->shape));
  }
  if (root->leaf) {
    if (root->requires_grad) root->grad_buffer()[0] += 1.0;
    return;
  }
  Tape tape = Tape::record(loss);
  if (tape.nodes_.empty()) {
    root->consumed = true;
    return;
  }
  root->grad_buffer()[0] = 1.0;
  for (std::size_t i = tape.nodes_.size(); i-- > 0;) {
    Node& n = *tape.nodes_[i];
    if (n.backward_fn) {
      n.grad_buffer();
      n.backward_fn(n);
    }
  }
  for (const auto& n : tape.nodes_) {
    n->consumed = true;
    n->inputs.clear();
    n->backward_fn = nullptr;
    Buffer().swap(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

double relative_error(std::span<const double> analytic, const Buffer& numeric) {
  double scale = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    scale = std::max({scale, std::abs(numeric[i]), analytic.empty() ? 0.0 : std::abs(analytic[i])});
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = analytic.empty() ? 0.0 : analytic[i];
    const double floor = 1e-3 * scale + 1e-12;
    worst = std::max(worst, std::abs(a - numeric[i]) / std::max({std::abs(a), std::abs(numeric[i]), floor}));
  }
  return worst;
}

// Fourth-order central difference.
template <typename Fn>
double five_point(Fn&& at, double h) {
  const double d1 = at(h) - at(-h), d2 = at(2.0 * h) - at(-2.0 * h);
  return (8.0 * d1 - d2) / (12.0 * h);
}

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw TensorError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  check_eps(eps);
  Tensor leaf(x.shape(), x.to_vector(), true);
  backward(f(leaf));
  const Buffer analytic(leaf.grad().begin(), leaf.grad().end());
  Buffer numeric(leaf.numel());
  const Buffer base = N(x)->value;
  for (std::size_t i = 0; i < base.size(); ++i) {
    numeric[i] = five_point([&](double step) {
      Buffer v = base;
      v[i] += step;
      return f(make_leaf(x.shape(), std::move(v), false)).item();
    }, eps);
  }
  return relative_error(analytic, numeric);
}

double finite_diff_check_leaf(const std::function<Tensor()>& f, Tensor& leaf, double eps) {
  check_eps(eps);
  if (!leaf.is_leaf()) throw TensorError("finite_diff_check_leaf: tensor is not a leaf");
  const bool was = leaf.requires_grad();
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  backward(f());
  const Buffer analytic(leaf.grad().begin(), leaf.grad().end());
  auto values = leaf.mutable_data();
  Buffer numeric(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    numeric[i] = five_point([&](double step) {
      values[i] = keep + step;
      return f().item();
    }, eps);
    values[i] = keep;
  }
  leaf.zero_grad();
  leaf.set_requires_grad(was);
  return relative_error(analytic, numeric);
}

}  // namespace gsc
