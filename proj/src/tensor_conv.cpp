// SPDX-License-Identifier: Apache-2.0
// 2-D convolution and transposed convolution via im2col + GEMM.
#include <Eigen/Core>

#include "gsc/tensor.hpp"
#include "tensor_impl.hpp"

namespace gsc {

using detail::make_result;
using detail::Buffer;
using detail::Node;

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

// Geometry of a strided convolution over an image [N, C, H, W] producing a
// [Ho, Wo] grid. The column matrix is [C*k*k, N*Ho*Wo].
struct ConvGeometry {
  std::size_t n, c, h, w, k, stride, pad, ho, wo;
  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return n * ho * wo; }
};

void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const std::size_t plane = g.ho * g.wo;
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * ncols;
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* src = img + (n * g.c + c) * g.h * g.w;
          double* dst = row + n * plane;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill_n(dst + oy * g.wo, g.wo, 0.0);
              continue;
            }
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
              dst[oy * g.wo + ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[iy * static_cast<long>(g.w) + ix];
            }
          }
        }
      }
    }
  }
}

// Accumulating adjoint of im2col.
void col2im(const ConvGeometry& g, const double* cols, double* img) {
  const std::size_t plane = g.ho * g.wo;
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((c * g.k + ki) * g.k + kj) * ncols;
        for (std::size_t n = 0; n < g.n; ++n) {
          double* dst = img + (n * g.c + c) * g.h * g.w;
          const double* src = row + n * plane;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.w)) dst[iy * static_cast<long>(g.w) + ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

// [N, C, P] <-> [C, N*P]
void nchw_to_cnp(const double* src, std::size_t n, std::size_t c, std::size_t p, double* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) std::copy_n(src + (i * c + j) * p, p, dst + j * n * p + i * p);
}

void cnp_to_nchw(const double* src, std::size_t n, std::size_t c, std::size_t p, double* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) std::copy_n(src + j * n * p + i * p, p, dst + (i * c + j) * p);
}

long L(std::size_t v) { return static_cast<long>(v); }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3]) {
    throw TensorError("conv2d: shape mismatch " + to_string(xs) + " vs " + to_string(ws));
  }
  if (stride == 0) throw TensorError("conv2d: stride must be positive");
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{ws[0]}) {
    throw TensorError("conv2d: bias shape " + to_string(bias.shape()) + " vs weight " + to_string(ws));
  }
  const std::size_t k = ws[2];
  if (xs[2] + 2 * padding < k || xs[3] + 2 * padding < k) {
    throw TensorError("conv2d: kernel larger than padded input " + to_string(xs));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], k, stride, padding,
                 (xs[2] + 2 * padding - k) / stride + 1, (xs[3] + 2 * padding - k) / stride + 1};
  const std::size_t cout = ws[0];
  const std::size_t plane = g.ho * g.wo;

  auto cols = std::make_shared<Buffer>(g.rows() * g.cols());
  im2col(g, x.data().data(), cols->data());
  Buffer tmp(cout * g.cols());
  MapR(tmp.data(), L(cout), L(g.cols())).noalias() =
      CMapR(weight.data().data(), L(cout), L(g.rows())) * CMapR(cols->data(), L(g.rows()), L(g.cols()));
  Buffer out(g.n * cout * plane);
  cnp_to_nchw(tmp.data(), g.n, cout, plane, out.data());
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t p = 0; p < plane; ++p) out[(i * cout + c) * plane + p] += b[c];
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({g.n, cout, g.ho, g.wo}, std::move(out), "conv2d", inputs,
                     [g, cout, plane, cols, has_bias](Node& self) {
                       auto& xn = self.inputs[0];
                       auto& wn = self.inputs[1];
                       Buffer gt(cout * g.cols());
                       nchw_to_cnp(self.grad.data(), g.n, cout, plane, gt.data());
                       CMapR gm(gt.data(), L(cout), L(g.cols()));
                       if (wn->requires_grad) {
                         MapR(wn->grad_buffer().data(), L(cout), L(g.rows())).noalias() +=
                             gm * CMapR(cols->data(), L(g.rows()), L(g.cols())).transpose();
                       }
                       if (has_bias && self.inputs[2]->requires_grad) {
                         auto& gb = self.inputs[2]->grad_buffer();
                         for (std::size_t c = 0; c < cout; ++c) gb[c] += gm.row(L(c)).sum();
                       }
                       if (xn->requires_grad) {
                         Buffer dcols(g.rows() * g.cols());
                         MapR(dcols.data(), L(g.rows()), L(g.cols())).noalias() =
                             CMapR(wn->value.data(), L(cout), L(g.rows())).transpose() * gm;
                         col2im(g, dcols.data(), xn->grad_buffer().data());
                       }
                     });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                        std::size_t padding, std::size_t output_padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[1] || ws[2] != ws[3]) {
    throw TensorError("conv_transpose2d: shape mismatch " + to_string(xs) + " vs " + to_string(ws));
  }
  if (stride == 0 || output_padding >= stride) throw TensorError("conv_transpose2d: invalid stride/output_padding");
  const std::size_t cin = ws[0], cout = ws[1], k = ws[2];
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{cout}) {
    throw TensorError("conv_transpose2d: bias shape " + to_string(bias.shape()) + " vs weight " + to_string(ws));
  }
  const long ho_l = L((xs[2] - 1) * stride + k + output_padding) - L(2 * padding);
  const long wo_l = L((xs[3] - 1) * stride + k + output_padding) - L(2 * padding);
  if (ho_l <= 0 || wo_l <= 0) throw TensorError("conv_transpose2d: empty output for " + to_string(xs));
  // The transposed conv is the adjoint of a conv whose image is our output.
  ConvGeometry g{xs[0], cout, static_cast<std::size_t>(ho_l), static_cast<std::size_t>(wo_l),
                 k,     stride, padding, xs[2], xs[3]};
  const std::size_t in_plane = xs[2] * xs[3];
  const std::size_t out_plane = g.h * g.w;

  auto xt = std::make_shared<Buffer>(cin * g.cols());
  nchw_to_cnp(x.data().data(), g.n, cin, in_plane, xt->data());
  Buffer cols(g.rows() * g.cols());
  MapR(cols.data(), L(g.rows()), L(g.cols())).noalias() =
      CMapR(weight.data().data(), L(cin), L(g.rows())).transpose() * CMapR(xt->data(), L(cin), L(g.cols()));
  Buffer out(g.n * cout * out_plane, 0.0);
  col2im(g, cols.data(), out.data());
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t p = 0; p < out_plane; ++p) out[(i * cout + c) * out_plane + p] += b[c];
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({g.n, cout, g.h, g.w}, std::move(out), "conv_transpose2d", inputs,
                     [g, cin, cout, in_plane, out_plane, xt, has_bias](Node& self) {
                       auto& xn = self.inputs[0];
                       auto& wn = self.inputs[1];
                       Buffer dcols(g.rows() * g.cols());
                       im2col(g, self.grad.data(), dcols.data());
                       CMapR dc(dcols.data(), L(g.rows()), L(g.cols()));
                       if (wn->requires_grad) {
                         MapR(wn->grad_buffer().data(), L(cin), L(g.rows())).noalias() +=
                             CMapR(xt->data(), L(cin), L(g.cols())) * dc.transpose();
                       }
                       if (has_bias && self.inputs[2]->requires_grad) {
                         auto& gb = self.inputs[2]->grad_buffer();
                         for (std::size_t i = 0; i < g.n; ++i)
                           for (std::size_t c = 0; c < cout; ++c) {
                             const double* gp = self.grad.data() + (i * cout + c) * out_plane;
                             double s = 0.0;
                             for (std::size_t p = 0; p < out_plane; ++p) s += gp[p];
                             gb[c] += s;
                           }
                       }
                       if (xn->requires_grad) {
                         Buffer dxt(cin * g.cols());
                         MapR(dxt.data(), L(cin), L(g.cols())).noalias() =
                             CMapR(wn->value.data(), L(cin), L(g.rows())) * dc;
                         Buffer dx(g.n * cin * in_plane);
                         cnp_to_nchw(dxt.data(), g.n, cin, in_plane, dx.data());
                         auto& gx = xn->grad_buffer();
                         for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
                       }
                     });
}

}  // namespace gsc
