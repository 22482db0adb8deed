// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "gsc/rng.hpp"
#include "gsc/tensor.hpp"

namespace gsc::test {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor::randn(shape, rng, stddev);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.to_vector() == b.to_vector();
}

// Direct-loop cross-correlation with zero padding.
inline std::vector<double> naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                                        std::size_t pad, std::size_t& Ho, std::size_t& Wo) {
  const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const std::size_t O = w.size(0), k = w.size(2);
  Ho = (H + 2 * pad - k) / stride + 1;
  Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(N * O * Ho * Wo);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = b.data()[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                acc += x.at({n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)}) * w.at({o, c, u, v});
              }
          out[((n * O + o) * Ho + i) * Wo + j] = acc;
        }
  return out;
}

}  // namespace gsc::test
