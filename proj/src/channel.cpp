// SPDX-License-Identifier: Apache-2.0
#include "gsc/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "tensor_impl.hpp"

namespace gsc::channel {

Constellation make_qam(std::size_t M) {
  std::size_t side = 0;
  while (side * side < M) ++side;
  if (M < 4 || side * side != M || (side & (side - 1)) != 0) {
    throw std::invalid_argument("make_qam: M=" + std::to_string(M) + " is not a square QAM order");
  }
  // Mean power of odd levels {+-1, +-3, ...} over a side x side grid is 2 (side^2 - 1) / 3.
  const double norm = std::sqrt(2.0 * static_cast<double>(M - 1) / 3.0);
  Constellation c;
  c.points.reserve(M);
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t q = 0; q < side; ++q) {
      const double re = 2.0 * static_cast<double>(i) - static_cast<double>(side - 1);
      const double im = 2.0 * static_cast<double>(q) - static_cast<double>(side - 1);
      c.points.emplace_back(re / norm, im / norm);
    }
  }
  return c;
}

std::size_t nearest_index(cplx s, const Constellation& c) {
  std::size_t best = 0;
  double best_d = std::norm(s - c.points[0]);
  for (std::size_t m = 1; m < c.points.size(); ++m) {
    const double d = std::norm(s - c.points[m]);
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

CVec quantize(const CVec& s, const Constellation& c) {
  CVec out(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) out[k] = c.points[nearest_index(s[k], c)];
  return out;
}

double ChannelCondition::noise_power() const { return avg_gain_power / std::pow(10.0, snr_db / 10.0); }

Eigen::MatrixXcd build_covariance(const ChannelCondition& cond) {
  const std::size_t J = cond.J;
  Eigen::MatrixXcd C(J, J);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t r = 0; r < J; ++r) {
    for (std::size_t col = 0; col < J; ++col) {
      const double delta = cond.subcarrier_spacing_hz * (static_cast<double>(r) - static_cast<double>(col));
      const cplx arg(1.0, two_pi * delta * cond.delay_spread_s);
      const cplx denom = cond.variant == CovarianceVariant::kRational ? arg : std::exp(arg);
      C(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = cond.avg_gain_power / denom;
    }
  }
  return C;
}

namespace {

Eigen::MatrixXcd cholesky_factor(const Eigen::MatrixXcd& C, double floor) {
  Eigen::LLT<Eigen::MatrixXcd> llt(C);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(C);
  if (eig.info() != Eigen::Success) throw std::runtime_error("channel covariance: eigendecomposition failed");
  Eigen::VectorXd lambda = eig.eigenvalues();
  if (lambda.minCoeff() < -1e-6 * std::max(1.0, lambda.maxCoeff())) {
    throw std::runtime_error("channel covariance is not positive semidefinite (min eigenvalue " +
                             std::to_string(lambda.minCoeff()) + ")");
  }
  lambda = lambda.cwiseMax(floor);
  const Eigen::MatrixXcd repaired = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().adjoint();
  Eigen::LLT<Eigen::MatrixXcd> retry(repaired);
  if (retry.info() != Eigen::Success) throw std::runtime_error("channel covariance: Cholesky failed after eigenvalue floor");
  return retry.matrixL();
}

}  // namespace

ChannelSampler::ChannelSampler(const ChannelCondition& cond) : cond_(cond) {
  if (cond.J == 0) throw std::invalid_argument("channel condition needs J >= 1");
  if (cond.delay_spread_s < 0.0) throw std::invalid_argument("delay spread must be non-negative");
  L_ = cholesky_factor(build_covariance(cond), 1e-12 * cond.avg_gain_power);
}

CVec complex_normal(std::size_t n, double variance, Rng& rng) {
  const double sd = std::sqrt(variance / 2.0);
  CVec out(n);
  for (auto& z : out) {
    const double re = rng.normal();
    const double im = rng.normal();
    z = cplx(sd * re, sd * im);
  }
  return out;
}

ChannelRealization ChannelSampler::color(const CVec& g) const {
  const auto J = static_cast<Eigen::Index>(cond_.J);
  if (static_cast<Eigen::Index>(g.size()) != J) throw std::invalid_argument("color: g has wrong length");
  const Eigen::VectorXcd gv = Eigen::Map<const Eigen::VectorXcd>(g.data(), J);  // aligned copy
  Eigen::VectorXcd h = L_.triangularView<Eigen::Lower>() * gv;
  return {CVec(h.data(), h.data() + J)};
}

ChannelRealization ChannelSampler::sample(Rng& rng) const { return color(complex_normal(cond_.J, 1.0, rng)); }

ChannelRealization sample_channel(const ChannelCondition& cond, Rng& rng) { return ChannelSampler(cond).sample(rng); }

CVec transmit_with_noise(const CVec& s, const ChannelRealization& h, const CVec& noise) {
  if (h.h.empty()) throw std::invalid_argument("transmit: empty channel realization");
  if (noise.size() < s.size()) throw std::invalid_argument("transmit: fewer noise samples than symbols");
  CVec y(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) y[k] = h.h[subchannel_of(k, h.h.size())] * s[k] + noise[k];
  return y;
}

CVec transmit(const CVec& s, const ChannelRealization& h, double noise_power, Rng& rng) {
  return transmit_with_noise(s, h, complex_normal(s.size(), noise_power, rng));
}

CVec equalize(const CVec& y, const ChannelRealization& h, double noise_power) {
  CVec out(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const cplx hj = h.h[subchannel_of(k, h.h.size())];
    const double denom = std::norm(hj) + noise_power;
    out[k] = denom > 0.0 ? std::conj(hj) * y[k] / denom : cplx(0.0, 0.0);
  }
  return out;
}

std::size_t TransmissionCondition::symbol_length() const {
  const double k = static_cast<double>(latent_dim) / rate;
  const double r = std::round(k);
  if (!(rate > 0.0) || std::abs(k - r) > 1e-9 * std::max(1.0, k) || r < 1.0) {
    throw std::invalid_argument("rate " + std::to_string(rate) + " gives non-integral K for Z=" +
                                std::to_string(latent_dim));
  }
  return static_cast<std::size_t>(r);
}

CVec apply_phi(const CVec& s, const TransmissionCondition& tcond, const Constellation& c, Rng& rng) {
  const std::size_t K = tcond.symbol_length();
  if (s.size() != K) {
    throw std::invalid_argument("apply_phi: got " + std::to_string(s.size()) + " symbols, rate expects " +
                                std::to_string(K));
  }
  const auto h = sample_channel(tcond.channel, rng);
  const double p = tcond.channel.noise_power();
  return equalize(transmit(quantize(s, c), h, p, rng), h, p);
}

// ---------------------------------------------------------------------------

CVec to_complex(std::span<const double> paired, std::size_t K) {
  if (paired.size() != 2 * K) throw std::invalid_argument("to_complex: expected 2K values");
  CVec out(K);
  for (std::size_t k = 0; k < K; ++k) out[k] = cplx(paired[k], paired[K + k]);
  return out;
}

std::vector<double> to_paired(const CVec& s) {
  const std::size_t K = s.size();
  std::vector<double> out(2 * K);
  for (std::size_t k = 0; k < K; ++k) {
    out[k] = s[k].real();
    out[K + k] = s[k].imag();
  }
  return out;
}

PhiDraw draw_phi(const ChannelSampler& sampler, std::size_t K, Rng& rng) {
  PhiDraw d;
  d.h = sampler.sample(rng);
  d.noise_power = sampler.condition().noise_power();
  d.noise = complex_normal(K, d.noise_power, rng);
  return d;
}

PhiDraw ideal_draw(std::size_t J, std::size_t K) {
  PhiDraw d;
  d.h.h.assign(J, cplx(1.0, 0.0));
  d.noise.assign(K, cplx(0.0, 0.0));
  return d;
}

namespace {

void check_symbols(const Tensor& s, const char* op) {
  if (s.dim() != 3 || s.size(1) != 2) throw TensorError(std::string(op) + ": expected [N,2,K], got " + to_string(s.shape()));
}

Tensor constellation_row(const Constellation& c, bool imag) {
  std::vector<double> v(c.size());
  for (std::size_t m = 0; m < c.size(); ++m) v[m] = imag ? c.points[m].imag() : c.points[m].real();
  return Tensor({c.size()}, std::move(v));
}

}  // namespace

Tensor quantization_offset(const Tensor& s, const Constellation& c) {
  check_symbols(s, "quantization_offset");
  const std::size_t N = s.size(0), K = s.size(2);
  const auto x = s.data();
  std::vector<double> off(x.size());
  for (std::size_t n = 0; n < N; ++n) {
    const double* base = x.data() + n * 2 * K;
    for (std::size_t k = 0; k < K; ++k) {
      const cplx q = c.points[nearest_index(cplx(base[k], base[K + k]), c)];
      off[n * 2 * K + k] = q.real() - base[k];
      off[n * 2 * K + K + k] = q.imag() - base[K + k];
    }
  }
  return Tensor(s.shape(), std::move(off));
}

Tensor quantize_ste(const Tensor& s, const Constellation& c, const Tensor& frozen_offset) {
  check_symbols(s, "quantize_ste");
  if (frozen_offset.defined()) return add(s, frozen_offset);
  const std::size_t N = s.size(0), K = s.size(2);
  const auto x = s.data();
  detail::Buffer q(x.size());
  for (std::size_t n = 0; n < N; ++n) {
    const double* base = x.data() + n * 2 * K;
    for (std::size_t k = 0; k < K; ++k) {
      const cplx p = c.points[nearest_index(cplx(base[k], base[K + k]), c)];
      q[n * 2 * K + k] = p.real();
      q[n * 2 * K + K + k] = p.imag();
    }
  }
  return detail::make_result(s.shape(), std::move(q), "quantize_ste", {s}, [](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor soft_assign(const Tensor& s, const Constellation& c, double temperature) {
  check_symbols(s, "soft_assign");
  if (!(temperature > 0.0)) throw std::invalid_argument("soft_assign: temperature must be positive");
  const std::size_t N = s.size(0), K = s.size(2);
  Tensor re = reshape(slice(s, 1, 0, 1), {N, K, 1});
  Tensor im = reshape(slice(s, 1, 1, 1), {N, K, 1});
  Tensor d = add(square(sub(re, constellation_row(c, false))), square(sub(im, constellation_row(c, true))));
  return softmax(scale(d, -1.0 / temperature));
}

Tensor soft_quantize(const Tensor& s, const Constellation& c, double temperature) {
  const std::size_t N = s.size(0), K = s.size(2), M = c.size();
  Tensor p = soft_assign(s, c, temperature);
  Tensor re = matmul(p, reshape(constellation_row(c, false), {M, 1}));
  Tensor im = matmul(p, reshape(constellation_row(c, true), {M, 1}));
  return reshape(concat({reshape(re, {N, 1, K}), reshape(im, {N, 1, K})}, 1), {N, 2, K});
}

Tensor channel_tensor(const Tensor& s_hat, const std::vector<PhiDraw>& draws) {
  check_symbols(s_hat, "channel_tensor");
  const std::size_t N = s_hat.size(0), K = s_hat.size(2);
  if (draws.size() != N) throw std::invalid_argument("channel_tensor: one draw per batch element required");
  // Equalized output is linear in the sent symbol: a_k s_k + b_k with a_k real.
  std::vector<double> a(N * 2 * K), b(N * 2 * K);
  for (std::size_t n = 0; n < N; ++n) {
    const PhiDraw& d = draws[n];
    if (d.noise.size() < K) throw std::invalid_argument("channel_tensor: draw has too few noise samples");
    for (std::size_t k = 0; k < K; ++k) {
      const cplx hj = d.h.h[subchannel_of(k, d.h.h.size())];
      const double denom = std::norm(hj) + d.noise_power;
      const double ak = denom > 0.0 ? std::norm(hj) / denom : 0.0;
      const cplx bk = denom > 0.0 ? std::conj(hj) * d.noise[k] / denom : cplx(0.0, 0.0);
      a[n * 2 * K + k] = a[n * 2 * K + K + k] = ak;
      b[n * 2 * K + k] = bk.real();
      b[n * 2 * K + K + k] = bk.imag();
    }
  }
  return add(mul(s_hat, Tensor(s_hat.shape(), std::move(a))), Tensor(s_hat.shape(), std::move(b)));
}

Tensor power_normalize(const Tensor& s) {
  check_symbols(s, "power_normalize");
  // Mean over the paired reals is half the mean complex power.
  Tensor p = mean_axis(mean_axis(square(s), 2, true), 1, true);
  return div(s, sqrt(scale(p, 2.0)));
}

}  // namespace gsc::channel
