// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "gsc/rng.hpp"
#include "gsc/tensor.hpp"

namespace gsc::channel {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

struct Constellation {
  std::vector<cplx> points;
  std::size_t size() const { return points.size(); }
};

// Square QAM with odd-integer levels, scaled to unit mean power.
Constellation make_qam(std::size_t M);

// Index of the Euclidean-nearest point; ties go to the lowest index.
std::size_t nearest_index(cplx s, const Constellation& c);
CVec quantize(const CVec& s, const Constellation& c);

enum class CovarianceVariant { kRational, kAsWritten };

struct ChannelCondition {
  double snr_db = 20.0;
  double delay_spread_s = 300e-9;
  std::size_t J = 120;
  double subcarrier_spacing_hz = 30e3;
  double avg_gain_power = 1.0;  // P_h
  CovarianceVariant variant = CovarianceVariant::kRational;

  // P_delta = P_h / 10^(snr/10).
  double noise_power() const;
};

// J x J sub-channel covariance.
//   rational:   C(j', j) = P_h / (1 + 2 pi i d w)
//   as_written: C(j', j) = P_h / exp(1 + 2 pi i d w)
// with d = spacing * (j' - j).
Eigen::MatrixXcd build_covariance(const ChannelCondition& cond);

struct ChannelRealization {
  CVec h;
};

// Caches the Cholesky factor of one condition's covariance.
class ChannelSampler {
 public:
  explicit ChannelSampler(const ChannelCondition& cond);

  ChannelRealization sample(Rng& rng) const;
  // h = L g for a caller-supplied g ~ CN(0, I).
  ChannelRealization color(const CVec& g) const;
  const ChannelCondition& condition() const { return cond_; }
  const Eigen::MatrixXcd& factor() const { return L_; }

 private:
  ChannelCondition cond_;
  Eigen::MatrixXcd L_;
};

ChannelRealization sample_channel(const ChannelCondition& cond, Rng& rng);

// n draws of CN(0, variance).
CVec complex_normal(std::size_t n, double variance, Rng& rng);

// Sub-channel serving zero-based symbol k.
inline std::size_t subchannel_of(std::size_t k, std::size_t J) { return k % J; }

// y_k = h_{k mod J} s_k + delta_k, delta_k ~ CN(0, P_delta).
CVec transmit(const CVec& s, const ChannelRealization& h, double noise_power, Rng& rng);
// Same with caller-supplied noise samples.
CVec transmit_with_noise(const CVec& s, const ChannelRealization& h, const CVec& noise);
// s_k = conj(h_j) y_k / (|h_j|^2 + P_delta)
CVec equalize(const CVec& y, const ChannelRealization& h, double noise_power);

struct TransmissionCondition {
  double rate;         // tau = Z / K
  std::size_t latent_dim;  // Z
  ChannelCondition channel;

  // K = Z / tau; throws unless integral.
  std::size_t symbol_length() const;
};

// equalize(transmit(quantize(s))) with a fresh realization and noise.
CVec apply_phi(const CVec& s, const TransmissionCondition& tcond, const Constellation& c, Rng& rng);

// ---------------------------------------------------------------------------
// Differentiable form over paired-real tensors [N, 2, K] (row 0 real, row 1 imag).

CVec to_complex(std::span<const double> paired, std::size_t K);
std::vector<double> to_paired(const CVec& s);

enum class QuantMode {
  kHard,  // straight-through: value quantize(s), identity gradient
  kSoft,  // softmax-weighted constellation average
  kNone,
};

// One channel use for one batch element: equalized output is a * s + b.
struct PhiDraw {
  ChannelRealization h;
  CVec noise;
  double noise_power = 0.0;
};

PhiDraw draw_phi(const ChannelSampler& sampler, std::size_t K, Rng& rng);
// Noiseless draw with unit gains.
PhiDraw ideal_draw(std::size_t J, std::size_t K);

// Hard quantization with a straight-through gradient. When frozen_offset is
// defined the value is s + frozen_offset instead of quantize(s), which makes
// the forward map smooth for finite-difference checks.
Tensor quantize_ste(const Tensor& s, const Constellation& c, const Tensor& frozen_offset = Tensor());
// quantize(s) - s for each symbol, as a constant.
Tensor quantization_offset(const Tensor& s, const Constellation& c);

// Soft assignment probabilities [N, K, M] for temperature > 0.
Tensor soft_assign(const Tensor& s, const Constellation& c, double temperature);
Tensor soft_quantize(const Tensor& s, const Constellation& c, double temperature);

// Transmit and equalize a quantized symbol tensor, one draw per batch element.
Tensor channel_tensor(const Tensor& s_hat, const std::vector<PhiDraw>& draws);

// Unit mean power per batch element.
Tensor power_normalize(const Tensor& s);

}  // namespace gsc::channel
