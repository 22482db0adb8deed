// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "gsc/channel.hpp"
#include "support.hpp"

using namespace gsc;
using namespace gsc::channel;

namespace {

// Exhaustive nearest point with lowest-index tie-break.
std::size_t brute_nearest(cplx s, const Constellation& c) {
  std::size_t best = 0;
  for (std::size_t m = 1; m < c.size(); ++m) {
    if (std::norm(s - c.points[m]) < std::norm(s - c.points[best])) best = m;
  }
  return best;
}

}  // namespace

TEST_CASE("square QAM has unit mean power on an odd-level grid") {
  for (std::size_t M : {4, 16, 64, 256}) {
    const auto c = make_qam(M);
    REQUIRE(c.size() == M);
    double power = 0;
    for (auto p : c.points) power += std::norm(p);
    CHECK(power / static_cast<double>(M) == doctest::Approx(1.0).epsilon(1e-12));
    const double step = std::abs(c.points[1] - c.points[0]);
    for (auto p : c.points) {
      const double re = p.real() / step, im = p.imag() / step;
      CHECK(std::abs(re - std::round(re - 0.5) - 0.5) < 1e-9);
      CHECK(std::abs(im - std::round(im - 0.5) - 0.5) < 1e-9);
    }
  }
  CHECK_THROWS(make_qam(8));
  CHECK_THROWS(make_qam(2));
  CHECK_THROWS(make_qam(36));
}

TEST_CASE("quantize matches exhaustive search and is idempotent") {
  const auto c = make_qam(64);
  Rng rng(1);
  const CVec s = complex_normal(4000, 1.5, rng);
  const CVec q = quantize(s, c);
  for (std::size_t k = 0; k < s.size(); ++k) CHECK(q[k] == c.points[brute_nearest(s[k], c)]);
  CHECK(quantize(q, c) == q);
}

TEST_CASE("quantizer ties go to the lowest index") {
  const auto c = make_qam(4);
  // Origin is equidistant from all four points.
  CHECK(nearest_index(cplx(0.0, 0.0), c) == 0);
  const cplx mid = 0.5 * (c.points[1] + c.points[3]);
  CHECK(nearest_index(mid, c) == std::min(brute_nearest(mid, c), std::size_t{1}));
}

TEST_CASE("noise power follows the SNR definition") {
  ChannelCondition cond;
  cond.avg_gain_power = 2.0;
  cond.snr_db = 10.0;
  CHECK(cond.noise_power() == doctest::Approx(0.2).epsilon(1e-12));
  cond.snr_db = 0.0;
  CHECK(cond.noise_power() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("covariance entries follow the frequency-correlation formula") {
  ChannelCondition cond;
  cond.J = 12;
  cond.delay_spread_s = 300e-9;
  cond.avg_gain_power = 1.5;
  const auto C = build_covariance(cond);
  for (std::size_t r = 0; r < cond.J; ++r) {
    for (std::size_t k = 0; k < cond.J; ++k) {
      const double d = 30e3 * (static_cast<double>(r) - static_cast<double>(k));
      const cplx expect = 1.5 / cplx(1.0, 2.0 * std::numbers::pi * d * 300e-9);
      CHECK(std::abs(C(r, k) - expect) < 1e-12);
      CHECK(std::abs(C(r, k) - std::conj(C(k, r))) < 1e-15);
    }
    CHECK(C(r, r) == cplx(1.5, 0.0));
  }
  cond.variant = CovarianceVariant::kAsWritten;
  const auto Cw = build_covariance(cond);
  const double d = 30e3 * 3.0;
  CHECK(std::abs(Cw(3, 0) - 1.5 / std::exp(cplx(1.0, 2.0 * std::numbers::pi * d * 300e-9))) < 1e-12);
}

TEST_CASE("sampler factor reproduces the covariance") {
  for (auto variant : {CovarianceVariant::kRational, CovarianceVariant::kAsWritten}) {
    ChannelCondition cond;
    cond.J = 16;
    cond.variant = variant;
    for (double w : {30e-9, 1000e-9}) {
      cond.delay_spread_s = w;
      const ChannelSampler sampler(cond);
      const Eigen::MatrixXcd LLh = sampler.factor() * sampler.factor().adjoint();
      CHECK((LLh - build_covariance(cond)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("empirical channel covariance is close to the model") {
  ChannelCondition cond;
  cond.J = 16;
  cond.delay_spread_s = 300e-9;
  const ChannelSampler sampler(cond);
  const auto C = build_covariance(cond);
  Rng rng(2);
  const std::size_t trials = 20000;
  Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(16, 16);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto h = sampler.sample(rng).h;
    Eigen::Map<const Eigen::VectorXcd> v(h.data(), 16);
    acc += v * v.adjoint();
  }
  acc /= static_cast<double>(trials);
  double worst = 0;
  for (int r = 0; r < 16; ++r)
    for (int k = 0; k < 16; ++k) worst = std::max(worst, std::abs(acc(r, k) - C(r, k)) / std::abs(C(r, k)));
  CHECK(worst < 0.06);
}

TEST_CASE("symbols are assigned to sub-channels sequentially") {
  // J=4, K=8: symbols 0 and 4 share a gain.
  CHECK(subchannel_of(0, 4) == subchannel_of(4, 4));
  CHECK(subchannel_of(0, 5) == 0);
  CHECK(subchannel_of(4, 5) == 4);
  CHECK(subchannel_of(5, 5) == 0);
  CHECK(subchannel_of(13, 5) == 3);
  ChannelRealization h{{cplx(1, 0), cplx(0, 2), cplx(-1, 1)}};
  const CVec s{cplx(1, 1), cplx(2, 0), cplx(0, 1), cplx(1, -1), cplx(3, 3)};
  const CVec noise{cplx(0.1, 0), cplx(0, 0.2), cplx(0, 0), cplx(-0.1, 0.1), cplx(0.5, 0)};
  const CVec y = transmit_with_noise(s, h, noise);
  for (std::size_t k = 0; k < s.size(); ++k) CHECK(std::abs(y[k] - (h.h[k % 3] * s[k] + noise[k])) < 1e-15);
}

TEST_CASE("equalizer recovers symbols as the noise power vanishes") {
  ChannelCondition cond;
  cond.J = 8;
  Rng rng(3);
  const auto c = make_qam(16);
  for (int t = 0; t < 50; ++t) {
    const auto h = sample_channel(cond, rng);
    const CVec s = quantize(complex_normal(20, 1.0, rng), c);
    const CVec r = equalize(transmit_with_noise(s, h, CVec(s.size())), h, 1e-12);
    for (std::size_t k = 0; k < s.size(); ++k) CHECK(std::abs(r[k] - s[k]) < 1e-6);
  }
}

TEST_CASE("equalizer edge cases") {
  CHECK(equalize({cplx(2, 0)}, {{cplx(1, 0)}}, 1.0)[0] == cplx(1, 0));
  CHECK(equalize({cplx(2, 1)}, {{cplx(0, 0)}}, 0.0)[0] == cplx(0, 0));
  const auto c = make_qam(16);
  const ChannelRealization ones{CVec(4, cplx(1, 0))};
  CHECK(equalize(transmit_with_noise(c.points, ones, CVec(16)), ones, 0.0) == c.points);
}

TEST_CASE("received noise variance matches the noise power") {
  ChannelCondition cond;
  cond.J = 4;
  cond.snr_db = 3.0;
  Rng rng(14);
  const auto h = sample_channel(cond, rng);
  const CVec s(40000, cplx(0.5, -0.5));
  const CVec y = transmit(s, h, cond.noise_power(), rng);
  double v = 0;
  for (std::size_t k = 0; k < s.size(); ++k) v += std::norm(y[k] - h.h[k % 4] * s[k]);
  CHECK(v / 40000.0 == doctest::Approx(cond.noise_power()).epsilon(0.03));
}

TEST_CASE("apply_phi is reproducible under a fixed seed") {
  TransmissionCondition t{4.0, 64, ChannelCondition{}};
  const auto c = make_qam(64);
  Rng a(15), b(15), src(16);
  const CVec s = complex_normal(16, 1.0, src);
  CHECK(apply_phi(s, t, c, a) == apply_phi(s, t, c, b));
}

TEST_CASE("equalizer matches the MMSE formula") {
  ChannelRealization h{{cplx(0.3, -0.4), cplx(1.2, 0.1)}};
  const CVec y{cplx(1, 2), cplx(-1, 0.5), cplx(0.2, 0.2)};
  const double p = 0.1;
  const CVec r = equalize(y, h, p);
  for (std::size_t k = 0; k < y.size(); ++k) {
    const cplx hj = h.h[k % 2];
    CHECK(std::abs(r[k] - std::conj(hj) * y[k] / (std::norm(hj) + p)) < 1e-15);
  }
}

TEST_CASE("apply_phi checks the symbol count against the rate") {
  TransmissionCondition t{4.0, 64, ChannelCondition{}};
  CHECK(t.symbol_length() == 16);
  Rng rng(4);
  const auto c = make_qam(64);
  CHECK(apply_phi(complex_normal(16, 1.0, rng), t, c, rng).size() == 16);
  CHECK_THROWS(apply_phi(complex_normal(15, 1.0, rng), t, c, rng));
  TransmissionCondition bad{3.0, 64, ChannelCondition{}};
  CHECK_THROWS(bad.symbol_length());
}

TEST_CASE("paired-real conversion round trips") {
  Rng rng(5);
  const CVec s = complex_normal(7, 1.0, rng);
  const auto paired = to_paired(s);
  CHECK(paired[0] == s[0].real());
  CHECK(paired[7] == s[0].imag());
  CHECK(to_complex(paired, 7) == s);
}

TEST_CASE("channel_tensor equals the complex transmit-equalize chain") {
  ChannelCondition cond;
  cond.J = 6;
  cond.snr_db = 5.0;
  const ChannelSampler sampler(cond);
  Rng rng(6);
  const std::size_t N = 3, K = 10;
  const Tensor s = test::random_tensor({N, 2, K}, 7);
  std::vector<PhiDraw> draws;
  for (std::size_t n = 0; n < N; ++n) draws.push_back(draw_phi(sampler, K, rng));
  const Tensor out = channel_tensor(s, draws);
  for (std::size_t n = 0; n < N; ++n) {
    const CVec sent = to_complex(slice(s, 0, n, 1).data(), K);
    const CVec expect = equalize(transmit_with_noise(sent, draws[n].h, draws[n].noise), draws[n].h,
                                 draws[n].noise_power);
    const CVec got = to_complex(slice(out, 0, n, 1).data(), K);
    for (std::size_t k = 0; k < K; ++k) CHECK(std::abs(got[k] - expect[k]) < 1e-12);
  }
  CHECK(finite_diff_check([&](const Tensor& t) { return sum(square(channel_tensor(t, draws))); }, s, 1e-6) < 1e-4);
}

TEST_CASE("ideal draw is the identity channel") {
  const Tensor s = test::random_tensor({2, 2, 9}, 8);
  const Tensor out = channel_tensor(s, {ideal_draw(4, 9), ideal_draw(4, 9)});
  CHECK(test::bit_equal(out, s));
}

TEST_CASE("straight-through quantizer: hard value, identity gradient") {
  const auto c = make_qam(16);
  Tensor s = test::random_tensor({2, 2, 8}, 9);
  const Tensor q = quantize_ste(s, c);
  for (std::size_t n = 0; n < 2; ++n) {
    const CVec expect = quantize(to_complex(slice(s, 0, n, 1).data(), 8), c);
    CHECK(to_complex(slice(q, 0, n, 1).data(), 8) == expect);
  }
  Tensor leaf(s.shape(), s.to_vector(), true);
  const Tensor w = test::random_tensor(s.shape(), 10);
  backward(sum(quantize_ste(leaf, c) * w));
  CHECK(std::vector<double>(leaf.grad().begin(), leaf.grad().end()) == w.to_vector());
  // Frozen offset reproduces the hard value and is smooth in s.
  const Tensor off = quantization_offset(s, c);
  CHECK(test::max_abs_diff(quantize_ste(s, c, off), q) < 1e-15);
  CHECK(finite_diff_check([&](const Tensor& t) { return sum(square(quantize_ste(t, c, off))); }, s, 1e-6) < 1e-4);
}

TEST_CASE("soft quantization tends to hard quantization at low temperature") {
  const auto c = make_qam(16);
  const Tensor s = test::random_tensor({2, 2, 12}, 11, 0.6);
  CHECK(test::max_abs_diff(soft_quantize(s, c, 1e-4), quantize_ste(s, c)) < 1e-6);
  // At high temperature every point gets equal weight: the zero-mean centroid.
  CHECK(test::max_abs_diff(soft_quantize(s, c, 1e6), Tensor::zeros(s.shape())) < 1e-5);
  const Tensor p = soft_assign(s, c, 0.5);
  CHECK(p.shape() == Shape{2, 12, 16});
  CHECK(sum(p).item() == doctest::Approx(24.0).epsilon(1e-12));
  CHECK(finite_diff_check([&](const Tensor& t) { return sum(square(soft_quantize(t, c, 0.3))); }, s, 1e-6) < 1e-4);
}

TEST_CASE("power normalization gives unit mean complex power per element") {
  const Tensor s = test::random_tensor({3, 2, 10}, 12, 2.5);
  const Tensor n = power_normalize(s);
  for (std::size_t i = 0; i < 3; ++i) {
    const CVec v = to_complex(slice(n, 0, i, 1).data(), 10);
    double p = 0;
    for (auto z : v) p += std::norm(z);
    CHECK(p / 10.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Tensor w = test::random_tensor(s.shape(), 17);
  CHECK(finite_diff_check([&](const Tensor& t) { return sum(power_normalize(t) * w); }, s, 1e-6) < 1e-4);
}

TEST_CASE("complex normal draws have the requested variance") {
  Rng rng(13);
  const CVec z = complex_normal(50000, 0.3, rng);
  double p = 0;
  for (auto v : z) p += std::norm(v);
  CHECK(p / 50000.0 == doctest::Approx(0.3).epsilon(0.03));
}
