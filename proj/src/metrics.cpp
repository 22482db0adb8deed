// SPDX-License-Identifier: Apache-2.0
#include "gsc/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gsc::metrics {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

double mse_span(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double psnr_from_mse(double mse, double peak) {
  if (mse < 1e-10) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse / (peak * peak)));
}

}  // namespace

double psnr(const Tensor& x, const Tensor& x_hat, double peak) {
  require_same(x, x_hat, "psnr");
  return psnr_from_mse(mse_span(x.data(), x_hat.data()), peak);
}

std::vector<double> psnr_per_image(const Tensor& x, const Tensor& x_hat, double peak) {
  require_same(x, x_hat, "psnr");
  const std::size_t n = x.size(0), per = x.numel() / n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = psnr_from_mse(mse_span(x.data().subspan(i * per, per), x_hat.data().subspan(i * per, per)), peak);
  }
  return out;
}

double latent_mse(const Tensor& z, const Tensor& z_hat) {
  require_same(z, z_hat, "latent_mse");
  return mse_span(z.data(), z_hat.data());
}

// ---------------------------------------------------------------------------

ProbeExtractor ProbeExtractor::visual(std::size_t image_channels, std::uint64_t seed) {
  Rng rng(seed);
  ProbeExtractor p;
  p.name_ = "visual";
  p.convs_.emplace_back("probe.c1", image_channels, 8, 3, 2, 1, rng);
  p.convs_.emplace_back("probe.c2", 8, 16, 3, 2, 1, rng);
  p.convs_.emplace_back("probe.c3", 16, 32, 3, 2, 1, rng);
  return p;
}

ProbeExtractor ProbeExtractor::semantic(const genmodel::LatentCodec& codec) {
  ProbeExtractor p;
  p.name_ = "semantic";
  p.codec_ = codec;
  // Own copy of the weights so later training of the source cannot move the probe.
  nn::deep_copy(p.codec_->parameters());
  nn::set_trainable(p.codec_->parameters(), false);
  return p;
}

std::vector<std::vector<double>> ProbeExtractor::features(const Tensor& images) const {
  Tensor f;
  if (codec_) {
    f = codec_->encode_mean(images.detach());
  } else {
    f = images.detach();
    for (const auto& c : convs_) f = tanh(c.forward(f));
    f = mean_axis(mean_axis(f, 3), 2);
  }
  const std::size_t n = f.size(0), per = f.numel() / n;
  std::vector<std::vector<double>> out(n);
  const auto d = f.data();
  for (std::size_t i = 0; i < n; ++i) out[i].assign(d.begin() + static_cast<long>(i * per), d.begin() + static_cast<long>((i + 1) * per));
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
  const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm feature vector");
  return std::clamp(std::inner_product(a.begin(), a.end(), b.begin(), 0.0) / (na * nb), -1.0, 1.0);
}

double probe_score(const Tensor& x_a, const Tensor& x_b, const ProbeExtractor& probe) {
  const auto fa = probe.features(x_a);
  const auto fb = probe.features(x_b);
  if (fa.size() != 1 || fb.size() != 1) throw std::invalid_argument("probe_score: expects single images");
  return cosine_similarity(fa[0], fb[0]);
}

MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

AlignReport align_eval(const Tensor& received, const Tensor& cloud_test, const ProbeExtractor& visual,
                       const ProbeExtractor& semantic) {
  if (received.size(0) == 0 || cloud_test.size(0) == 0) throw std::invalid_argument("align_eval: empty image set");
  auto per_image = [&](const ProbeExtractor& probe) {
    const auto fr = probe.features(received);
    const auto fc = probe.features(cloud_test);
    std::vector<double> out;
    for (const auto& a : fr) {
      double s = 0.0;
      for (const auto& b : fc) s += cosine_similarity(a, b);
      out.push_back(s / static_cast<double>(fc.size()));
    }
    return out;
  };
  const auto v = per_image(visual);
  const auto s = per_image(semantic);
  std::vector<double> c(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) c[i] = v[i] + s[i];
  return {mean_std(v), mean_std(s), mean_std(c)};
}

}  // namespace gsc::metrics
