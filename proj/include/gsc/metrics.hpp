// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gsc/genmodel.hpp"
#include "gsc/nn.hpp"
#include "gsc/tensor.hpp"

namespace gsc::metrics {

// -10 log10(MSE / peak^2), capped at 99 dB when MSE < 1e-10.
double psnr(const Tensor& x, const Tensor& x_hat, double peak = 1.0);
// Per-image PSNR for [N, ...] batches.
std::vector<double> psnr_per_image(const Tensor& x, const Tensor& x_hat, double peak = 1.0);
double latent_mse(const Tensor& z, const Tensor& z_hat);

// Frozen feature extractor producing one vector per image.
class ProbeExtractor {
 public:
  // Random 3-layer conv net (tanh, stride 2) with global average pooling.
  static ProbeExtractor visual(std::size_t image_channels, std::uint64_t seed);
  // Flattened posterior mean of a latent encoder.
  static ProbeExtractor semantic(const genmodel::LatentCodec& codec);

  // [N, ...] images -> N feature vectors.
  std::vector<std::vector<double>> features(const Tensor& images) const;
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::vector<nn::Conv2d> convs_;
  std::optional<genmodel::LatentCodec> codec_;
};

// Cosine of the angle between two vectors; throws on a zero-norm input.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);
// Single images [1, C, H, W].
double probe_score(const Tensor& x_a, const Tensor& x_b, const ProbeExtractor& probe);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct AlignReport {
  MeanStd visual;
  MeanStd semantic;
  MeanStd combined;  // visual + semantic per received image
};

// For each received image, average its score against every cloud test image;
// statistics are taken over the received images.
AlignReport align_eval(const Tensor& received, const Tensor& cloud_test, const ProbeExtractor& visual,
                       const ProbeExtractor& semantic);

MeanStd mean_std(const std::vector<double>& v);

// One row of the metric stream. Empty optionals are written as empty CSV fields.
struct MetricRecord {
  std::string run_id;
  std::string stage;
  std::optional<long> epoch;
  std::optional<long> rate_index;
  std::optional<double> snr_db;
  std::optional<double> delay_spread_ns;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const MetricRecord&) const = default;
};

}  // namespace gsc::metrics
