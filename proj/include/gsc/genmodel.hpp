// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gsc/nn.hpp"
#include "gsc/rng.hpp"
#include "gsc/tensor.hpp"

namespace gsc::genmodel {

using nn::ParamRefs;

// ---------------------------------------------------------------------------
// Latent codec

struct LatentCodecConfig {
  std::size_t image_channels = 3;
  std::size_t image_size = 32;
  std::size_t latent_channels = 4;
  std::size_t width = 8;  // channels after the first conv; doubled after downsampling
};

struct Posterior {
  Tensor mean;     // [N, c, h, w]
  Tensor log_std;  // [N, c, h, w]
};

// Variational image codec: two stride-2 stages between image and latent.
class LatentCodec {
 public:
  LatentCodec() = default;
  LatentCodec(const LatentCodecConfig& config, Rng& rng);

  const LatentCodecConfig& config() const { return config_; }
  std::size_t latent_size() const { return config_.image_size / 4; }
  Shape latent_shape(std::size_t n) const { return {n, config_.latent_channels, latent_size(), latent_size()}; }

  Posterior encode(const Tensor& x) const;
  Tensor encode_mean(const Tensor& x) const { return encode(x).mean; }
  // z = mean + eps * exp(log_std), eps ~ N(0, I).
  Tensor encode_latent(const Tensor& x, Rng& rng) const;
  // Image in [0, 1].
  Tensor decode(const Tensor& z) const;

  ParamRefs parameters();

 private:
  void check_image(const Tensor& x) const;

  LatentCodecConfig config_;
  nn::Conv2d e1_, e2_, e3_, e4_;
  nn::Conv2d d1_;
  nn::ConvTranspose2d d2_, d3_;
  nn::Conv2d d4_;
};

// z = mean + eps * std
Tensor reparameterize(const Tensor& mean, const Tensor& std, const Tensor& eps);
// Closed-form KL(N(m, s^2) || N(0, I)) summed over all elements: 0.5 * sum(m^2 + s^2 - 1 - ln s^2).
Tensor gaussian_kl(const Tensor& mean, const Tensor& log_std);

// Small patch discriminator used by the optional adversarial term.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(std::size_t image_channels, Rng& rng);
  // One logit per image: [N].
  Tensor forward(const Tensor& x) const;
  ParamRefs parameters();

 private:
  nn::Conv2d c1_, c2_, c3_;
};

struct CodecTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 2e-3;
  double recon_weight = 1.0;
  double kl_weight = 1e-3;
  double disc_weight = 0.1;
  bool use_discriminator = false;
  std::uint64_t seed = 1;
};

// Per-image summed pixel MSE plus weighted KL (and adversarial term when enabled).
Tensor codec_loss(const LatentCodec& codec, const Tensor& x, const Tensor& eps, const CodecTrainConfig& cfg,
                  const Discriminator* disc = nullptr);

// Returns the mean loss of each epoch.
std::vector<double> train_latent_codec(LatentCodec& codec, const Tensor& images, const CodecTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Diffusion

class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;
  explicit DiffusionSchedule(std::vector<double> betas);
  static DiffusionSchedule linear(std::size_t T, double beta_start, double beta_end);

  std::size_t T() const { return betas_.size(); }
  double beta(std::size_t t) const;   // 1 <= t <= T
  double alpha(std::size_t t) const;  // 0 <= t <= T, alpha(0) = 1
  const std::vector<double>& betas() const { return betas_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;  // index 0..T
};

// sqrt(alpha_t) z0 + sqrt(1 - alpha_t) eps
Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s);
// Per-sample timesteps along the batch axis.
Tensor forward_diffuse_batch(const Tensor& z0, const std::vector<std::size_t>& t, const Tensor& eps,
                             const DiffusionSchedule& s);
// One iterate of z_{t-1} = sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) eps.
Tensor diffuse_one_step(const Tensor& z_prev, std::size_t t, const Tensor& eps, const DiffusionSchedule& s);
// Deterministic backward step from t to t_prev (t_prev <= t).
Tensor ddim_step(const Tensor& z_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const DiffusionSchedule& s);
// round(T i / T_B) for i = T_B..1, then 0.
std::vector<std::size_t> timestep_sequence(std::size_t T, std::size_t T_B);

// ---------------------------------------------------------------------------
// Conditional noise predictor

struct PredictorConfig {
  std::size_t latent_channels = 4;
  std::size_t latent_size = 8;
  std::size_t base_channels = 16;
  std::size_t embed_dim = 32;  // prompt token dim
  std::size_t time_dim = 32;
  std::size_t attn_dim = 32;
  std::size_t vocab_size = 0;
  // LoRA target set: dense layers and 1x1 convs only, or every conv as well.
  bool lora_all_convs = false;
};

// Two-resolution U-Net with per-resolution timestep projection and prompt cross-attention.
class NoisePredictor {
 public:
  NoisePredictor() = default;
  NoisePredictor(std::string name, const PredictorConfig& config, Rng& rng);

  const PredictorConfig& config() const { return config_; }

  // Embedded prompt [L(+1) x embed_dim], metaword first when given.
  Tensor embed_prompt(const std::vector<std::size_t>& tokens, const nn::MetaWord* metaword = nullptr) const;
  // z_t: [B, c, h, w]; context: [B, L, embed_dim] -> predicted noise [B, c, h, w].
  Tensor forward(const Tensor& z_t, const std::vector<std::size_t>& timesteps, const Tensor& context,
                 const nn::LoraSet* lora = nullptr) const;

  ParamRefs parameters();
  std::vector<nn::LoraTarget> lora_targets() const;

  nn::EmbeddingTable tokens;

 private:
  PredictorConfig config_;
  nn::Dense time1_, time2_;
  nn::Conv2d conv_in_, conv1_, down_, mid_;
  nn::ConvTranspose2d up_;
  nn::Conv2d merge_, conv_up_, conv_out_;
  nn::Dense tproj1_, tproj2_, tproj3_;
  nn::CrossAttention attn1_, attn2_, attn3_;
};

// Stack a [L, D] prompt B times into [B, L, D].
Tensor batch_context(const Tensor& prompt, std::size_t batch);

// Backward diffusion from seed noise: z_T = n, then ddim_step along timestep_sequence.
Tensor generate(const NoisePredictor& model, const Tensor& prompt, const Tensor& noise, std::size_t T_B,
                const DiffusionSchedule& schedule, const nn::LoraSet* lora = nullptr);
// Seed noise [1, c, h, w] drawn from Rng(seed).
Tensor seed_noise(const PredictorConfig& config, std::uint64_t seed);
// One generation per seed, batched; returns [S, c, h, w].
Tensor generate_batch(const NoisePredictor& model, const Tensor& prompt, const std::vector<std::uint64_t>& seeds,
                      std::size_t T_B, const DiffusionSchedule& schedule, const nn::LoraSet* lora = nullptr);

enum class Trainable { kFull, kLora, kMetaword };

struct DiffusionTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

// Mean over elements of (eps - eps_hat)^2 for given noise and timesteps.
Tensor diffusion_loss(const NoisePredictor& model, const DiffusionSchedule& schedule, const Tensor& z0,
                      const Tensor& context, const std::vector<std::size_t>& timesteps, const Tensor& eps,
                      const nn::LoraSet* lora = nullptr);

// Trains the selected parameter group on (latent, prompt) pairs; returns mean loss per epoch.
// lora must be non-null for kLora and metaword for kMetaword. When a metaword is given it is
// prepended to every prompt.
std::vector<double> train_noise_predictor(NoisePredictor& model, const DiffusionSchedule& schedule,
                                          const Tensor& latents, const std::vector<std::vector<std::size_t>>& prompts,
                                          const DiffusionTrainConfig& cfg, Trainable trainable,
                                          nn::LoraSet* lora = nullptr, nn::MetaWord* metaword = nullptr);

// Rows of a batch tensor, in the given order.
Tensor gather_batch(const Tensor& x, const std::vector<std::size_t>& rows);

}  // namespace gsc::genmodel
