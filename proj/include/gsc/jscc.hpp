// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsc/channel.hpp"
#include "gsc/nn.hpp"
#include "gsc/tensor.hpp"

namespace gsc::jscc {

using nn::ParamRefs;

// Compression rates tau_p with K_p = Z / tau_p complex symbols each.
class RatePlan {
 public:
  RatePlan() = default;
  // positions: spatial positions per feature channel (K_p must be a multiple of it).
  RatePlan(std::size_t latent_dim, std::size_t positions, std::vector<double> rates);
  // Rates 16/i for i = 2..6 over Z = 256 latent values and 4x4 feature maps.
  static RatePlan desk();

  std::size_t size() const { return rates_.size(); }
  std::size_t latent_dim() const { return Z_; }
  std::size_t positions() const { return positions_; }
  double rate(std::size_t p) const;
  std::size_t symbol_length(std::size_t p) const;
  std::size_t complex_channels(std::size_t p) const { return symbol_length(p) / positions_; }
  std::size_t max_symbol_length() const { return k_max_; }
  std::size_t max_complex_channels() const { return k_max_ / positions_; }
  double min_rate() const;
  const std::vector<double>& rates() const { return rates_; }

 private:
  std::size_t Z_ = 0, positions_ = 1, k_max_ = 0;
  std::vector<double> rates_;
  std::vector<std::size_t> K_;
};

// K = Z / tau when integral; throws otherwise.
std::size_t symbol_length_for(std::size_t latent_dim, double rate);

struct JsccConfig {
  std::size_t latent_channels = 4;
  std::size_t latent_size = 8;
  std::size_t hidden = 16;
  std::size_t feature_channels = 8;  // real channels after the stride-2 stage
};

// Feature map [N, 2c, H, W] to symbols [N, 2, c*H*W]: first c channels real, last c imaginary.
Tensor features_to_symbols(const Tensor& f);
Tensor symbols_to_features(const Tensor& s, std::size_t H, std::size_t W);

// Keep the first K_p symbols of each row (whole feature channels); pad zero-extends back.
Tensor cut(const Tensor& s, std::size_t K_p);
Tensor pad(const Tensor& s, std::size_t K_full);

class JsccCodec {
 public:
  JsccCodec() = default;
  JsccCodec(const JsccConfig& config, Rng& rng);

  const JsccConfig& config() const { return config_; }
  std::size_t feature_size() const { return config_.latent_size / 2; }
  std::size_t base_symbol_length() const { return config_.feature_channels / 2 * feature_size() * feature_size(); }

  Tensor encode_features(const Tensor& z, const nn::LoraSet* lora = nullptr) const;
  Tensor decode_features(const Tensor& f, const nn::LoraSet* lora = nullptr) const;
  // Latent [N, c, h, w] -> symbols [N, 2, K].
  Tensor encode(const Tensor& z, const nn::LoraSet* lora = nullptr) const;
  Tensor decode(const Tensor& s, const nn::LoraSet* lora = nullptr) const;

  ParamRefs parameters();
  ParamRefs decoder_parameters();
  std::vector<nn::LoraTarget> lora_targets() const;

 private:
  JsccConfig config_;
  nn::Conv2d e1_, e2_;
  nn::ConvTranspose2d d1_;
  nn::Conv2d d2_;
};

// 1x1 conv pair between codec features and transmitted channels.
class AdapterPair {
 public:
  AdapterPair() = default;
  AdapterPair(const std::string& name, std::size_t feature_channels, std::size_t symbol_channels, Rng& rng);

  std::size_t symbol_channels() const { return symbol_channels_; }
  Tensor encode(const Tensor& f, const nn::LoraSet* lora = nullptr) const;
  Tensor decode(const Tensor& g, const nn::LoraSet* lora = nullptr) const;
  ParamRefs parameters();
  std::vector<nn::LoraTarget> lora_targets() const;

 private:
  std::size_t symbol_channels_ = 0;
  nn::Conv2d enc_, dec_;
};

enum class AdapterMode {
  kVariableRate,   // one pair with K_max outputs, cut/pad per rate
  kMultiInstance,  // one pair per rate, sized to that rate
};

// Codec plus adapters over a rate plan.
class Link {
 public:
  Link() = default;
  Link(JsccCodec codec, const RatePlan& plan, AdapterMode mode, Rng& rng);

  const RatePlan& plan() const { return plan_; }
  AdapterMode mode() const { return mode_; }
  std::size_t adapter_count() const { return adapters_.size(); }
  JsccCodec& codec() { return codec_; }
  const JsccCodec& codec() const { return codec_; }

  // cut(a_E(f_JE(z)), K_p) -> [N, 2, K_p]
  Tensor encode(const Tensor& z, std::size_t p, const nn::LoraSet* lora = nullptr) const;
  // f_JD(a_D(pad(s_p)))
  Tensor decode(const Tensor& s, std::size_t p, const nn::LoraSet* lora = nullptr) const;

  ParamRefs parameters();
  ParamRefs adapter_parameters();
  std::vector<nn::LoraTarget> lora_targets() const;

 private:
  const AdapterPair& adapter(std::size_t p) const;

  JsccCodec codec_;
  RatePlan plan_;
  AdapterMode mode_ = AdapterMode::kVariableRate;
  std::vector<AdapterPair> adapters_;
};

Tensor adapter_forward_p(const Link& link, const Tensor& z, std::size_t p, const nn::LoraSet* lora = nullptr);
Tensor adapter_backward_p(const Link& link, const Tensor& s, std::size_t p, const nn::LoraSet* lora = nullptr);

// ---------------------------------------------------------------------------
// Objectives

// Mean over symbols of |s - stop_gradient(s_hat)|^2.
Tensor commitment_loss(const Tensor& s, const Tensor& s_hat);
// KL(q || uniform) where q averages the soft assignments over symbols.
Tensor soft_assign_kld(const Tensor& s, const channel::Constellation& c, double temperature);
// Mean over elements.
Tensor latent_mse_loss(const Tensor& z, const Tensor& z_hat);

enum class Objective { kLmseCml, kLmseOnly, kLmseKld, kSoft2Hard, kNoQuant };

const char* objective_name(Objective o);
Objective parse_objective(const std::string& name);

struct ObjectiveConfig {
  Objective variant = Objective::kLmseCml;
  double eta_cml = 10.0;
  double kld_weight = 1.0;
  double kld_temperature = 1.0;
  double anneal_start = 1.0;  // soft-quantization temperature at epoch 0
  double anneal_final = 1e-3;
};

// Soft-quantization temperature at an epoch: exponential decay reaching anneal_final
// at 90% of the run and held there.
double anneal_temperature(const ObjectiveConfig& cfg, std::size_t epoch, std::size_t epochs);

// Symbols as sent through the channel under an objective. With frozen_offset
// defined, hard quantization uses s + offset (see channel::quantize_ste).
Tensor shape_symbols(const Tensor& s, const channel::Constellation& c, Objective variant, double temperature,
                     const Tensor& frozen_offset = Tensor());

struct LossParts {
  Tensor total;
  Tensor lmse;
};

// Training loss of one rate on a batch with fixed channel draws.
LossParts link_loss(const Link& link, const Tensor& z, std::size_t p, const channel::Constellation& c,
                    const ObjectiveConfig& obj, double temperature, const std::vector<channel::PhiDraw>& draws,
                    const nn::LoraSet* lora = nullptr, const Tensor& frozen_offset = Tensor());

// Channel conditions drawn uniformly from SNR and delay-spread sets, with cached factors.
class ChannelPool {
 public:
  ChannelPool() = default;
  ChannelPool(const channel::ChannelCondition& base, std::vector<double> snrs_db, std::vector<double> spreads_s);

  channel::PhiDraw draw(std::size_t K, Rng& rng) const;
  std::vector<channel::PhiDraw> draw_batch(std::size_t n, std::size_t K, Rng& rng) const;
  // Channel draw for a fixed condition index pair.
  channel::PhiDraw draw_at(std::size_t snr_index, std::size_t spread_index, std::size_t K, Rng& rng) const;
  const std::vector<double>& snrs() const { return snrs_; }
  const std::vector<double>& spreads() const { return spreads_; }

 private:
  channel::ChannelCondition base_;
  std::vector<double> snrs_, spreads_;
  std::vector<channel::ChannelSampler> samplers_;
};

struct JsccTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 20;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

// Trains codec (and adapters for rate p) at a single rate; returns per-epoch mean latent MSE.
std::vector<double> train_jscc(Link& link, const Tensor& latents, std::size_t p, const ObjectiveConfig& obj,
                               const ChannelPool& pool, const channel::Constellation& c, const JsccTrainConfig& cfg);

// Trains the bare codec at its base symbol length.
std::vector<double> train_codec(JsccCodec& codec, const Tensor& latents, const ObjectiveConfig& obj,
                                const ChannelPool& pool, const channel::Constellation& c, const JsccTrainConfig& cfg);

// Bare-codec loss on a batch (used by train_codec).
LossParts codec_loss(const JsccCodec& codec, const Tensor& z, const channel::Constellation& c,
                     const ObjectiveConfig& obj, double temperature, const std::vector<channel::PhiDraw>& draws,
                     const Tensor& frozen_offset = Tensor());

// Mean latent MSE after transmission with hard quantization (power normalization for kNoQuant).
double evaluate_codec(const JsccCodec& codec, const Tensor& latents, Objective variant, const ChannelPool& pool,
                      const channel::Constellation& c, std::uint64_t seed);
double evaluate_link(const Link& link, const Tensor& latents, std::size_t p, const ChannelPool& pool,
                     const channel::Constellation& c, std::uint64_t seed, const nn::LoraSet* lora = nullptr);

}  // namespace gsc::jscc
