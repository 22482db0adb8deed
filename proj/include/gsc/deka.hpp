// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gsc/channel.hpp"
#include "gsc/genmodel.hpp"
#include "gsc/jscc.hpp"
#include "gsc/nn.hpp"
#include "gsc/tensor.hpp"

namespace gsc::deka {

// ---------------------------------------------------------------------------
// Generation-knowledge alignment

enum class GkaMode {
  kMakd,    // metaword, then LoRA under the trained metaword
  kTiOnly,  // metaword only
  kDbOnly,  // LoRA only, metaword left at its random init
};

const char* gka_mode_name(GkaMode mode);
// "makd", "ti" or "db".
GkaMode parse_gka_mode(const std::string& name);

struct GkaConfig {
  std::size_t n_cg = 40;
  std::size_t n_test = 10;
  std::size_t metaword_epochs = 500;
  double metaword_lr = 5e-4;
  double metaword_variance = 0.02;
  std::size_t lora_rank = 8;
  std::size_t lora_epochs = 500;
  double lora_lr = 1e-4;
  std::size_t batch_size = 40;
  GkaMode mode = GkaMode::kMakd;

  void validate() const;
};

struct GkaResult {
  nn::MetaWord metaword;
  nn::LoraSet lora;  // empty for kTiOnly
  std::vector<double> metaword_history;
  std::vector<double> lora_history;
};

// Models shared by the alignment stages. The latent codec is common to cloud and edge.
struct GenerationModels {
  const genmodel::NoisePredictor* cloud = nullptr;
  genmodel::NoisePredictor* edge = nullptr;
  const genmodel::LatentCodec* codec = nullptr;
  genmodel::DiffusionSchedule schedule;
  std::size_t T_B = 20;
};

// Seeds derive_seed(root, "cloud.sample", first + i) for i < count.
std::vector<std::uint64_t> sample_seeds(std::uint64_t root, const char* stream, std::size_t first, std::size_t count);

// Cloud generations for the plain prompt, decoded to images [count, 3, H, W].
Tensor cloud_generate_samples(const GenerationModels& models, const std::vector<std::size_t>& tokens,
                              const std::vector<std::uint64_t>& seeds);

// Edge-side latents of S_CG: one posterior sample per image.
Tensor encode_samples(const genmodel::LatentCodec& codec, const Tensor& images, std::uint64_t seed);

// Noise-prediction loss of the edge model on fixed noise and timesteps drawn from seed.
double gka_objective(const GenerationModels& models, const Tensor& latents, const std::vector<std::size_t>& tokens,
                     const nn::MetaWord* metaword, const nn::LoraSet* lora, std::uint64_t seed);

// Trains a fresh metaword with the edge model frozen.
std::vector<double> train_metaword(const GenerationModels& models, const Tensor& latents,
                                   const std::vector<std::size_t>& tokens, nn::MetaWord& metaword,
                                   const GkaConfig& cfg, std::uint64_t seed);

// Trains LoRA on the edge model under a frozen metaword.
std::vector<double> train_gka_lora(const GenerationModels& models, const Tensor& latents,
                                   const std::vector<std::size_t>& tokens, nn::MetaWord& metaword, nn::LoraSet& lora,
                                   const GkaConfig& cfg, std::uint64_t seed);

// Metaword and LoRA for one subject from its S_CG images.
GkaResult run_gka(const GenerationModels& models, const Tensor& cloud_images, const std::vector<std::size_t>& tokens,
                  const GkaConfig& cfg, std::uint64_t seed);

// Edge generations with the metaword-aided prompt and LoRA attached: [S, c, h, w].
Tensor generate_edge_latents(const GenerationModels& models, const GkaResult& gka,
                             const std::vector<std::size_t>& tokens, const std::vector<std::uint64_t>& seeds);

// ---------------------------------------------------------------------------
// Transmission-knowledge alignment

enum class RateMode { kVrAlter, kVrJoint, kMiAlter, kMiJoint };

const char* rate_mode_name(RateMode mode);
// "vr-alter", "vr-joint", "mi-alter" or "mi-joint".
RateMode parse_rate_mode(const std::string& name);
jscc::AdapterMode adapter_mode(RateMode mode);
bool alternates(RateMode mode);

struct TkaConfig {
  RateMode rate_mode = RateMode::kVrAlter;
  std::size_t n_eg = 100;
  std::size_t n_eg_test = 30;
  std::size_t rate_epochs = 300;
  double rate_lr = 1e-4;
  std::size_t snr_epochs = 300;
  double snr_lr = 1e-4;
  std::size_t batch_size = 20;
  double gamma0_db = 20.0;
  double omega0_ns = 300.0;
  std::vector<std::vector<double>> groups{{0, 5}, {10, 15}, {20, 25}};
  std::vector<bool> group_trained{true, true, false};
  std::vector<std::size_t> group_ranks{8, 8, 8};

  // Groups must be nonempty and partition snr_set.
  void validate(const std::vector<double>& snr_set) const;
};

// Index of the unique group containing snr_db; throws when none does.
std::size_t group_of(const std::vector<std::vector<double>>& groups, double snr_db);

struct TransmissionSetup {
  channel::ChannelCondition base;
  channel::Constellation constellation;
  jscc::ObjectiveConfig objective;
  std::vector<double> snr_set;        // dB
  std::vector<double> spread_set_ns;  // ns
};

struct RateStageResult {
  // history[p][epoch]: mean latent MSE of rate p.
  std::vector<std::vector<double>> history;
};

// Trains codec and adapters over all rates of link at (gamma0, omega0).
RateStageResult vgsa_rate_stage(jscc::Link& link, const Tensor& latents, const TransmissionSetup& setup,
                                const TkaConfig& cfg, std::uint64_t seed);

// Loss of the rate stage or the SNR stage on a batch, given per-rate channel draws.
Tensor vgsa_joint_loss(const jscc::Link& link, const Tensor& z, const TransmissionSetup& setup, double temperature,
                       const std::vector<std::vector<channel::PhiDraw>>& draws, const nn::LoraSet* lora = nullptr,
                       const std::vector<Tensor>& frozen_offsets = {});

struct SnrStageResult {
  std::vector<std::optional<nn::LoraSet>> lora;  // per group; empty when untrained
  std::vector<std::vector<double>> history;      // per group, mean latent MSE over rates per epoch
};

// Per-group LoRA on a frozen link: sum over rates, SNR from the group and delay spread from the
// full set drawn per batch element.
SnrStageResult vgsa_snr_stage(const jscc::Link& link, const Tensor& latents, const TransmissionSetup& setup,
                              const TkaConfig& cfg, std::uint64_t seed);

struct TkaResult {
  jscc::Link link;
  std::vector<std::vector<double>> groups;
  std::vector<std::optional<nn::LoraSet>> group_lora;
  RateStageResult rate;
  SnrStageResult snr;

  // LoRA of the group holding snr_db, or null when that group is untrained.
  const nn::LoraSet* select(double snr_db) const;
};

// ---------------------------------------------------------------------------
// Composite forward map

struct GscSystem {
  GenerationModels models;
  const GkaResult* gka = nullptr;
  const TkaResult* tka = nullptr;
  TransmissionSetup setup;
};

struct GscOutput {
  Tensor latent;           // generated z
  Tensor received_latent;  // after the link
  Tensor image;            // f_LD(received)
  Tensor reference;        // f_LD(generated)
};

// One transmission of the edge generation for (tokens, seed) at rate p and channel condition.
GscOutput gsc_forward(const GscSystem& sys, const std::vector<std::size_t>& tokens, std::uint64_t seed, std::size_t p,
                      double snr_db, double spread_ns, std::uint64_t channel_seed);

// Latents through the link at a fixed condition, one channel draw per latent drawn from seed.
Tensor transmit_latents(const jscc::Link& link, const nn::LoraSet* lora, const Tensor& latents, std::size_t p,
                        const TransmissionSetup& setup, double snr_db, double spread_ns, std::uint64_t seed);

// Mean PSNR of f_LD(received) against f_LD(sent) over trials channel draws cycling through latents.
// Delay spreads rotate through the set. Draws depend on seed and trial only, so runs at different
// SNRs share channel gains and noise shape.
double psnr_monte_carlo(const jscc::Link& link, const nn::LoraSet* lora, const genmodel::LatentCodec& codec,
                        const Tensor& latents, std::size_t p, const TransmissionSetup& setup, double snr_db,
                        std::size_t trials, std::uint64_t seed);

}  // namespace gsc::deka
