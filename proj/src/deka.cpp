// SPDX-License-Identifier: Apache-2.0
#include "gsc/deka.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gsc/metrics.hpp"
#include "gsc/rng.hpp"

namespace gsc::deka {

namespace {

bool same_db(double a, double b) { return std::abs(a - b) < 1e-9; }

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

void check_divergence(double loss, const char* what) {
  if (!std::isfinite(loss) || loss > 1e6) {
    throw std::runtime_error(std::string(what) + ": training diverged (loss " + std::to_string(loss) + ")");
  }
}

void check_models(const GenerationModels& m) {
  if (m.cloud == nullptr || m.edge == nullptr || m.codec == nullptr) {
    throw std::invalid_argument("generation models incomplete");
  }
}

std::size_t spread_index(const TransmissionSetup& setup, double spread_ns) {
  for (std::size_t i = 0; i < setup.spread_set_ns.size(); ++i) {
    if (same_db(setup.spread_set_ns[i], spread_ns)) return i;
  }
  throw std::out_of_range("delay spread " + std::to_string(spread_ns) + " ns is not in the configured set");
}

std::vector<double> to_seconds(const std::vector<double>& ns) {
  std::vector<double> s;
  for (double v : ns) s.push_back(v * 1e-9);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generation-knowledge alignment

const char* gka_mode_name(GkaMode mode) {
  switch (mode) {
    case GkaMode::kMakd: return "makd";
    case GkaMode::kTiOnly: return "ti";
    case GkaMode::kDbOnly: return "db";
  }
  return "?";
}

GkaMode parse_gka_mode(const std::string& name) {
  if (name == "makd") return GkaMode::kMakd;
  if (name == "ti") return GkaMode::kTiOnly;
  if (name == "db") return GkaMode::kDbOnly;
  throw std::invalid_argument("unknown G-KA mode '" + name + "' (expected makd, ti or db)");
}

void GkaConfig::validate() const {
  if (n_cg < 1) throw std::invalid_argument("gka.n_cg must be at least 1");
  if (lora_rank < 1) throw std::invalid_argument("gka.lora_rank must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("gka.batch_size must be at least 1");
  if (!(metaword_lr > 0.0) || !(lora_lr > 0.0)) throw std::invalid_argument("gka learning rates must be positive");
  if (!(metaword_variance > 0.0)) throw std::invalid_argument("gka.metaword_variance must be positive");
}

std::vector<std::uint64_t> sample_seeds(std::uint64_t root, const char* stream, std::size_t first, std::size_t count) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(derive_seed(root, stream, first + i));
  return out;
}

Tensor cloud_generate_samples(const GenerationModels& models, const std::vector<std::size_t>& tokens,
                              const std::vector<std::uint64_t>& seeds) {
  check_models(models);
  if (seeds.empty()) throw std::invalid_argument("cloud_generate_samples: no seeds");
  Tensor z = genmodel::generate_batch(*models.cloud, models.cloud->embed_prompt(tokens), seeds, models.T_B,
                                      models.schedule);
  return models.codec->decode(z).detach();
}

Tensor encode_samples(const genmodel::LatentCodec& codec, const Tensor& images, std::uint64_t seed) {
  Rng rng(seed);
  return codec.encode_latent(images, rng).detach();
}

double gka_objective(const GenerationModels& models, const Tensor& latents, const std::vector<std::size_t>& tokens,
                     const nn::MetaWord* metaword, const nn::LoraSet* lora, std::uint64_t seed) {
  check_models(models);
  Rng rng(seed);
  const std::size_t N = latents.size(0);
  std::vector<std::size_t> t(N);
  for (auto& ti : t) ti = 1 + rng.index(models.schedule.T());
  Tensor eps = Tensor::randn(latents.shape(), rng);
  Tensor ctx = genmodel::batch_context(models.edge->embed_prompt(tokens, metaword).detach(), N);
  return genmodel::diffusion_loss(*models.edge, models.schedule, latents, ctx, t, eps, lora).item();
}

namespace {

std::vector<std::vector<std::size_t>> repeat_prompt(const std::vector<std::size_t>& tokens, std::size_t n) {
  return std::vector<std::vector<std::size_t>>(n, tokens);
}

}  // namespace

std::vector<double> train_metaword(const GenerationModels& models, const Tensor& latents,
                                   const std::vector<std::size_t>& tokens, nn::MetaWord& metaword,
                                   const GkaConfig& cfg, std::uint64_t seed) {
  check_models(models);
  genmodel::DiffusionTrainConfig tc{cfg.metaword_epochs, cfg.batch_size, cfg.metaword_lr, seed};
  return genmodel::train_noise_predictor(*models.edge, models.schedule, latents,
                                         repeat_prompt(tokens, latents.size(0)), tc, genmodel::Trainable::kMetaword,
                                         nullptr, &metaword);
}

std::vector<double> train_gka_lora(const GenerationModels& models, const Tensor& latents,
                                   const std::vector<std::size_t>& tokens, nn::MetaWord& metaword, nn::LoraSet& lora,
                                   const GkaConfig& cfg, std::uint64_t seed) {
  check_models(models);
  genmodel::DiffusionTrainConfig tc{cfg.lora_epochs, cfg.batch_size, cfg.lora_lr, seed};
  return genmodel::train_noise_predictor(*models.edge, models.schedule, latents,
                                         repeat_prompt(tokens, latents.size(0)), tc, genmodel::Trainable::kLora, &lora,
                                         &metaword);
}

GkaResult run_gka(const GenerationModels& models, const Tensor& cloud_images, const std::vector<std::size_t>& tokens,
                  const GkaConfig& cfg, std::uint64_t seed) {
  check_models(models);
  cfg.validate();
  const Tensor latents = encode_samples(*models.codec, cloud_images, derive_seed(seed, "gka.encode"));
  Rng init(derive_seed(seed, "gka.metaword.init"));
  GkaResult r;
  r.metaword = nn::MetaWord::init(models.edge->config().embed_dim, init, cfg.metaword_variance);
  if (cfg.mode != GkaMode::kDbOnly) {
    r.metaword_history = train_metaword(models, latents, tokens, r.metaword, cfg, derive_seed(seed, "gka.metaword"));
  }
  if (cfg.mode != GkaMode::kTiOnly) {
    Rng lora_init(derive_seed(seed, "gka.lora.init"));
    r.lora = nn::LoraSet::create(models.edge->lora_targets(), cfg.lora_rank, lora_init);
    r.lora_history = train_gka_lora(models, latents, tokens, r.metaword, r.lora, cfg, derive_seed(seed, "gka.lora"));
  }
  return r;
}

Tensor generate_edge_latents(const GenerationModels& models, const GkaResult& gka,
                             const std::vector<std::size_t>& tokens, const std::vector<std::uint64_t>& seeds) {
  check_models(models);
  if (seeds.empty()) throw std::invalid_argument("generate_edge_latents: no seeds");
  const nn::LoraSet* lora = gka.lora.empty() ? nullptr : &gka.lora;
  return genmodel::generate_batch(*models.edge, models.edge->embed_prompt(tokens, &gka.metaword), seeds, models.T_B,
                                  models.schedule, lora);
}

// ---------------------------------------------------------------------------
// Transmission-knowledge alignment

const char* rate_mode_name(RateMode mode) {
  switch (mode) {
    case RateMode::kVrAlter: return "vr-alter";
    case RateMode::kVrJoint: return "vr-joint";
    case RateMode::kMiAlter: return "mi-alter";
    case RateMode::kMiJoint: return "mi-joint";
  }
  return "?";
}

RateMode parse_rate_mode(const std::string& name) {
  if (name == "vr-alter") return RateMode::kVrAlter;
  if (name == "vr-joint") return RateMode::kVrJoint;
  if (name == "mi-alter") return RateMode::kMiAlter;
  if (name == "mi-joint") return RateMode::kMiJoint;
  throw std::invalid_argument("unknown rate-stage mode '" + name + "' (expected vr-alter, vr-joint, mi-alter or mi-joint)");
}

jscc::AdapterMode adapter_mode(RateMode mode) {
  return mode == RateMode::kVrAlter || mode == RateMode::kVrJoint ? jscc::AdapterMode::kVariableRate
                                                                  : jscc::AdapterMode::kMultiInstance;
}

bool alternates(RateMode mode) { return mode == RateMode::kVrAlter || mode == RateMode::kMiAlter; }

void TkaConfig::validate(const std::vector<double>& snr_set) const {
  if (groups.empty()) throw std::invalid_argument("tka.groups must not be empty");
  if (group_trained.size() != groups.size() || group_ranks.size() != groups.size()) {
    throw std::invalid_argument("tka: group_trained and group_ranks need one entry per group");
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw std::invalid_argument("tka: group " + std::to_string(g + 1) + " is empty");
    if (group_trained[g] && group_ranks[g] < 1) {
      throw std::invalid_argument("tka: group " + std::to_string(g + 1) + " needs rank >= 1");
    }
  }
  std::size_t members = 0;
  for (const auto& g : groups) members += g.size();
  if (members != snr_set.size()) throw std::invalid_argument("tka.groups must partition the SNR set exactly");
  for (double s : snr_set) group_of(groups, s);
  if (batch_size < 1) throw std::invalid_argument("tka.batch_size must be at least 1");
  if (!(rate_lr > 0.0) || !(snr_lr > 0.0)) throw std::invalid_argument("tka learning rates must be positive");
}

std::size_t group_of(const std::vector<std::vector<double>>& groups, double snr_db) {
  std::optional<std::size_t> found;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (double s : groups[g]) {
      if (!same_db(s, snr_db)) continue;
      if (found && *found != g) throw std::invalid_argument("SNR " + std::to_string(snr_db) + " dB is in two groups");
      found = g;
    }
  }
  if (!found) throw std::out_of_range("SNR " + std::to_string(snr_db) + " dB is outside every SNR group");
  return *found;
}

Tensor vgsa_joint_loss(const jscc::Link& link, const Tensor& z, const TransmissionSetup& setup, double temperature,
                       const std::vector<std::vector<channel::PhiDraw>>& draws, const nn::LoraSet* lora,
                       const std::vector<Tensor>& frozen_offsets) {
  const std::size_t P = link.plan().size();
  if (draws.size() != P) throw std::invalid_argument("vgsa_joint_loss: one draw batch per rate required");
  Tensor total;
  for (std::size_t p = 0; p < P; ++p) {
    const Tensor offset = frozen_offsets.empty() ? Tensor() : frozen_offsets.at(p);
    Tensor l = jscc::link_loss(link, z, p, setup.constellation, setup.objective, temperature, draws[p], lora, offset)
                   .total;
    total = total.defined() ? add(total, l) : l;
  }
  return total;
}

RateStageResult vgsa_rate_stage(jscc::Link& link, const Tensor& latents, const TransmissionSetup& setup,
                                const TkaConfig& cfg, std::uint64_t seed) {
  const std::size_t N = latents.size(0);
  if (N == 0) throw std::invalid_argument("vgsa_rate_stage: no latents");
  if (link.mode() != adapter_mode(cfg.rate_mode)) {
    throw std::invalid_argument(std::string("vgsa_rate_stage: link adapters do not match mode ") +
                                rate_mode_name(cfg.rate_mode));
  }
  const std::size_t P = link.plan().size();
  const jscc::ChannelPool pool(setup.base, {cfg.gamma0_db}, {cfg.omega0_ns * 1e-9});
  auto params = link.parameters();
  nn::set_trainable(params, true);
  nn::AdamState opt(params, {cfg.rate_lr});
  Rng rng(seed);
  RateStageResult result;
  result.history.assign(P, {});
  for (std::size_t epoch = 0; epoch < cfg.rate_epochs; ++epoch) {
    const double temperature = jscc::anneal_temperature(setup.objective, epoch, cfg.rate_epochs);
    const auto order = shuffled(N, rng);
    std::vector<double> totals(P, 0.0);
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, N - start);
      std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                    order.begin() + static_cast<long>(start + len));
      const Tensor z = genmodel::gather_batch(latents, rows);
      if (alternates(cfg.rate_mode)) {
        for (std::size_t p = 0; p < P; ++p) {
          auto draws = pool.draw_batch(len, link.plan().symbol_length(p), rng);
          auto parts = jscc::link_loss(link, z, p, setup.constellation, setup.objective, temperature, draws);
          check_divergence(parts.total.item(), "vgsa_rate_stage");
          totals[p] += parts.lmse.item() * static_cast<double>(len);
          backward(parts.total);
          nn::adam_step(opt);
        }
      } else {
        Tensor total;
        for (std::size_t p = 0; p < P; ++p) {
          auto draws = pool.draw_batch(len, link.plan().symbol_length(p), rng);
          auto parts = jscc::link_loss(link, z, p, setup.constellation, setup.objective, temperature, draws);
          totals[p] += parts.lmse.item() * static_cast<double>(len);
          total = total.defined() ? add(total, parts.total) : parts.total;
        }
        check_divergence(total.item(), "vgsa_rate_stage");
        backward(total);
        nn::adam_step(opt);
      }
    }
    for (std::size_t p = 0; p < P; ++p) result.history[p].push_back(totals[p] / static_cast<double>(N));
  }
  nn::set_trainable(params, false);
  return result;
}

SnrStageResult vgsa_snr_stage(const jscc::Link& link, const Tensor& latents, const TransmissionSetup& setup,
                              const TkaConfig& cfg, std::uint64_t seed) {
  cfg.validate(setup.snr_set);
  const std::size_t N = latents.size(0);
  if (N == 0) throw std::invalid_argument("vgsa_snr_stage: no latents");
  const std::size_t P = link.plan().size();
  SnrStageResult result;
  result.lora.resize(cfg.groups.size());
  result.history.resize(cfg.groups.size());
  for (std::size_t g = 0; g < cfg.groups.size(); ++g) {
    if (!cfg.group_trained[g]) continue;
    const jscc::ChannelPool pool(setup.base, cfg.groups[g], to_seconds(setup.spread_set_ns));
    Rng init(derive_seed(seed, "tka.snr.init", g));
    nn::LoraSet lora = nn::LoraSet::create(link.lora_targets(), cfg.group_ranks[g], init);
    auto params = lora.parameters();
    nn::set_trainable(params, true);
    nn::AdamState opt(params, {cfg.snr_lr});
    Rng rng(derive_seed(seed, "tka.snr.train", g));
    for (std::size_t epoch = 0; epoch < cfg.snr_epochs; ++epoch) {
      const double temperature = jscc::anneal_temperature(setup.objective, epoch, cfg.snr_epochs);
      const auto order = shuffled(N, rng);
      double lmse = 0.0;
      for (std::size_t start = 0; start < N; start += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, N - start);
        std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                      order.begin() + static_cast<long>(start + len));
        const Tensor z = genmodel::gather_batch(latents, rows);
        Tensor total;
        for (std::size_t p = 0; p < P; ++p) {
          auto draws = pool.draw_batch(len, link.plan().symbol_length(p), rng);
          auto parts = jscc::link_loss(link, z, p, setup.constellation, setup.objective, temperature, draws, &lora);
          lmse += parts.lmse.item() * static_cast<double>(len);
          total = total.defined() ? add(total, parts.total) : parts.total;
        }
        check_divergence(total.item(), "vgsa_snr_stage");
        backward(total);
        nn::adam_step(opt);
      }
      result.history[g].push_back(lmse / static_cast<double>(N * P));
    }
    nn::set_trainable(params, false);
    result.lora[g] = std::move(lora);
  }
  return result;
}

const nn::LoraSet* TkaResult::select(double snr_db) const {
  const std::size_t g = group_of(groups, snr_db);
  if (g >= group_lora.size() || !group_lora[g]) return nullptr;
  return &*group_lora[g];
}

// ---------------------------------------------------------------------------
// Composite forward map

Tensor transmit_latents(const jscc::Link& link, const nn::LoraSet* lora, const Tensor& latents, std::size_t p,
                        const TransmissionSetup& setup, double snr_db, double spread_ns, std::uint64_t seed) {
  if (p >= link.plan().size()) throw std::out_of_range("rate index " + std::to_string(p) + " outside the rate plan");
  if (std::none_of(setup.snr_set.begin(), setup.snr_set.end(), [&](double s) { return same_db(s, snr_db); })) {
    throw std::out_of_range("SNR " + std::to_string(snr_db) + " dB is not in the configured set");
  }
  const std::size_t wi = spread_index(setup, spread_ns);
  const jscc::ChannelPool pool(setup.base, {snr_db}, {setup.spread_set_ns[wi] * 1e-9});
  Rng rng(seed);
  const std::size_t K = link.plan().symbol_length(p);
  auto draws = pool.draw_batch(latents.size(0), K, rng);
  Tensor s = channel::quantize_ste(link.encode(latents, p, lora), setup.constellation);
  return link.decode(channel::channel_tensor(s, draws), p, lora).detach();
}

GscOutput gsc_forward(const GscSystem& sys, const std::vector<std::size_t>& tokens, std::uint64_t seed, std::size_t p,
                      double snr_db, double spread_ns, std::uint64_t channel_seed) {
  check_models(sys.models);
  if (sys.gka == nullptr || sys.tka == nullptr) throw std::invalid_argument("gsc_forward: alignment results missing");
  GscOutput out;
  out.latent = generate_edge_latents(sys.models, *sys.gka, tokens, {seed});
  const nn::LoraSet* lora = sys.tka->select(snr_db);
  out.received_latent = transmit_latents(sys.tka->link, lora, out.latent, p, sys.setup, snr_db, spread_ns,
                                         channel_seed);
  out.image = sys.models.codec->decode(out.received_latent).detach();
  out.reference = sys.models.codec->decode(out.latent).detach();
  return out;
}

double psnr_monte_carlo(const jscc::Link& link, const nn::LoraSet* lora, const genmodel::LatentCodec& codec,
                        const Tensor& latents, std::size_t p, const TransmissionSetup& setup, double snr_db,
                        std::size_t trials, std::uint64_t seed) {
  const std::size_t N = latents.size(0);
  if (N == 0 || trials == 0) throw std::invalid_argument("psnr_monte_carlo: needs latents and trials");
  if (p >= link.plan().size()) throw std::out_of_range("rate index " + std::to_string(p) + " outside the rate plan");
  if (std::none_of(setup.snr_set.begin(), setup.snr_set.end(), [&](double s) { return same_db(s, snr_db); })) {
    throw std::out_of_range("SNR " + std::to_string(snr_db) + " dB is not in the configured set");
  }
  const jscc::ChannelPool pool(setup.base, {snr_db}, to_seconds(setup.spread_set_ns));
  const std::size_t K = link.plan().symbol_length(p);
  const Tensor reference = codec.decode(latents).detach();
  constexpr std::size_t kChunk = 64;
  double total = 0.0;
  for (std::size_t start = 0; start < trials; start += kChunk) {
    const std::size_t len = std::min(kChunk, trials - start);
    std::vector<std::size_t> rows;
    std::vector<channel::PhiDraw> draws;
    for (std::size_t trial = start; trial < start + len; ++trial) {
      rows.push_back(trial % N);
      Rng rng(derive_seed(seed, "psnr.trial", trial));
      draws.push_back(pool.draw_at(0, (trial / N) % setup.spread_set_ns.size(), K, rng));
    }
    const Tensor z = genmodel::gather_batch(latents, rows);
    Tensor s = channel::quantize_ste(link.encode(z, p, lora), setup.constellation);
    const Tensor x_hat = codec.decode(link.decode(channel::channel_tensor(s, draws), p, lora)).detach();
    for (double v : metrics::psnr_per_image(genmodel::gather_batch(reference, rows), x_hat)) total += v;
  }
  return total / static_cast<double>(trials);
}

}  // namespace gsc::deka
