// SPDX-License-Identifier: Apache-2.0
#include "gsc/genmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gsc::genmodel {

namespace {

void append(ParamRefs& out, nn::Conv2d& c) { c.collect(out); }
void append(ParamRefs& out, nn::ConvTranspose2d& c) { c.collect(out); }
void append(ParamRefs& out, nn::Dense& d) { d.collect(out); }

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

// [B] coefficients broadcast over the trailing axes of x.
Tensor per_sample(const std::vector<double>& c, const Tensor& x) {
  Shape s(x.dim(), 1);
  s[0] = c.size();
  return Tensor(s, c);
}

}  // namespace

Tensor gather_batch(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t n = x.size(0);
  const std::size_t row = x.numel() / n;
  Tensor flat = reshape(x, {n, row});
  Shape s = x.shape();
  s[0] = rows.size();
  return reshape(index_rows(flat, rows), s);
}

// ---------------------------------------------------------------------------

LatentCodec::LatentCodec(const LatentCodecConfig& config, Rng& rng) : config_(config) {
  if (config.image_size % 4 != 0) throw std::invalid_argument("latent codec: image size must be a multiple of 4");
  const std::size_t c = config.image_channels, w = config.width, l = config.latent_channels;
  e1_ = nn::Conv2d("codec.e1", c, w, 3, 1, 1, rng);
  e2_ = nn::Conv2d("codec.e2", w, 2 * w, 3, 2, 1, rng);
  e3_ = nn::Conv2d("codec.e3", 2 * w, 2 * w, 3, 2, 1, rng);
  e4_ = nn::Conv2d("codec.e4", 2 * w, 2 * l, 1, 1, 0, rng);
  d1_ = nn::Conv2d("codec.d1", l, 2 * w, 1, 1, 0, rng);
  d2_ = nn::ConvTranspose2d("codec.d2", 2 * w, 2 * w, 4, 2, 1, rng);
  d3_ = nn::ConvTranspose2d("codec.d3", 2 * w, w, 4, 2, 1, rng);
  d4_ = nn::Conv2d("codec.d4", w, c, 3, 1, 1, rng);
}

void LatentCodec::check_image(const Tensor& x) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != config_.image_channels || s[2] != config_.image_size || s[3] != config_.image_size) {
    throw TensorError("latent codec: expected images [N," + std::to_string(config_.image_channels) + "," +
                      std::to_string(config_.image_size) + "," + std::to_string(config_.image_size) + "], got " +
                      to_string(s));
  }
}

Posterior LatentCodec::encode(const Tensor& x) const {
  check_image(x);
  Tensor h = silu(e1_.forward(x));
  h = silu(e2_.forward(h));
  h = silu(e3_.forward(h));
  h = e4_.forward(h);
  const std::size_t l = config_.latent_channels;
  return {slice(h, 1, 0, l), slice(h, 1, l, l)};
}

Tensor reparameterize(const Tensor& mean, const Tensor& std, const Tensor& eps) { return add(mean, mul(eps, std)); }

Tensor LatentCodec::encode_latent(const Tensor& x, Rng& rng) const {
  Posterior p = encode(x);
  return reparameterize(p.mean, exp(p.log_std), Tensor::randn(p.mean.shape(), rng));
}

Tensor LatentCodec::decode(const Tensor& z) const {
  const auto& s = z.shape();
  if (s.size() != 4 || s[1] != config_.latent_channels || s[2] != latent_size() || s[3] != latent_size()) {
    throw TensorError("latent codec: expected latents " + to_string(latent_shape(0)) + " got " + to_string(s));
  }
  Tensor h = silu(d1_.forward(z));
  h = silu(d2_.forward(h));
  h = silu(d3_.forward(h));
  return sigmoid(d4_.forward(h));
}

ParamRefs LatentCodec::parameters() {
  ParamRefs out;
  for (auto* c : {&e1_, &e2_, &e3_, &e4_, &d1_}) append(out, *c);
  append(out, d2_);
  append(out, d3_);
  append(out, d4_);
  return out;
}

Tensor gaussian_kl(const Tensor& mean, const Tensor& log_std) {
  // ln s^2 = 2 log_std
  Tensor t = add(square(mean), exp(scale(log_std, 2.0)));
  t = sub(add_scalar(t, -1.0), scale(log_std, 2.0));
  return scale(sum(t), 0.5);
}

Discriminator::Discriminator(std::size_t image_channels, Rng& rng)
    : c1_("disc.c1", image_channels, 8, 3, 2, 1, rng),
      c2_("disc.c2", 8, 16, 3, 2, 1, rng),
      c3_("disc.c3", 16, 1, 3, 1, 1, rng) {}

Tensor Discriminator::forward(const Tensor& x) const {
  Tensor h = silu(c1_.forward(x));
  h = silu(c2_.forward(h));
  h = c3_.forward(h);
  const std::size_t n = h.size(0);
  return mean_axis(reshape(h, {n, h.numel() / n}), 1);
}

ParamRefs Discriminator::parameters() {
  ParamRefs out;
  for (auto* c : {&c1_, &c2_, &c3_}) append(out, *c);
  return out;
}

Tensor codec_loss(const LatentCodec& codec, const Tensor& x, const Tensor& eps, const CodecTrainConfig& cfg,
                  const Discriminator* disc) {
  const double n = static_cast<double>(x.size(0));
  Posterior p = codec.encode(x);
  Tensor z = reparameterize(p.mean, exp(p.log_std), eps);
  Tensor xr = codec.decode(z);
  Tensor loss = scale(sum(square(sub(xr, x))), cfg.recon_weight / n);
  loss = add(loss, scale(gaussian_kl(p.mean, p.log_std), cfg.kl_weight / n));
  if (disc != nullptr) {
    Tensor logits = disc->forward(xr);
    Tensor adv = mean(log(add_scalar(exp(neg(logits)), 1.0)));
    loss = add(loss, scale(adv, cfg.disc_weight));
  }
  return loss;
}

std::vector<double> train_latent_codec(LatentCodec& codec, const Tensor& images, const CodecTrainConfig& cfg) {
  if (images.dim() != 4 || images.size(0) == 0) throw std::invalid_argument("train_latent_codec: empty dataset");
  Rng rng(cfg.seed);
  auto params = codec.parameters();
  nn::set_trainable(params, true);
  nn::AdamState opt(params, {cfg.lr});
  Discriminator disc;
  std::optional<nn::AdamState> dopt;
  if (cfg.use_discriminator) {
    disc = Discriminator(codec.config().image_channels, rng);
    auto dp = disc.parameters();
    nn::set_trainable(dp, true);
    dopt.emplace(dp, nn::AdamConfig{cfg.lr});
  }
  const std::size_t N = images.size(0);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(N, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, N - start);
      std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                    order.begin() + static_cast<long>(start + len));
      Tensor x = gather_batch(images, rows);
      Tensor eps = Tensor::randn(codec.latent_shape(len), rng);
      Tensor loss = codec_loss(codec, x, eps, cfg, cfg.use_discriminator ? &disc : nullptr);
      check_divergence(loss.item(), "train_latent_codec");
      total += loss.item();
      ++batches;
      backward(loss);
      nn::adam_step(opt);
      if (cfg.use_discriminator) {
        // Discriminator step on real vs reconstructed images.
        nn::zero_grad(*dopt);
        Tensor fake = codec.decode(codec.encode_mean(x)).detach();
        Tensor lr_real = disc.forward(x);
        Tensor lr_fake = disc.forward(fake);
        Tensor dl = add(mean(log(add_scalar(exp(neg(lr_real)), 1.0))), mean(log(add_scalar(exp(lr_fake), 1.0))));
        backward(dl);
        nn::adam_step(*dopt);
        nn::zero_grad(opt);
      }
    }
    history.push_back(total / static_cast<double>(batches));
  }
  nn::set_trainable(params, false);
  return history;
}

// ---------------------------------------------------------------------------

DiffusionSchedule::DiffusionSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw std::invalid_argument("diffusion schedule needs T >= 1");
  alphas_.assign(betas_.size() + 1, 1.0);
  for (std::size_t t = 1; t <= betas_.size(); ++t) {
    const double b = betas_[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("diffusion schedule: beta must lie in (0, 1)");
    alphas_[t] = alphas_[t - 1] * (1.0 - b);
  }
}

DiffusionSchedule DiffusionSchedule::linear(std::size_t T, double beta_start, double beta_end) {
  if (T == 0) throw std::invalid_argument("diffusion schedule needs T >= 1");
  std::vector<double> b(T);
  for (std::size_t i = 0; i < T; ++i) {
    const double f = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    b[i] = beta_start + f * (beta_end - beta_start);
  }
  return DiffusionSchedule(std::move(b));
}

double DiffusionSchedule::beta(std::size_t t) const {
  if (t < 1 || t > T()) throw std::out_of_range("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T()));
  return betas_[t - 1];
}

double DiffusionSchedule::alpha(std::size_t t) const {
  if (t > T()) throw std::out_of_range("timestep " + std::to_string(t) + " outside 0.." + std::to_string(T()));
  return alphas_[t];
}

Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s) {
  if (t < 1 || t > s.T()) throw std::out_of_range("forward_diffuse: t=" + std::to_string(t) + " outside 1..T");
  const double a = s.alpha(t);
  return add(scale(z0, std::sqrt(a)), scale(eps, std::sqrt(1.0 - a)));
}

Tensor forward_diffuse_batch(const Tensor& z0, const std::vector<std::size_t>& t, const Tensor& eps,
                             const DiffusionSchedule& s) {
  if (t.size() != z0.size(0)) throw std::invalid_argument("forward_diffuse_batch: one timestep per sample required");
  std::vector<double> ca(t.size()), cb(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 1 || t[i] > s.T()) throw std::out_of_range("forward_diffuse: t outside 1..T");
    ca[i] = std::sqrt(s.alpha(t[i]));
    cb[i] = std::sqrt(1.0 - s.alpha(t[i]));
  }
  return add(mul(z0, per_sample(ca, z0)), mul(eps, per_sample(cb, eps)));
}

Tensor diffuse_one_step(const Tensor& z_prev, std::size_t t, const Tensor& eps, const DiffusionSchedule& s) {
  const double b = s.beta(t);
  return add(scale(z_prev, std::sqrt(1.0 - b)), scale(eps, std::sqrt(b)));
}

Tensor ddim_step(const Tensor& z_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const DiffusionSchedule& s) {
  if (t > s.T() || t_prev > t) {
    throw std::out_of_range("ddim_step: need 0 <= t' <= t <= T, got t=" + std::to_string(t) +
                            " t'=" + std::to_string(t_prev));
  }
  const double at = s.alpha(t), ap = s.alpha(t_prev);
  const double c1 = std::sqrt(ap / at);
  const double c2 = std::sqrt(1.0 - ap) - std::sqrt(1.0 - at) * c1;
  return add(scale(z_t, c1), scale(eps_hat, c2));
}

std::vector<std::size_t> timestep_sequence(std::size_t T, std::size_t T_B) {
  if (T_B == 0 || T_B > T) throw std::invalid_argument("timestep_sequence: need 1 <= T_B <= T");
  std::vector<std::size_t> seq;
  for (std::size_t i = T_B; i >= 1; --i) {
    seq.push_back(static_cast<std::size_t>(
        std::llround(static_cast<double>(T) * static_cast<double>(i) / static_cast<double>(T_B))));
  }
  seq.push_back(0);
  return seq;
}

// ---------------------------------------------------------------------------

NoisePredictor::NoisePredictor(std::string name, const PredictorConfig& config, Rng& rng) : config_(config) {
  if (config.vocab_size == 0) throw std::invalid_argument("noise predictor needs a vocabulary");
  if (config.latent_size % 2 != 0) throw std::invalid_argument("noise predictor: latent size must be even");
  const std::string p = name + ".";
  const std::size_t c = config.base_channels, l = config.latent_channels, e = config.time_dim;
  tokens = nn::EmbeddingTable(p + "tokens", config.vocab_size, config.embed_dim, rng);
  time1_ = nn::Dense(p + "time1", config.time_dim, e, rng);
  time2_ = nn::Dense(p + "time2", e, e, rng);
  conv_in_ = nn::Conv2d(p + "conv_in", l, c, 3, 1, 1, rng);
  conv1_ = nn::Conv2d(p + "conv1", c, c, 3, 1, 1, rng);
  down_ = nn::Conv2d(p + "down", c, 2 * c, 3, 2, 1, rng);
  mid_ = nn::Conv2d(p + "mid", 2 * c, 2 * c, 3, 1, 1, rng);
  up_ = nn::ConvTranspose2d(p + "up", 2 * c, c, 4, 2, 1, rng);
  merge_ = nn::Conv2d(p + "merge", 2 * c, c, 1, 1, 0, rng);
  conv_up_ = nn::Conv2d(p + "conv_up", c, c, 3, 1, 1, rng);
  conv_out_ = nn::Conv2d(p + "conv_out", c, l, 3, 1, 1, rng);
  for (double& w : conv_out_.weight.mutable_data()) w *= 0.1;
  tproj1_ = nn::Dense(p + "tproj1", e, c, rng);
  tproj2_ = nn::Dense(p + "tproj2", e, 2 * c, rng);
  tproj3_ = nn::Dense(p + "tproj3", e, c, rng);
  attn1_ = nn::CrossAttention(p + "attn1", c, config.embed_dim, config.attn_dim, rng);
  attn2_ = nn::CrossAttention(p + "attn2", 2 * c, config.embed_dim, config.attn_dim, rng);
  attn3_ = nn::CrossAttention(p + "attn3", c, config.embed_dim, config.attn_dim, rng);
}

Tensor NoisePredictor::embed_prompt(const std::vector<std::size_t>& toks, const nn::MetaWord* metaword) const {
  for (std::size_t t : toks) {
    if (t >= config_.vocab_size) throw std::out_of_range("token index " + std::to_string(t) + " outside vocabulary");
  }
  Tensor e = tokens.lookup(toks);
  return metaword != nullptr ? nn::prepend_metaword(*metaword, e) : e;
}

namespace {

// [B, C, H, W] + cross-attention over the spatial positions.
Tensor attend(const nn::CrossAttention& attn, const Tensor& h, const Tensor& ctx, const nn::LoraSet* lora) {
  const std::size_t B = h.size(0), C = h.size(1), H = h.size(2), W = h.size(3);
  Tensor q = transpose(reshape(h, {B, C, H * W}));
  Tensor a = attn.forward(q, ctx, lora);
  return add(h, reshape(transpose(a), {B, C, H, W}));
}

Tensor add_time(const Tensor& h, const Tensor& proj) {
  return add(h, reshape(proj, {proj.size(0), proj.size(1), 1, 1}));
}

}  // namespace

Tensor NoisePredictor::forward(const Tensor& z_t, const std::vector<std::size_t>& timesteps, const Tensor& context,
                               const nn::LoraSet* lora) const {
  const auto& s = z_t.shape();
  const std::size_t L = config_.latent_size;
  if (s.size() != 4 || s[1] != config_.latent_channels || s[2] != L || s[3] != L) {
    throw TensorError("noise predictor: latent shape " + to_string(s));
  }
  const std::size_t B = s[0];
  if (timesteps.size() != B) throw TensorError("noise predictor: one timestep per sample required");
  if (context.dim() != 3 || context.size(0) != B || context.size(2) != config_.embed_dim) {
    throw TensorError("noise predictor: context shape " + to_string(context.shape()) + " vs batch " +
                      std::to_string(B));
  }
  Tensor temb = silu(time1_.forward(nn::sinusoidal_embed_batch(timesteps, config_.time_dim), lora));
  temb = silu(time2_.forward(temb, lora));

  Tensor h0 = conv_in_.forward(z_t, lora);
  Tensor h1 = silu(add_time(conv1_.forward(h0, lora), tproj1_.forward(temb, lora)));
  h1 = attend(attn1_, h1, context, lora);

  Tensor h2 = silu(add_time(down_.forward(h1, lora), tproj2_.forward(temb, lora)));
  h2 = attend(attn2_, h2, context, lora);
  h2 = silu(mid_.forward(h2, lora));

  Tensor u = silu(up_.forward(h2, lora));
  u = silu(merge_.forward(concat({u, h1}, 1), lora));
  u = silu(add_time(conv_up_.forward(u, lora), tproj3_.forward(temb, lora)));
  u = attend(attn3_, u, context, lora);
  return conv_out_.forward(u, lora);
}

ParamRefs NoisePredictor::parameters() {
  ParamRefs out;
  tokens.collect(out);
  append(out, time1_);
  append(out, time2_);
  for (auto* c : {&conv_in_, &conv1_, &down_, &mid_}) append(out, *c);
  append(out, up_);
  for (auto* c : {&merge_, &conv_up_, &conv_out_}) append(out, *c);
  for (auto* d : {&tproj1_, &tproj2_, &tproj3_}) append(out, *d);
  attn1_.collect(out);
  attn2_.collect(out);
  attn3_.collect(out);
  return out;
}

std::vector<nn::LoraTarget> NoisePredictor::lora_targets() const {
  std::vector<nn::LoraTarget> t;
  for (const auto* d : {&tproj1_, &tproj2_, &tproj3_}) t.push_back(d->lora_target());
  for (const auto* a : {&attn1_, &attn2_, &attn3_}) {
    auto at = a->lora_targets();
    t.insert(t.end(), at.begin(), at.end());
  }
  t.push_back(merge_.lora_target());
  if (config_.lora_all_convs) {
    for (const auto* c : {&conv_in_, &conv1_, &down_, &mid_, &conv_up_, &conv_out_}) t.push_back(c->lora_target());
    t.push_back(up_.lora_target());
  }
  return t;
}

Tensor batch_context(const Tensor& prompt, std::size_t batch) {
  if (prompt.dim() != 2) throw TensorError("batch_context: prompt must be [L, D], got " + to_string(prompt.shape()));
  Tensor one = reshape(prompt, {1, prompt.size(0), prompt.size(1)});
  if (batch == 1) return one;
  return concat(std::vector<Tensor>(batch, one), 0);
}

Tensor seed_noise(const PredictorConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn({1, config.latent_channels, config.latent_size, config.latent_size}, rng);
}

Tensor generate(const NoisePredictor& model, const Tensor& prompt, const Tensor& noise, std::size_t T_B,
                const DiffusionSchedule& schedule, const nn::LoraSet* lora) {
  const auto seq = timestep_sequence(schedule.T(), T_B);
  const std::size_t B = noise.size(0);
  Tensor ctx = batch_context(prompt.detach(), B);
  Tensor z = noise.detach();
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    Tensor eps_hat = model.forward(z, std::vector<std::size_t>(B, seq[i]), ctx, lora).detach();
    z = ddim_step(z, seq[i], seq[i + 1], eps_hat, schedule).detach();
  }
  return z;
}

Tensor generate_batch(const NoisePredictor& model, const Tensor& prompt, const std::vector<std::uint64_t>& seeds,
                      std::size_t T_B, const DiffusionSchedule& schedule, const nn::LoraSet* lora) {
  std::vector<Tensor> noise;
  for (auto s : seeds) noise.push_back(seed_noise(model.config(), s));
  return generate(model, prompt, concat(noise, 0), T_B, schedule, lora);
}

Tensor diffusion_loss(const NoisePredictor& model, const DiffusionSchedule& schedule, const Tensor& z0,
                      const Tensor& context, const std::vector<std::size_t>& timesteps, const Tensor& eps,
                      const nn::LoraSet* lora) {
  Tensor zt = forward_diffuse_batch(z0, timesteps, eps, schedule);
  return mean(square(sub(eps, model.forward(zt, timesteps, context, lora))));
}

std::vector<double> train_noise_predictor(NoisePredictor& model, const DiffusionSchedule& schedule,
                                          const Tensor& latents, const std::vector<std::vector<std::size_t>>& prompts,
                                          const DiffusionTrainConfig& cfg, Trainable trainable, nn::LoraSet* lora,
                                          nn::MetaWord* metaword) {
  const std::size_t N = latents.size(0);
  if (N == 0 || prompts.size() != N) throw std::invalid_argument("train_noise_predictor: latents and prompts must pair up");
  if (trainable == Trainable::kLora && lora == nullptr) throw std::invalid_argument("train_noise_predictor: LoRA set missing");
  if (trainable == Trainable::kMetaword && metaword == nullptr) {
    throw std::invalid_argument("train_noise_predictor: metaword missing");
  }
  auto base = model.parameters();
  ParamRefs trained;
  switch (trainable) {
    case Trainable::kFull: trained = base; break;
    case Trainable::kLora: trained = lora->parameters(); break;
    case Trainable::kMetaword: trained = {{"metaword", &metaword->embedding}}; break;
  }
  nn::set_trainable(base, false);
  if (lora != nullptr) nn::set_trainable(lora->parameters(), false);
  if (metaword != nullptr) nn::set_trainable({{"metaword", &metaword->embedding}}, false);
  nn::set_trainable(trained, true);
  nn::AdamState opt(trained, {cfg.lr});
  Rng rng(cfg.seed);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(N, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, N - start);
      std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                    order.begin() + static_cast<long>(start + len));
      std::vector<Tensor> ctx;
      for (std::size_t r : rows) {
        Tensor p = model.embed_prompt(prompts[r], metaword);
        ctx.push_back(reshape(p, {1, p.size(0), p.size(1)}));
        if (ctx.back().size(1) != ctx.front().size(1)) {
          throw std::invalid_argument("train_noise_predictor: prompts in a batch must have equal length");
        }
      }
      std::vector<std::size_t> t(len);
      for (auto& ti : t) ti = 1 + rng.index(schedule.T());
      Tensor z0 = gather_batch(latents, rows);
      Tensor eps = Tensor::randn(z0.shape(), rng);
      Tensor loss = diffusion_loss(model, schedule, z0, concat(ctx, 0), t, eps,
                                   trainable == Trainable::kFull ? nullptr : lora);
      check_divergence(loss.item(), "train_noise_predictor");
      total += loss.item();
      ++batches;
      backward(loss);
      nn::adam_step(opt);
    }
    history.push_back(total / static_cast<double>(batches));
  }
  nn::set_trainable(trained, false);
  return history;
}

}  // namespace gsc::genmodel
