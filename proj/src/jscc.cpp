// SPDX-License-Identifier: Apache-2.0
#include "gsc/jscc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gsc/genmodel.hpp"

namespace gsc::jscc {

std::size_t symbol_length_for(std::size_t latent_dim, double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("compression rate must be positive");
  const double k = static_cast<double>(latent_dim) / rate;
  const double r = std::round(k);
  if (r < 1.0 || std::abs(k - r) > 1e-9 * k) {
    throw std::invalid_argument("rate " + std::to_string(rate) + " gives non-integral K = " + std::to_string(k) +
                                " for Z = " + std::to_string(latent_dim));
  }
  return static_cast<std::size_t>(r);
}

RatePlan::RatePlan(std::size_t latent_dim, std::size_t positions, std::vector<double> rates)
    : Z_(latent_dim), positions_(positions), rates_(std::move(rates)) {
  if (rates_.empty()) throw std::invalid_argument("rate plan is empty");
  if (positions_ == 0) throw std::invalid_argument("rate plan: positions must be positive");
  for (double r : rates_) {
    const std::size_t K = symbol_length_for(Z_, r);
    if (K % positions_ != 0) {
      throw std::invalid_argument("rate " + std::to_string(r) + ": K = " + std::to_string(K) +
                                  " is not a whole number of feature channels");
    }
    K_.push_back(K);
    k_max_ = std::max(k_max_, K);
  }
}

RatePlan RatePlan::desk() {
  std::vector<double> rates;
  for (int i = 2; i <= 6; ++i) rates.push_back(16.0 / i);
  return RatePlan(256, 16, rates);
}

double RatePlan::rate(std::size_t p) const {
  if (p >= rates_.size()) throw std::out_of_range("rate index " + std::to_string(p) + " outside the plan");
  return rates_[p];
}

std::size_t RatePlan::symbol_length(std::size_t p) const {
  if (p >= K_.size()) throw std::out_of_range("rate index " + std::to_string(p) + " outside the plan");
  return K_[p];
}

double RatePlan::min_rate() const { return *std::min_element(rates_.begin(), rates_.end()); }

// ---------------------------------------------------------------------------

Tensor features_to_symbols(const Tensor& f) {
  if (f.dim() != 4 || f.size(1) % 2 != 0) {
    throw TensorError("features_to_symbols: need [N, 2c, H, W], got " + to_string(f.shape()));
  }
  const std::size_t N = f.size(0);
  return reshape(f, {N, 2, f.numel() / (2 * N)});
}

Tensor symbols_to_features(const Tensor& s, std::size_t H, std::size_t W) {
  if (s.dim() != 3 || s.size(1) != 2 || s.size(2) % (H * W) != 0) {
    throw TensorError("symbols_to_features: bad symbol shape " + to_string(s.shape()));
  }
  return reshape(s, {s.size(0), 2 * (s.size(2) / (H * W)), H, W});
}

Tensor cut(const Tensor& s, std::size_t K_p) {
  if (s.dim() != 3 || K_p == 0 || K_p > s.size(2)) {
    throw TensorError("cut: cannot keep " + std::to_string(K_p) + " symbols of " + to_string(s.shape()));
  }
  if (K_p == s.size(2)) return s;
  return slice(s, 2, 0, K_p);
}

Tensor pad(const Tensor& s, std::size_t K_full) {
  if (s.dim() != 3 || K_full < s.size(2)) {
    throw TensorError("pad: cannot extend " + to_string(s.shape()) + " to " + std::to_string(K_full));
  }
  if (K_full == s.size(2)) return s;
  return pad_axis(s, 2, K_full);
}

// ---------------------------------------------------------------------------

JsccCodec::JsccCodec(const JsccConfig& config, Rng& rng) : config_(config) {
  if (config.feature_channels % 2 != 0) throw std::invalid_argument("JSCC feature channels must be even");
  if (config.latent_size % 2 != 0) throw std::invalid_argument("JSCC latent size must be even");
  e1_ = nn::Conv2d("jscc.e1", config.latent_channels, config.hidden, 3, 1, 1, rng);
  e2_ = nn::Conv2d("jscc.e2", config.hidden, config.feature_channels, 3, 2, 1, rng);
  d1_ = nn::ConvTranspose2d("jscc.d1", config.feature_channels, config.hidden, 4, 2, 1, rng);
  d2_ = nn::Conv2d("jscc.d2", config.hidden, config.latent_channels, 3, 1, 1, rng);
}

Tensor JsccCodec::encode_features(const Tensor& z, const nn::LoraSet* lora) const {
  const auto& s = z.shape();
  if (s.size() != 4 || s[1] != config_.latent_channels || s[2] != config_.latent_size || s[3] != config_.latent_size) {
    throw TensorError("JSCC encoder: latent shape " + to_string(s));
  }
  return e2_.forward(silu(e1_.forward(z, lora)), lora);
}

Tensor JsccCodec::decode_features(const Tensor& f, const nn::LoraSet* lora) const {
  const auto& s = f.shape();
  if (s.size() != 4 || s[1] != config_.feature_channels || s[2] != feature_size() || s[3] != feature_size()) {
    throw TensorError("JSCC decoder: feature shape " + to_string(s));
  }
  return d2_.forward(silu(d1_.forward(f, lora)), lora);
}

Tensor JsccCodec::encode(const Tensor& z, const nn::LoraSet* lora) const {
  return features_to_symbols(encode_features(z, lora));
}

Tensor JsccCodec::decode(const Tensor& s, const nn::LoraSet* lora) const {
  if (s.dim() != 3 || s.size(2) != base_symbol_length()) {
    throw TensorError("JSCC decoder: expected " + std::to_string(base_symbol_length()) + " symbols, got " +
                      to_string(s.shape()));
  }
  return decode_features(symbols_to_features(s, feature_size(), feature_size()), lora);
}

ParamRefs JsccCodec::parameters() {
  ParamRefs out;
  e1_.collect(out);
  e2_.collect(out);
  d1_.collect(out);
  d2_.collect(out);
  return out;
}

ParamRefs JsccCodec::decoder_parameters() {
  ParamRefs out;
  d1_.collect(out);
  d2_.collect(out);
  return out;
}

std::vector<nn::LoraTarget> JsccCodec::lora_targets() const {
  return {e1_.lora_target(), e2_.lora_target(), d1_.lora_target(), d2_.lora_target()};
}

AdapterPair::AdapterPair(const std::string& name, std::size_t feature_channels, std::size_t symbol_channels, Rng& rng)
    : symbol_channels_(symbol_channels),
      enc_(name + ".enc", feature_channels, symbol_channels, 1, 1, 0, rng),
      dec_(name + ".dec", symbol_channels, feature_channels, 1, 1, 0, rng) {
  if (symbol_channels % 2 != 0) throw std::invalid_argument("adapter: symbol channel count must be even");
}

Tensor AdapterPair::encode(const Tensor& f, const nn::LoraSet* lora) const { return enc_.forward(f, lora); }
Tensor AdapterPair::decode(const Tensor& g, const nn::LoraSet* lora) const { return dec_.forward(g, lora); }

ParamRefs AdapterPair::parameters() {
  ParamRefs out;
  enc_.collect(out);
  dec_.collect(out);
  return out;
}

std::vector<nn::LoraTarget> AdapterPair::lora_targets() const { return {enc_.lora_target(), dec_.lora_target()}; }

Link::Link(JsccCodec codec, const RatePlan& plan, AdapterMode mode, Rng& rng)
    : codec_(std::move(codec)), plan_(plan), mode_(mode) {
  const std::size_t fs = codec_.feature_size();
  if (plan.positions() != fs * fs) {
    throw std::invalid_argument("rate plan positions " + std::to_string(plan.positions()) +
                                " do not match the codec feature map");
  }
  if (plan.latent_dim() != codec_.config().latent_channels * codec_.config().latent_size * codec_.config().latent_size) {
    throw std::invalid_argument("rate plan latent dimension does not match the codec");
  }
  const std::size_t F = codec_.config().feature_channels;
  if (mode == AdapterMode::kVariableRate) {
    adapters_.emplace_back("adapter", F, 2 * plan.max_complex_channels(), rng);
  } else {
    for (std::size_t p = 0; p < plan.size(); ++p) {
      adapters_.emplace_back("adapter" + std::to_string(p), F, 2 * plan.complex_channels(p), rng);
    }
  }
}

const AdapterPair& Link::adapter(std::size_t p) const {
  if (p >= plan_.size()) throw std::out_of_range("rate index " + std::to_string(p) + " outside the plan");
  return mode_ == AdapterMode::kVariableRate ? adapters_.front() : adapters_[p];
}

Tensor Link::encode(const Tensor& z, std::size_t p, const nn::LoraSet* lora) const {
  const AdapterPair& a = adapter(p);
  Tensor s = features_to_symbols(a.encode(codec_.encode_features(z, lora), lora));
  return cut(s, plan_.symbol_length(p));
}

Tensor Link::decode(const Tensor& s, std::size_t p, const nn::LoraSet* lora) const {
  const AdapterPair& a = adapter(p);
  if (s.dim() != 3 || s.size(2) != plan_.symbol_length(p)) {
    throw TensorError("link decode: expected " + std::to_string(plan_.symbol_length(p)) + " symbols, got " +
                      to_string(s.shape()));
  }
  const std::size_t fs = codec_.feature_size();
  Tensor g = symbols_to_features(pad(s, a.symbol_channels() / 2 * fs * fs), fs, fs);
  return codec_.decode_features(a.decode(g, lora), lora);
}

ParamRefs Link::parameters() {
  ParamRefs out = codec_.parameters();
  auto a = adapter_parameters();
  out.insert(out.end(), a.begin(), a.end());
  return out;
}

ParamRefs Link::adapter_parameters() {
  ParamRefs out;
  for (auto& a : adapters_) {
    auto p = a.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<nn::LoraTarget> Link::lora_targets() const {
  auto t = codec_.lora_targets();
  for (const auto& a : adapters_) {
    auto at = a.lora_targets();
    t.insert(t.end(), at.begin(), at.end());
  }
  return t;
}

Tensor adapter_forward_p(const Link& link, const Tensor& z, std::size_t p, const nn::LoraSet* lora) {
  return link.encode(z, p, lora);
}

Tensor adapter_backward_p(const Link& link, const Tensor& s, std::size_t p, const nn::LoraSet* lora) {
  return link.decode(s, p, lora);
}

// ---------------------------------------------------------------------------

Tensor commitment_loss(const Tensor& s, const Tensor& s_hat) {
  if (s.shape() != s_hat.shape()) {
    throw TensorError("commitment_loss: shape mismatch " + to_string(s.shape()) + " vs " + to_string(s_hat.shape()));
  }
  const double symbols = static_cast<double>(s.numel() / 2);
  return scale(sum(square(sub(s, stop_gradient(s_hat)))), 1.0 / symbols);
}

Tensor soft_assign_kld(const Tensor& s, const channel::Constellation& c, double temperature) {
  Tensor p = channel::soft_assign(s, c, temperature);  // [N, K, M]
  const std::size_t M = c.size();
  Tensor q = mean_axis(reshape(p, {p.numel() / M, M}), 0);
  // sum_m q_m ln(q_m M); the offset keeps ln finite where q underflows.
  return sum(mul(q, log(add_scalar(scale(q, static_cast<double>(M)), 1e-300))));
}

Tensor latent_mse_loss(const Tensor& z, const Tensor& z_hat) {
  if (z.shape() != z_hat.shape()) {
    throw TensorError("latent_mse: shape mismatch " + to_string(z.shape()) + " vs " + to_string(z_hat.shape()));
  }
  return mean(square(sub(z_hat, z)));
}

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kLmseCml: return "lmse_cml";
    case Objective::kLmseOnly: return "lmse_only";
    case Objective::kLmseKld: return "lmse_kld";
    case Objective::kSoft2Hard: return "soft2hard";
    case Objective::kNoQuant: return "no_quant";
  }
  return "unknown";
}

Objective parse_objective(const std::string& name) {
  for (Objective o : {Objective::kLmseCml, Objective::kLmseOnly, Objective::kLmseKld, Objective::kSoft2Hard,
                      Objective::kNoQuant}) {
    if (name == objective_name(o)) return o;
  }
  throw std::invalid_argument("unknown objective '" + name + "'");
}

double anneal_temperature(const ObjectiveConfig& cfg, std::size_t epoch, std::size_t epochs) {
  if (epochs <= 1) return cfg.anneal_final;
  const double horizon = 0.9 * static_cast<double>(epochs - 1);
  const double f = std::min(1.0, static_cast<double>(epoch) / horizon);
  return cfg.anneal_start * std::pow(cfg.anneal_final / cfg.anneal_start, f);
}

Tensor shape_symbols(const Tensor& s, const channel::Constellation& c, Objective variant, double temperature,
                     const Tensor& frozen_offset) {
  switch (variant) {
    case Objective::kNoQuant: return channel::power_normalize(s);
    case Objective::kSoft2Hard: return channel::soft_quantize(s, c, temperature);
    default: return channel::quantize_ste(s, c, frozen_offset);
  }
}

namespace {

Tensor regularizer(const Tensor& s, const Tensor& s_hat, const channel::Constellation& c, const ObjectiveConfig& obj) {
  switch (obj.variant) {
    case Objective::kLmseCml: return scale(commitment_loss(s, s_hat), obj.eta_cml);
    case Objective::kLmseKld:
    case Objective::kSoft2Hard: return scale(soft_assign_kld(s, c, obj.kld_temperature), obj.kld_weight);
    default: return Tensor();
  }
}

LossParts assemble(const Tensor& z, const Tensor& z_hat, const Tensor& s, const Tensor& s_hat,
                   const channel::Constellation& c, const ObjectiveConfig& obj) {
  Tensor lmse = latent_mse_loss(z, z_hat);
  Tensor reg = regularizer(s, s_hat, c, obj);
  return {reg.defined() ? add(lmse, reg) : lmse, lmse};
}

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

}  // namespace

LossParts link_loss(const Link& link, const Tensor& z, std::size_t p, const channel::Constellation& c,
                    const ObjectiveConfig& obj, double temperature, const std::vector<channel::PhiDraw>& draws,
                    const nn::LoraSet* lora, const Tensor& frozen_offset) {
  Tensor s = link.encode(z, p, lora);
  Tensor s_hat = shape_symbols(s, c, obj.variant, temperature, frozen_offset);
  Tensor z_hat = link.decode(channel::channel_tensor(s_hat, draws), p, lora);
  return assemble(z, z_hat, s, s_hat, c, obj);
}

LossParts codec_loss(const JsccCodec& codec, const Tensor& z, const channel::Constellation& c,
                     const ObjectiveConfig& obj, double temperature, const std::vector<channel::PhiDraw>& draws,
                     const Tensor& frozen_offset) {
  Tensor s = codec.encode(z);
  Tensor s_hat = shape_symbols(s, c, obj.variant, temperature, frozen_offset);
  Tensor z_hat = codec.decode(channel::channel_tensor(s_hat, draws));
  return assemble(z, z_hat, s, s_hat, c, obj);
}

// ---------------------------------------------------------------------------

ChannelPool::ChannelPool(const channel::ChannelCondition& base, std::vector<double> snrs_db,
                         std::vector<double> spreads_s)
    : base_(base), snrs_(std::move(snrs_db)), spreads_(std::move(spreads_s)) {
  if (snrs_.empty() || spreads_.empty()) throw std::invalid_argument("channel pool needs SNR and delay-spread values");
  for (double w : spreads_) {
    channel::ChannelCondition c = base_;
    c.delay_spread_s = w;
    samplers_.emplace_back(c);
  }
}

channel::PhiDraw ChannelPool::draw_at(std::size_t snr_index, std::size_t spread_index, std::size_t K,
                                      Rng& rng) const {
  channel::ChannelCondition c = base_;
  c.snr_db = snrs_.at(snr_index);
  channel::PhiDraw d;
  d.h = samplers_.at(spread_index).sample(rng);
  d.noise_power = c.noise_power();
  d.noise = channel::complex_normal(K, d.noise_power, rng);
  return d;
}

channel::PhiDraw ChannelPool::draw(std::size_t K, Rng& rng) const {
  const std::size_t si = snrs_.size() == 1 ? 0 : rng.index(snrs_.size());
  const std::size_t wi = spreads_.size() == 1 ? 0 : rng.index(spreads_.size());
  return draw_at(si, wi, K, rng);
}

std::vector<channel::PhiDraw> ChannelPool::draw_batch(std::size_t n, std::size_t K, Rng& rng) const {
  std::vector<channel::PhiDraw> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(K, rng));
  return out;
}

namespace {

template <typename LossFn>
std::vector<double> run_training(ParamRefs params, const Tensor& latents, std::size_t K, const ObjectiveConfig& obj,
                                 const ChannelPool& pool, const JsccTrainConfig& cfg, LossFn&& loss_fn) {
  const std::size_t N = latents.size(0);
  if (N == 0) throw std::invalid_argument("JSCC training needs latents");
  nn::set_trainable(params, true);
  nn::AdamState opt(params, {cfg.lr});
  Rng rng(cfg.seed);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double temperature = anneal_temperature(obj, epoch, cfg.epochs);
    const auto order = shuffled(N, rng);
    double total = 0.0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, N - start);
      std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                    order.begin() + static_cast<long>(start + len));
      Tensor z = genmodel::gather_batch(latents, rows);
      LossParts parts = loss_fn(z, temperature, pool.draw_batch(len, K, rng));
      check_divergence(parts.total.item(), "train_jscc");
      total += parts.lmse.item() * static_cast<double>(len);
      backward(parts.total);
      nn::adam_step(opt);
    }
    history.push_back(total / static_cast<double>(N));
  }
  nn::set_trainable(params, false);
  return history;
}

}  // namespace

std::vector<double> train_jscc(Link& link, const Tensor& latents, std::size_t p, const ObjectiveConfig& obj,
                               const ChannelPool& pool, const channel::Constellation& c, const JsccTrainConfig& cfg) {
  ParamRefs params = link.parameters();
  return run_training(params, latents, link.plan().symbol_length(p), obj, pool, cfg,
                      [&](const Tensor& z, double temp, const std::vector<channel::PhiDraw>& draws) {
                        return link_loss(link, z, p, c, obj, temp, draws);
                      });
}

std::vector<double> train_codec(JsccCodec& codec, const Tensor& latents, const ObjectiveConfig& obj,
                                const ChannelPool& pool, const channel::Constellation& c, const JsccTrainConfig& cfg) {
  return run_training(codec.parameters(), latents, codec.base_symbol_length(), obj, pool, cfg,
                      [&](const Tensor& z, double temp, const std::vector<channel::PhiDraw>& draws) {
                        return codec_loss(codec, z, c, obj, temp, draws);
                      });
}

namespace {

template <typename Fn>
double evaluate_batches(const Tensor& latents, std::size_t K, const ChannelPool& pool, std::uint64_t seed, Fn&& fn) {
  const std::size_t N = latents.size(0);
  Rng rng(seed);
  double total = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < N; start += kChunk) {
    const std::size_t len = std::min(kChunk, N - start);
    Tensor z = slice(latents, 0, start, len);
    Tensor z_hat = fn(z, pool.draw_batch(len, K, rng));
    total += latent_mse_loss(z, z_hat).item() * static_cast<double>(len);
  }
  return total / static_cast<double>(N);
}

}  // namespace

double evaluate_codec(const JsccCodec& codec, const Tensor& latents, Objective variant, const ChannelPool& pool,
                      const channel::Constellation& c, std::uint64_t seed) {
  const Objective eval = variant == Objective::kNoQuant ? Objective::kNoQuant : Objective::kLmseOnly;
  return evaluate_batches(latents, codec.base_symbol_length(), pool, seed,
                          [&](const Tensor& z, const std::vector<channel::PhiDraw>& draws) {
                            Tensor s = shape_symbols(codec.encode(z), c, eval, 0.0);
                            return codec.decode(channel::channel_tensor(s, draws));
                          });
}

double evaluate_link(const Link& link, const Tensor& latents, std::size_t p, const ChannelPool& pool,
                     const channel::Constellation& c, std::uint64_t seed, const nn::LoraSet* lora) {
  return evaluate_batches(latents, link.plan().symbol_length(p), pool, seed,
                          [&](const Tensor& z, const std::vector<channel::PhiDraw>& draws) {
                            Tensor s = channel::quantize_ste(link.encode(z, p, lora), c);
                            return link.decode(channel::channel_tensor(s, draws), p, lora);
                          });
}

}  // namespace gsc::jscc
