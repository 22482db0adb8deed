// SPDX-License-Identifier: Apache-2.0
#include "gsc/nn.hpp"

#include <cmath>
#include <sstream>

namespace gsc::nn {

void set_trainable(const ParamRefs& params, bool trainable) {
  for (const auto& p : params) {
    p.tensor->set_requires_grad(trainable);
    p.tensor->zero_grad();
  }
}

void deep_copy(const ParamRefs& params) {
  for (const auto& p : params) *p.tensor = p.tensor->clone();
}

std::vector<double> snapshot(const ParamRefs& params) {
  std::vector<double> out;
  for (const auto& p : params) {
    const auto d = p.tensor->data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

LoraAdapter LoraAdapter::create(std::size_t rows, std::size_t cols, std::size_t rank, Rng& rng) {
  if (rank == 0 || rank > std::min(rows, cols)) {
    throw std::invalid_argument("LoRA rank " + std::to_string(rank) + " invalid for a " + std::to_string(rows) +
                                "x" + std::to_string(cols) + " matrix");
  }
  LoraAdapter a;
  a.rank = rank;
  a.B = Tensor::zeros({rows, rank}, true);
  a.A = Tensor::randn({rank, cols}, rng, 0.02, true);
  return a;
}

LoraSet LoraSet::create(const std::vector<LoraTarget>& targets, std::size_t rank, Rng& rng) {
  LoraSet set;
  for (const auto& t : targets) {
    const std::size_t r = std::min(rank, std::min(t.rows, t.cols));
    set.add(t.name, LoraAdapter::create(t.rows, t.cols, r, rng));
  }
  return set;
}

void LoraSet::add(const std::string& name, LoraAdapter adapter) { adapters_[name] = std::move(adapter); }

const LoraAdapter* LoraSet::find(const std::string& name) const {
  auto it = adapters_.find(name);
  return it == adapters_.end() ? nullptr : &it->second;
}

std::size_t LoraSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, a] : adapters_) n += a.A.numel() + a.B.numel();
  return n;
}

ParamRefs LoraSet::parameters() {
  ParamRefs out;
  for (auto& [name, a] : adapters_) {
    out.push_back({name + ".lora_B", &a.B});
    out.push_back({name + ".lora_A", &a.A});
  }
  return out;
}

LoraSet LoraSet::clone() const {
  LoraSet copy = *this;
  deep_copy(copy.parameters());
  return copy;
}

// ---------------------------------------------------------------------------

namespace {

Tensor with_lora(const Tensor& weight, const std::string& name, const LoraSet* lora) {
  if (lora == nullptr) return weight;
  const LoraAdapter* a = lora->find(name);
  if (a == nullptr) return weight;
  return add(weight, reshape(a->delta(), weight.shape()));
}

}  // namespace

Dense::Dense(std::string name, std::size_t in, std::size_t out, Rng& rng)
    : weight(Tensor::randn({out, in}, rng, 1.0 / std::sqrt(static_cast<double>(in)))),
      bias(Tensor::zeros({out})),
      name_(std::move(name)),
      in_(in),
      out_(out) {}

Tensor Dense::effective_weight(const LoraSet* lora) const { return with_lora(weight, name_, lora); }

Tensor Dense::forward(const Tensor& x, const LoraSet* lora) const {
  if (x.dim() == 0 || x.shape().back() != in_) {
    throw TensorError(name_ + ": input " + to_string(x.shape()) + " does not end in " + std::to_string(in_));
  }
  return add(matmul(x, transpose(effective_weight(lora))), bias);
}

void Dense::collect(ParamRefs& out) {
  out.push_back({name_ + ".weight", &weight});
  out.push_back({name_ + ".bias", &bias});
}

Tensor lora_apply(const Dense& layer, const LoraAdapter& adapter, const Tensor& x) {
  const Shape expect{layer.out_features(), layer.in_features()};
  if (adapter.B.shape().at(0) != expect[0] || adapter.A.shape().at(1) != expect[1]) {
    throw TensorError("lora_apply: adapter " + to_string(adapter.B.shape()) + "x" + to_string(adapter.A.shape()) +
                      " does not match layer " + to_string(expect));
  }
  return add(matmul(x, transpose(add(layer.weight, adapter.delta()))), layer.bias);
}

Conv2d::Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
               std::size_t padding, Rng& rng)
    : weight(Tensor::randn({out_ch, in_ch, kernel, kernel}, rng,
                           1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel)))),
      bias(Tensor::zeros({out_ch})),
      name_(std::move(name)),
      in_(in_ch),
      out_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(padding) {}

Tensor Conv2d::forward(const Tensor& x, const LoraSet* lora) const {
  return conv2d(x, with_lora(weight, name_, lora), bias, stride_, pad_);
}

void Conv2d::collect(ParamRefs& out) {
  out.push_back({name_ + ".weight", &weight});
  out.push_back({name_ + ".bias", &bias});
}

ConvTranspose2d::ConvTranspose2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                                 std::size_t stride, std::size_t padding, Rng& rng)
    : weight(Tensor::randn({in_ch, out_ch, kernel, kernel}, rng,
                           1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel) /
                                           static_cast<double>(stride * stride)))),
      bias(Tensor::zeros({out_ch})),
      name_(std::move(name)),
      in_(in_ch),
      out_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(padding) {}

Tensor ConvTranspose2d::forward(const Tensor& x, const LoraSet* lora) const {
  return conv_transpose2d(x, with_lora(weight, name_, lora), bias, stride_, pad_);
}

void ConvTranspose2d::collect(ParamRefs& out) {
  out.push_back({name_ + ".weight", &weight});
  out.push_back({name_ + ".bias", &bias});
}

// ---------------------------------------------------------------------------

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) throw std::invalid_argument("duplicate vocabulary word: " + words_[i]);
  }
}

std::size_t Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw std::invalid_argument("unknown word: " + std::string(word));
  return it->second;
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

const std::string& Vocab::word(std::size_t id) const {
  if (id >= words_.size()) throw std::out_of_range("token index " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

std::vector<std::size_t> tokenize(std::string_view text, const Vocab& vocab) {
  std::istringstream is{std::string(text)};
  std::vector<std::size_t> out;
  std::vector<std::string> unknown;
  for (std::string w; is >> w;) {
    if (vocab.contains(w)) {
      out.push_back(vocab.id(w));
    } else {
      unknown.push_back(w);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown words:";
    for (const auto& w : unknown) msg += " " + w;
    throw std::invalid_argument(msg);
  }
  return out;
}

std::string detokenize(const std::vector<std::size_t>& tokens, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.word(tokens[i]);
  }
  return out;
}

EmbeddingTable::EmbeddingTable(std::string name, std::size_t vocab_size, std::size_t dim, Rng& rng)
    : table(Tensor::randn({vocab_size, dim}, rng, 1.0)), name_(std::move(name)), vocab_(vocab_size), dim_(dim) {}

Tensor EmbeddingTable::lookup(const std::vector<std::size_t>& tokens) const {
  if (tokens.empty()) return Tensor::zeros({0, dim_});
  return index_rows(table, tokens);
}

void EmbeddingTable::collect(ParamRefs& out) { out.push_back({name_ + ".table", &table}); }

MetaWord MetaWord::init(std::size_t dim, Rng& rng, double variance) {
  return MetaWord{Tensor::randn({dim}, rng, std::sqrt(variance), true)};
}

Tensor prepend_metaword(const MetaWord& metaword, const Tensor& embedded_prompt) {
  const std::size_t dim = metaword.embedding.numel();
  if (embedded_prompt.dim() != 2 || embedded_prompt.size(1) != dim) {
    throw TensorError("prepend_metaword: metaword dim " + std::to_string(dim) + " vs prompt " +
                      to_string(embedded_prompt.shape()));
  }
  Tensor head = reshape(metaword.embedding, {1, dim});
  if (embedded_prompt.size(0) == 0) return head;
  return concat({head, embedded_prompt}, 0);
}

Tensor sinusoidal_embed(std::size_t t, std::size_t dim) {
  Tensor e = sinusoidal_embed_batch({t}, dim);
  return reshape(e, {dim});
}

Tensor sinusoidal_embed_batch(const std::vector<std::size_t>& timesteps, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_embed: dim must be even, got " + std::to_string(dim));
  std::vector<double> out(timesteps.size() * dim);
  for (std::size_t r = 0; r < timesteps.size(); ++r) {
    const double t = static_cast<double>(timesteps[r]);
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      out[r * dim + 2 * i] = std::sin(t * w);
      out[r * dim + 2 * i + 1] = std::cos(t * w);
    }
  }
  return Tensor({timesteps.size(), dim}, std::move(out));
}

// ---------------------------------------------------------------------------

CrossAttention::CrossAttention(std::string name, std::size_t query_dim, std::size_t context_dim,
                               std::size_t attn_dim, Rng& rng)
    : q(name + ".q", query_dim, attn_dim, rng),
      k(name + ".k", context_dim, attn_dim, rng),
      v(name + ".v", context_dim, attn_dim, rng),
      o(name + ".o", attn_dim, query_dim, rng),
      attn_dim_(attn_dim) {}

CrossAttention CrossAttention::identity(std::string name, std::size_t dim) {
  Rng rng(0);
  CrossAttention a(std::move(name), dim, dim, dim, rng);
  std::vector<double> eye(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  for (Dense* d : {&a.q, &a.k, &a.v, &a.o}) d->weight = Tensor({dim, dim}, eye);
  return a;
}

Tensor CrossAttention::forward(const Tensor& queries, const Tensor& context, const LoraSet* lora) const {
  if (queries.dim() != 3 || context.dim() != 3 || queries.size(0) != context.size(0)) {
    throw TensorError("cross_attention: shape mismatch " + to_string(queries.shape()) + " vs " +
                      to_string(context.shape()));
  }
  Tensor Q = q.forward(queries, lora);
  Tensor K = k.forward(context, lora);
  Tensor V = v.forward(context, lora);
  Tensor scores = scale(matmul(Q, transpose(K)), 1.0 / std::sqrt(static_cast<double>(attn_dim_)));
  return o.forward(matmul(softmax(scores), V), lora);
}

void CrossAttention::collect(ParamRefs& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
}

std::vector<LoraTarget> CrossAttention::lora_targets() const {
  return {q.lora_target(), k.lora_target(), v.lora_target(), o.lora_target()};
}

// ---------------------------------------------------------------------------

AdamState::AdamState(const ParamRefs& refs, AdamConfig cfg) : config(cfg) {
  for (const auto& r : refs) {
    names.push_back(r.name);
    params.push_back(*r.tensor);
    m.emplace_back(r.tensor->numel(), 0.0);
    v.emplace_back(r.tensor->numel(), 0.0);
  }
}

void adam_step(AdamState& s) {
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    if (!s.params[i].has_grad()) continue;
    for (double g : s.params[i].grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient for parameter " + s.names[i]);
    }
  }
  ++s.step_count;
  const auto& c = s.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step_count));
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    Tensor& p = s.params[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      w[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
  }
  zero_grad(s);
}

void zero_grad(AdamState& s) {
  for (auto& p : s.params) p.zero_grad();
}

}  // namespace gsc::nn
