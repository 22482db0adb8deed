// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gsc/rng.hpp"
#include "gsc/tensor.hpp"

namespace gsc::nn {

// Non-owning reference to a parameter slot inside a model. Valid only while
// the model is neither moved nor destroyed; collect right before use.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};
using ParamRefs = std::vector<ParamRef>;

void set_trainable(const ParamRefs& params, bool trainable);
// Replace every referenced tensor by an independent copy.
void deep_copy(const ParamRefs& params);
// Flat copy of all parameter values, for bit-exact freeze checks.
std::vector<double> snapshot(const ParamRefs& params);

// ---------------------------------------------------------------------------
// Low-rank adaptation

// Additive update delta = B * A for a weight viewed as a [rows x cols] matrix.
struct LoraAdapter {
  Tensor B;  // [rows x rank], zero at creation
  Tensor A;  // [rank x cols], N(0, 0.02^2) at creation
  std::size_t rank = 0;

  static LoraAdapter create(std::size_t rows, std::size_t cols, std::size_t rank, Rng& rng);
  Tensor delta() const { return matmul(B, A); }
};

// A weight matrix eligible for adaptation, named by its owning layer.
struct LoraTarget {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

// Named collection of adapters; layers look up their own name at forward time.
class LoraSet {
 public:
  static LoraSet create(const std::vector<LoraTarget>& targets, std::size_t rank, Rng& rng);

  void add(const std::string& name, LoraAdapter adapter);
  const LoraAdapter* find(const std::string& name) const;
  bool empty() const { return adapters_.empty(); }
  std::size_t size() const { return adapters_.size(); }
  std::size_t parameter_count() const;
  ParamRefs parameters();
  LoraSet clone() const;

 private:
  std::map<std::string, LoraAdapter> adapters_;
};

// ---------------------------------------------------------------------------
// Layers

class Dense {
 public:
  Dense() = default;
  Dense(std::string name, std::size_t in, std::size_t out, Rng& rng);

  // x: [..., in] -> [..., out]; uses W + B*A when lora holds an adapter for this layer.
  Tensor forward(const Tensor& x, const LoraSet* lora = nullptr) const;
  Tensor effective_weight(const LoraSet* lora) const;
  LoraTarget lora_target() const { return {name_, out_, in_}; }
  void collect(ParamRefs& out);
  const std::string& name() const { return name_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

 private:
  std::string name_;
  std::size_t in_ = 0, out_ = 0;
};

// (W + B*A) x + bias; the base weight is not modified.
Tensor lora_apply(const Dense& layer, const LoraAdapter& adapter, const Tensor& x);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng);

  Tensor forward(const Tensor& x, const LoraSet* lora = nullptr) const;
  // Weight viewed as [out_ch x in_ch*k*k].
  LoraTarget lora_target() const { return {name_, out_, in_ * k_ * k_}; }
  void collect(ParamRefs& out);
  const std::string& name() const { return name_; }
  std::size_t kernel() const { return k_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]

 private:
  std::string name_;
  std::size_t in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                  std::size_t padding, Rng& rng);

  Tensor forward(const Tensor& x, const LoraSet* lora = nullptr) const;
  // Weight viewed as [in_ch x out_ch*k*k].
  LoraTarget lora_target() const { return {name_, in_, out_ * k_ * k_}; }
  void collect(ParamRefs& out);
  const std::string& name() const { return name_; }

  Tensor weight;  // [in, out, k, k]
  Tensor bias;    // [out]

 private:
  std::string name_;
  std::size_t in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

// ---------------------------------------------------------------------------
// Prompts

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  std::size_t id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(std::size_t id) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::vector<std::size_t> tokenize(std::string_view text, const Vocab& vocab);
std::string detokenize(const std::vector<std::size_t>& tokens, const Vocab& vocab);

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::string name, std::size_t vocab_size, std::size_t dim, Rng& rng);

  // [L x dim]
  Tensor lookup(const std::vector<std::size_t>& tokens) const;
  void collect(ParamRefs& out);
  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return vocab_; }

  Tensor table;  // [vocab x dim]

 private:
  std::string name_;
  std::size_t vocab_ = 0, dim_ = 0;
};

// Synthetic token with a trainable embedding.
struct MetaWord {
  Tensor embedding;  // [dim]

  // N(0, variance) init; the default variance is 0.02.
  static MetaWord init(std::size_t dim, Rng& rng, double variance = 0.02);
};

// Row 0 is the metaword, rows 1..L the original sequence.
Tensor prepend_metaword(const MetaWord& metaword, const Tensor& embedded_prompt);

// Interleaved sin/cos at frequencies 10000^(-2i/dim): e[2i] = sin(t w_i), e[2i+1] = cos(t w_i).
Tensor sinusoidal_embed(std::size_t t, std::size_t dim);
// [N x dim], one row per timestep.
Tensor sinusoidal_embed_batch(const std::vector<std::size_t>& timesteps, std::size_t dim);

// Single-head cross-attention with learned Q/K/V/output projections.
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(std::string name, std::size_t query_dim, std::size_t context_dim, std::size_t attn_dim, Rng& rng);
  // Projections set to identity with zero bias (requires equal dims).
  static CrossAttention identity(std::string name, std::size_t dim);

  // queries: [B, n, query_dim], context: [B, m, context_dim] -> [B, n, query_dim]
  Tensor forward(const Tensor& queries, const Tensor& context, const LoraSet* lora = nullptr) const;
  void collect(ParamRefs& out);
  std::vector<LoraTarget> lora_targets() const;

  Dense q, k, v, o;

 private:
  std::size_t attn_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamState(const ParamRefs& params, AdamConfig config);

  AdamConfig config;
  std::size_t step_count = 0;
  std::vector<std::string> names;
  std::vector<Tensor> params;  // shared handles
  std::vector<std::vector<double>> m, v;
};

// Bias-corrected Adam update of every parameter, then zero the gradients.
void adam_step(AdamState& state);
void zero_grad(AdamState& state);

}  // namespace gsc::nn
