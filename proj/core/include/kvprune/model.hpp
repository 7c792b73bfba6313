// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kvprune/kv_cache.hpp"

namespace kvprune {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t heads_q = 8;
  std::size_t heads_kv = 2;
  std::size_t vocab_size = 256;
  std::size_t max_steps = 4096;
  std::uint64_t seed = 0;

  std::size_t d_head() const noexcept { return heads_q == 0 ? 0 : d_model / heads_q; }
  std::size_t kv_dim() const noexcept { return heads_kv * d_head(); }
  std::size_t mlp_dim() const noexcept { return 4 * d_model; }
  std::size_t group_size() const noexcept { return heads_kv == 0 ? 0 : heads_q / heads_kv; }
  CacheShape cache_shape() const noexcept { return {heads_kv, d_head()}; }

  void validate() const;
};

// Row-major matrices, [out][in].
struct LayerWeights {
  std::vector<double> wq;  // d_model x d_model
  std::vector<double> wk;  // kv_dim x d_model
  std::vector<double> wv;  // kv_dim x d_model
  std::vector<double> wo;  // d_model x d_model
  std::vector<double> w1;  // mlp_dim x d_model
  std::vector<double> w2;  // d_model x mlp_dim
};

/// Desk-scale pre-norm decoder. Norms carry no learned gain.
struct Model {
  ModelConfig config;
  std::vector<double> embedding;  // vocab x d_model
  std::vector<LayerWeights> layers;
  std::vector<double> unembedding;  // vocab x d_model
};

/// Fills every matrix from one SplitMix64 stream seeded with config.seed,
/// uniform in [-1/sqrt(d_model), +1/sqrt(d_model)). Order: embedding, then
/// per layer wq, wk, wv, wo, w1, w2, then unembedding, each row-major.
Model init_model(const ModelConfig& config);

/// Prompt token ids drawn from SplitMix64(seed ^ 0x5DEECE66D), id = next() % vocab.
std::vector<int> make_prompt(std::uint64_t seed, std::size_t length, std::size_t vocab_size);

namespace kernels {

void rms_norm(std::span<const double> in, std::span<double> out);

// y = W x with W rows x cols, row-major.
void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> y);

/// sin/cos absolute position encoding: pe[2i] = sin(p / 10000^(2i/d)),
/// pe[2i+1] = cos(p / 10000^(2i/d)).
void add_position_encoding(std::int64_t position, std::span<double> x);

void gelu(std::span<double> x);

/// Softmax attention of `heads_q` query heads over the first `visible` slots
/// of `cache`; head h reads KV head h / (heads_q / heads_kv). Keys are never
/// repeated. `weights` receives heads_q rows of length cache.size(), zero
/// beyond `visible`; `out` receives heads_q x head_dim.
void grouped_attention(std::span<const double> queries, const KvCacheLayer& cache,
                       std::size_t heads_q, std::size_t visible, std::span<double> out,
                       std::span<double> weights);

/// Numerically stable log-softmax.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace kernels

}  // namespace kvprune
