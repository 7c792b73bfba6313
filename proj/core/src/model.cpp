// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kvprune/errors.hpp"
#include "kvprune/rng.hpp"

namespace kvprune {

void ModelConfig::validate() const {
  if (n_layers == 0) throw ConfigError("model needs at least one layer");
  if (heads_q == 0 || heads_kv == 0) throw ConfigError("head counts must be positive");
  if (d_model == 0 || d_model % heads_q != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads_q (" +
                      std::to_string(heads_q) + ")");
  }
  if (heads_q % heads_kv != 0) {
    throw ConfigError("heads_q (" + std::to_string(heads_q) + ") must be divisible by heads_kv (" +
                      std::to_string(heads_kv) + ")");
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for sin/cos positions");
  if (vocab_size < 2) throw ConfigError("vocabulary needs at least two tokens");
}

namespace {

std::vector<double> fill(SplitMix64& rng, std::size_t count, double bound) {
  std::vector<double> out(count);
  for (double& w : out) w = rng.uniform(-bound, bound);
  return out;
}

}  // namespace

Model init_model(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  SplitMix64 rng(config.seed);

  Model model;
  model.config = config;
  model.embedding = fill(rng, config.vocab_size * d, bound);
  model.layers.reserve(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights w;
    w.wq = fill(rng, d * d, bound);
    w.wk = fill(rng, config.kv_dim() * d, bound);
    w.wv = fill(rng, config.kv_dim() * d, bound);
    w.wo = fill(rng, d * d, bound);
    w.w1 = fill(rng, config.mlp_dim() * d, bound);
    w.w2 = fill(rng, d * config.mlp_dim(), bound);
    model.layers.push_back(std::move(w));
  }
  model.unembedding = fill(rng, config.vocab_size * d, bound);
  return model;
}

std::vector<int> make_prompt(std::uint64_t seed, std::size_t length, std::size_t vocab_size) {
  if (vocab_size == 0) throw ConfigError("vocabulary is empty");
  SplitMix64 rng(seed ^ 0x5DEECE66DULL);
  std::vector<int> prompt(length);
  for (int& t : prompt) t = static_cast<int>(rng.next() % vocab_size);
  return prompt;
}

namespace kernels {

void rms_norm(std::span<const double> in, std::span<double> out) {
  double sq = 0.0;
  for (double x : in) sq += x * x;
  const double scale = 1.0 / std::sqrt(sq / static_cast<double>(in.size()) + 1e-5);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * scale;
}

void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void add_position_encoding(std::int64_t position, std::span<double> x) {
  const double d = static_cast<double>(x.size());
  for (std::size_t i = 0; i + 1 < x.size(); i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
    const double angle = static_cast<double>(position) * freq;
    x[i] += std::sin(angle);
    x[i + 1] += std::cos(angle);
  }
}

void gelu(std::span<double> x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  for (double& v : x) v = 0.5 * v * (1.0 + std::tanh(kC * (v + 0.044715 * v * v * v)));
}

void grouped_attention(std::span<const double> queries, const KvCacheLayer& cache,
                       std::size_t heads_q, std::size_t visible, std::span<double> out,
                       std::span<double> weights) {
  const std::size_t heads_kv = cache.shape().heads_kv;
  const std::size_t dh = cache.shape().head_dim;
  const std::size_t k = cache.size();
  if (heads_q % heads_kv != 0) throw ConfigError("query heads must be a multiple of KV heads");
  if (visible == 0 || visible > k) throw DomainError("attention needs at least one visible key");
  const std::size_t group = heads_q / heads_kv;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t h = 0; h < heads_q; ++h) {
    const std::size_t g = h / group;
    const double* q = queries.data() + h * dh;
    double* w = weights.data() + h * k;

    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < visible; ++j) {
      const double* key = cache.key(j).data() + g * dh;
      double dot = 0.0;
      for (std::size_t i = 0; i < dh; ++i) dot += q[i] * key[i];
      w[j] = dot * scale;
      peak = std::max(peak, w[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      w[j] = std::exp(w[j] - peak);
      total += w[j];
    }
    for (std::size_t j = 0; j < visible; ++j) w[j] /= total;
    std::fill(w + visible, w + k, 0.0);

    double* o = out.data() + h * dh;
    for (std::size_t j = 0; j < visible; ++j) {
      const double* value = cache.value(j).data() + g * dh;
      for (std::size_t i = 0; i < dh; ++i) o[i] += w[j] * value[i];
    }
  }
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : logits) peak = std::max(peak, x);
  double total = 0.0;
  for (double x : logits) total += std::exp(x - peak);
  const double log_z = peak + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

}  // namespace kernels

}  // namespace kvprune
