// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/session.hpp"

#include <algorithm>
#include <string>

#include "kvprune/errors.hpp"

namespace kvprune {

int argmax_token(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

DecodeSession::DecodeSession(const Model& model, std::unique_ptr<CachePolicy> policy)
    : model_(&model), policy_(std::move(policy)) {
  if (!policy_) throw ConfigError("decode session needs a policy");
  model.config.validate();
  caches_.reserve(model.config.n_layers);
  for (std::size_t l = 0; l < model.config.n_layers; ++l) {
    caches_.emplace_back(l, model.config.cache_shape());
  }
}

bool DecodeSession::complete() const noexcept {
  return steps_taken_ >= static_cast<long>(model_->config.max_steps);
}

StepOutput DecodeSession::prefill(std::span<const int> prompt) {
  if (prefilled_) throw ConfigError("session already prefilled");
  if (prompt.empty()) throw ConfigError("prompt must contain at least one token");
  StepOutput out = forward(prompt, 0, true);
  prefilled_ = true;
  next_token_ = out.emitted_token;
  return out;
}

std::optional<StepOutput> DecodeSession::step() { return step(next_token_); }

std::optional<StepOutput> DecodeSession::step(int input_token) {
  if (!prefilled_) throw ConfigError("decode step before prefill");
  if (complete()) return std::nullopt;
  const int inputs[1] = {input_token};
  StepOutput out = forward(inputs, steps_taken_ + 1, false);
  ++steps_taken_;
  next_token_ = out.emitted_token;
  return out;
}

StepOutput DecodeSession::forward(std::span<const int> inputs, long step, bool is_prefill) {
  const ModelConfig& cfg = model_->config;
  const std::size_t d = cfg.d_model;
  const std::size_t kv_dim = cfg.kv_dim();
  const std::size_t n = inputs.size();

  for (int t : inputs) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw DomainError("token id " + std::to_string(t) + " outside the vocabulary");
    }
  }

  const auto base_position = static_cast<std::int64_t>(tokens_.size());
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto emb = std::span<const double>(model_->embedding)
                         .subspan(static_cast<std::size_t>(inputs[i]) * d, d);
    std::copy(emb.begin(), emb.end(), x.begin() + static_cast<std::ptrdiff_t>(i * d));
    kernels::add_position_encoding(base_position + static_cast<std::int64_t>(i),
                                   std::span<double>(x).subspan(i * d, d));
  }

  StepOutput out;
  out.step = step;
  out.input_token = inputs.back();
  out.layers.resize(cfg.n_layers);

  std::vector<double> h(d), q(n * d), k(kv_dim), v(kv_dim), attn(d), proj(d);
  std::vector<double> hidden(cfg.mlp_dim());
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = model_->layers[l];
    KvCacheLayer& cache = caches_[l];

    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = std::span<const double>(x).subspan(i * d, d);
      kernels::rms_norm(xi, h);
      kernels::matvec(w.wq, d, d, h, std::span<double>(q).subspan(i * d, d));
      kernels::matvec(w.wk, kv_dim, d, h, k);
      kernels::matvec(w.wv, kv_dim, d, h, v);
      const auto position = base_position + static_cast<std::int64_t>(i);
      cache.append(k, v,
                   TokenMeta{position, step,
                             is_prefill ? Provenance::kPrompt : Provenance::kGenerated});
    }

    const std::size_t key_count = cache.size();
    LayerStepOutput& layer_out = out.layers[l];
    layer_out.snapshot = AttentionSnapshot(l, step, cfg.heads_q, cfg.heads_kv, n, key_count);
    layer_out.attended_positions = cache.positions();

    std::vector<double> weights(cfg.heads_q * key_count);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t visible = key_count - n + i + 1;
      kernels::grouped_attention(std::span<const double>(q).subspan(i * d, d), cache, cfg.heads_q,
                                 visible, attn, weights);
      for (std::size_t head = 0; head < cfg.heads_q; ++head) {
        const auto src = std::span<const double>(weights).subspan(head * key_count, key_count);
        auto dst = layer_out.snapshot.row(head, i);
        std::copy(src.begin(), src.end(), dst.begin());
      }

      auto xi = std::span<double>(x).subspan(i * d, d);
      kernels::matvec(w.wo, d, d, attn, proj);
      for (std::size_t c = 0; c < d; ++c) xi[c] += proj[c];

      kernels::rms_norm(xi, h);
      kernels::matvec(w.w1, cfg.mlp_dim(), d, h, hidden);
      kernels::gelu(hidden);
      kernels::matvec(w.w2, d, cfg.mlp_dim(), hidden, proj);
      for (std::size_t c = 0; c < d; ++c) xi[c] += proj[c];
    }

    layer_out.scores = kv_head_scores(layer_out.snapshot);
    if (auto plan = policy_->observe(l, step, layer_out.scores, cache)) {
      if (!plan->keeps_everything(cache.size())) cache.compact(*plan);
    }
    layer_out.cache_len_after = cache.size();
  }

  kernels::rms_norm(std::span<const double>(x).subspan((n - 1) * d, d), h);
  out.logits.resize(cfg.vocab_size);
  kernels::matvec(model_->unembedding, cfg.vocab_size, d, h, out.logits);
  out.emitted_token = argmax_token(out.logits);

  tokens_.insert(tokens_.end(), inputs.begin(), inputs.end());
  return out;
}

}  // namespace kvprune
