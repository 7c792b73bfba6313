// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "kvprune/kv_cache.hpp"
#include "kvprune/model.hpp"
#include "kvprune/policy.hpp"
#include "kvprune/sparsity.hpp"

namespace kvprune {

struct LayerStepOutput {
  AttentionSnapshot snapshot;
  TokenScoreVector scores;  // kv_head_scores(snapshot)
  std::vector<std::int64_t> attended_positions;  // cache positions the snapshot covers
  std::size_t cache_len_after = 0;  // after the policy ran
};

struct StepOutput {
  long step = 0;  // 0 is the prefill
  int input_token = 0;
  int emitted_token = 0;
  std::vector<double> logits;
  std::vector<LayerStepOutput> layers;
};

/// One sequence decoding against a model with a per-layer eviction policy.
///
/// Every layer sees the same token stream but keeps its own retained set.
/// Positions are encoded from each token's original position, so compaction
/// never shifts the positions of survivors.
class DecodeSession {
 public:
  DecodeSession(const Model& model, std::unique_ptr<CachePolicy> policy);

  /// Runs the prompt through every layer with causal attention, seeds the
  /// policy with the full prefill snapshot, and picks the first token.
  StepOutput prefill(std::span<const int> prompt);

  /// Consumes next_token() and decodes one step. Empty once max_steps
  /// decode steps have run.
  std::optional<StepOutput> step();

  /// Teacher-forced step: consumes `input_token` instead of next_token().
  std::optional<StepOutput> step(int input_token);

  bool complete() const noexcept;
  int next_token() const noexcept { return next_token_; }
  long steps_taken() const noexcept { return steps_taken_; }
  const std::vector<int>& tokens() const noexcept { return tokens_; }

  std::size_t layer_count() const noexcept { return caches_.size(); }
  const KvCacheLayer& cache(std::size_t layer) const { return caches_.at(layer); }
  CachePolicy& policy() noexcept { return *policy_; }

 private:
  StepOutput forward(std::span<const int> inputs, long step, bool is_prefill);

  const Model* model_;
  std::unique_ptr<CachePolicy> policy_;
  std::vector<KvCacheLayer> caches_;
  std::vector<int> tokens_;
  int next_token_ = 0;
  long steps_taken_ = 0;
  bool prefilled_ = false;
};

/// Greedy argmax; ties go to the lower id.
int argmax_token(std::span<const double> logits);

}  // namespace kvprune
