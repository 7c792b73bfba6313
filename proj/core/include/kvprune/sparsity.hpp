// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kvprune {

/// Importance of each key position in a layer's cache; index i is cache slot i.
using TokenScoreVector = std::vector<double>;

/// Attention weights for one layer at one step, batch size fixed to 1.
///
/// Weights are stored head-major: for query head h and query row q the row
/// over the K current keys starts at `((h * query_rows) + q) * key_count`.
/// Decode steps carry one query row per head; a prefill snapshot carries one
/// row per prompt token.
class AttentionSnapshot {
 public:
  AttentionSnapshot() = default;
  AttentionSnapshot(std::size_t layer, long step, std::size_t heads_q, std::size_t heads_kv,
                    std::size_t query_rows, std::size_t key_count);

  std::size_t layer() const noexcept { return layer_; }
  long step() const noexcept { return step_; }
  std::size_t heads_q() const noexcept { return heads_q_; }
  std::size_t heads_kv() const noexcept { return heads_kv_; }
  std::size_t query_rows() const noexcept { return query_rows_; }
  std::size_t key_count() const noexcept { return key_count_; }

  std::span<double> row(std::size_t head, std::size_t query);
  std::span<const double> row(std::size_t head, std::size_t query) const;

  std::span<const double> weights() const noexcept { return weights_; }

  /// Throws DomainError on negative or non-finite entries, ConfigError on a
  /// head count that is not a multiple of the KV head count.
  void validate() const;

 private:
  std::size_t layer_ = 0;
  long step_ = 0;
  std::size_t heads_q_ = 0;
  std::size_t heads_kv_ = 0;
  std::size_t query_rows_ = 0;
  std::size_t key_count_ = 0;
  std::vector<double> weights_;
};

/// Hoyer sparsity (sqrt(n) - |a|_1/|a|_2) / (sqrt(n) - 1).
///
/// 0 for uniform vectors, 1 for one-hot vectors, invariant to positive
/// scaling. Rejects n < 2, negative entries, and the zero vector.
double hoyer_sparsity(std::span<const double> a);

/// Sums attention onto each key over query heads and query rows.
/// Accumulation order is head-major, then query row, in 64-bit floats.
TokenScoreVector aggregate_token_scores(const AttentionSnapshot& snapshot);

/// Same scores, accumulated group by group over the KV heads that query heads
/// share. No key tensor is expanded; heads within a KV group are contiguous,
/// so the summation order (and therefore every bit of the result) matches
/// aggregate_token_scores over the explicitly repeated layout.
TokenScoreVector kv_head_scores(const AttentionSnapshot& snapshot);

/// Hoyer sparsity of a layer's aggregated score vector.
double layer_sparsity(const TokenScoreVector& scores);

}  // namespace kvprune
