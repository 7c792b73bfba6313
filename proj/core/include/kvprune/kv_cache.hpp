// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kvprune/sparsity.hpp"

namespace kvprune {

enum class Provenance { kPrompt, kGenerated };

struct TokenMeta {
  std::int64_t original_position = 0;
  long birth_step = 0;
  Provenance provenance = Provenance::kPrompt;
};

enum class RetentionLabel { kSink, kRecent, kSalient, kAll };

std::string_view to_string(RetentionLabel label);

/// Cache slots that survive a pruning round, sorted ascending and unique.
struct RetentionPlan {
  std::vector<std::size_t> keep;
  std::vector<RetentionLabel> labels;  // parallel to `keep`

  static RetentionPlan keep_all(std::size_t cache_len);

  std::size_t size() const noexcept { return keep.size(); }
  bool keeps_everything(std::size_t cache_len) const noexcept { return keep.size() == cache_len; }

  // Throws DomainError if `keep` is unsorted, duplicated, or out of range.
  void validate(std::size_t cache_len) const;
};

struct CacheShape {
  std::size_t heads_kv = 1;
  std::size_t head_dim = 1;

  std::size_t scalars_per_entry() const noexcept { return heads_kv * head_dim; }
};

/// One layer's KV cache: key/value payload, token metadata, and the score
/// state that eviction policies accumulate. All four sequences stay the same
/// length and entries stay ordered by original position.
///
/// A cache built with `store_payload = false` keeps only metadata and scores;
/// trace replay uses it because recorded traces carry no key/value tensors.
/// Memory accounting is unaffected by that flag.
class KvCacheLayer {
 public:
  KvCacheLayer(std::size_t layer, CacheShape shape, bool store_payload = true);

  std::size_t layer() const noexcept { return layer_; }
  const CacheShape& shape() const noexcept { return shape_; }
  bool stores_payload() const noexcept { return store_payload_; }

  std::size_t size() const noexcept { return meta_.size(); }
  bool empty() const noexcept { return meta_.empty(); }

  /// Appends one token. The score slot for it starts at 0.
  /// Throws ConfigError on a dimension mismatch and DomainError if the
  /// position does not exceed the last retained one.
  void append(std::span<const double> key, std::span<const double> value, const TokenMeta& meta);

  /// Keeps exactly the planned slots in their original order. Scores of
  /// survivors are carried over untouched. Empty plans are rejected.
  void compact(const RetentionPlan& plan);

  /// Key for slot `index`, laid out [kv_head][head_dim].
  std::span<const double> key(std::size_t index) const;
  std::span<const double> value(std::size_t index) const;

  const std::vector<TokenMeta>& meta() const noexcept { return meta_; }
  std::vector<std::int64_t> positions() const;

  const TokenScoreVector& scores() const noexcept { return scores_; }
  void set_scores(TokenScoreVector scores);

 private:
  std::size_t layer_;
  CacheShape shape_;
  bool store_payload_;
  std::vector<double> keys_;
  std::vector<double> values_;
  std::vector<TokenMeta> meta_;
  TokenScoreVector scores_;
};

/// length * 2 (K and V) * heads_kv * head_dim * bytes_per_scalar.
std::size_t memory_bytes(const KvCacheLayer& cache, std::size_t bytes_per_scalar);

}  // namespace kvprune
