// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kvprune/kv_cache.hpp"
#include "kvprune/sparsity.hpp"

namespace kvprune {

enum class PolicyKind { kFull, kH2O, kStreaming, kPyramid, kLethe };

std::string_view to_string(PolicyKind kind);
/// Accepts "full", "h2o", "streaming", "pyramid", "lethe".
PolicyKind parse_policy_kind(std::string_view name);

struct LetheConfig {
  double tau = 400.0;             // sparse ratio, must exceed 1
  std::size_t segments = 10;      // D
  std::size_t sink_len = 4;
  double recent_ratio = 0.3;      // fraction of the cache kept as the recent window
  double gamma = 0.9;             // score decay per step
  std::size_t evict_threshold_init = 1024;

  void validate() const;
};

struct BaselineConfig {
  std::size_t budget = 128;
  std::size_t sink_len = 4;
  std::size_t window = 64;
  std::size_t pyramid_top_budget = 64;
  std::size_t pyramid_bottom_budget = 192;

  void validate(PolicyKind kind) const;
};

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kLethe;
  LetheConfig lethe;
  BaselineConfig baseline;

  void validate() const;
};

/// Everything a policy decided in one pruning round, for diagnostics and
/// contract checks. Slots refer to the cache before compaction.
struct PruneEvent {
  std::size_t layer = 0;
  long step = 0;
  std::size_t cache_len = 0;
  std::size_t recent = 0;
  bool searched = false;  // false when the round was skipped before the breakpoint search
  std::optional<std::size_t> breakpoint;
  std::size_t threshold_before = 0;
  std::size_t threshold_after = 0;
  std::vector<std::size_t> salient;  // before deduplication against sink/recent
  RetentionPlan plan;
};

using PruneEventSink = std::function<void(const PruneEvent&)>;

/// Merges the three retention sources into one plan. Overlaps keep the
/// highest-priority label: sink, then recent, then salient.
RetentionPlan merge_retention(std::size_t cache_len, std::span<const std::size_t> sink,
                              std::span<const std::size_t> recent,
                              std::span<const std::size_t> salient);

/// Indices ordered by descending score; equal scores keep the lower index first.
std::vector<std::size_t> rank_by_score(std::span<const double> scores);

/// Per-layer eviction policy. One instance serves every layer of a session;
/// layer state is indexed by layer and layers never share mutable state.
class CachePolicy {
 public:
  virtual ~CachePolicy() = default;

  virtual PolicyKind kind() const = 0;

  /// Folds this step's aggregated scores into `cache`'s score state and
  /// returns a plan when the cache should shrink. `step_scores` covers every
  /// slot of `cache`, including tokens appended this step.
  virtual std::optional<RetentionPlan> observe(std::size_t layer, long step,
                                               const TokenScoreVector& step_scores,
                                               KvCacheLayer& cache) = 0;

  void set_event_sink(PruneEventSink sink) { sink_ = std::move(sink); }

 protected:
  void emit(const PruneEvent& event) const {
    if (sink_) sink_(event);
  }

 private:
  PruneEventSink sink_;
};

std::unique_ptr<CachePolicy> make_policy(const PolicyConfig& config, std::size_t n_layers);

}  // namespace kvprune
