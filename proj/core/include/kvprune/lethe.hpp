// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kvprune/policy.hpp"

namespace kvprune {

// The decayed score vector s_t lives in KvCacheLayer::scores() so that it
// follows compaction; this struct carries the rest of a layer's state.
struct LetheLayerState {
  std::size_t evict_threshold = 0;
  long last_prune_step = -1;
};

/// s_t = gamma * s_{t-1} + step_scores. `previous` is zero-padded at the tail
/// for tokens that entered the cache since the last update.
TokenScoreVector rasr_update(std::span<const double> previous,
                             std::span<const double> step_scores, double gamma);

/// True iff the cache has grown past the layer's eviction threshold.
bool should_prune(const LetheLayerState& state, std::size_t cache_len);

/// Sorts scores descending and probes cut points floor(K*d/D), d = 1..D-1.
/// Returns the first cut whose value is within a factor `tau` of the top
/// score. A zero at a probed cut fails that cut.
std::optional<std::size_t> find_breakpoint(std::span<const double> scores, std::size_t segments,
                                           double tau);

/// Same search over values already sorted in descending order.
std::optional<std::size_t> find_breakpoint_sorted(std::span<const double> sorted_desc,
                                                  std::size_t segments, double tau);

/// ceil(ratio * cache_len), robust to the representation error in ratios
/// such as 0.3.
std::size_t recent_window(double ratio, std::size_t cache_len);

struct LethePlan {
  RetentionPlan plan;
  LetheLayerState state;
  bool searched = false;
  std::optional<std::size_t> breakpoint;
  std::size_t recent = 0;
  std::vector<std::size_t> salient;
};

/// One segmented shrinking round over a layer's scores.
///
/// With a breakpoint b the plan keeps sink, the last ceil(r_r * K) slots and
/// the top-b scored slots, and the threshold becomes max(L, b + r). Without
/// one the plan keeps everything and the threshold doubles. Caches no longer
/// than sink + recent window, or shorter than D, come back unchanged.
LethePlan plan_retention(const LetheLayerState& state, std::span<const double> scores,
                         std::size_t cache_len, const LetheConfig& config);

class LethePolicy final : public CachePolicy {
 public:
  LethePolicy(const LetheConfig& config, std::size_t n_layers);

  PolicyKind kind() const override { return PolicyKind::kLethe; }

  std::optional<RetentionPlan> observe(std::size_t layer, long step,
                                       const TokenScoreVector& step_scores,
                                       KvCacheLayer& cache) override;

  const LetheLayerState& state(std::size_t layer) const { return states_.at(layer); }
  const LetheConfig& config() const noexcept { return config_; }

 private:
  LetheConfig config_;
  std::vector<LetheLayerState> states_;
};

}  // namespace kvprune
