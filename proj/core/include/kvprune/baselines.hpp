// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvprune/policy.hpp"

namespace kvprune {

RetentionPlan full_kv_plan(std::size_t cache_len);

/// Heavy-hitter retention: the last `window` slots plus the top
/// (budget - window) cumulative scores among the older slots.
RetentionPlan h2o_plan(std::span<const double> scores, std::size_t cache_len, std::size_t budget,
                       std::size_t window);

/// Attention sinks plus a fixed sliding window.
RetentionPlan streaming_plan(std::size_t cache_len, std::size_t sink_len, std::size_t window);

/// Linear interpolation from `bottom_budget` at layer 0 to `top_budget` at
/// the last layer, rounded to nearest.
std::size_t pyramid_budget(std::size_t layer, std::size_t n_layers, std::size_t top_budget,
                           std::size_t bottom_budget);

class FullKvPolicy final : public CachePolicy {
 public:
  PolicyKind kind() const override { return PolicyKind::kFull; }
  std::optional<RetentionPlan> observe(std::size_t layer, long step,
                                       const TokenScoreVector& step_scores,
                                       KvCacheLayer& cache) override;
};

// Undecayed cumulative scores, budget enforced every step.
class H2OPolicy : public CachePolicy {
 public:
  explicit H2OPolicy(const BaselineConfig& config);

  PolicyKind kind() const override { return PolicyKind::kH2O; }
  std::optional<RetentionPlan> observe(std::size_t layer, long step,
                                       const TokenScoreVector& step_scores,
                                       KvCacheLayer& cache) override;

 protected:
  virtual std::size_t budget_for(std::size_t layer) const;

  BaselineConfig config_;
};

class StreamingPolicy final : public CachePolicy {
 public:
  explicit StreamingPolicy(const BaselineConfig& config);

  PolicyKind kind() const override { return PolicyKind::kStreaming; }
  std::optional<RetentionPlan> observe(std::size_t layer, long step,
                                       const TokenScoreVector& step_scores,
                                       KvCacheLayer& cache) override;

 private:
  BaselineConfig config_;
};

class PyramidPolicy final : public H2OPolicy {
 public:
  PyramidPolicy(const BaselineConfig& config, std::size_t n_layers);

  PolicyKind kind() const override { return PolicyKind::kPyramid; }

 protected:
  std::size_t budget_for(std::size_t layer) const override;

 private:
  std::size_t n_layers_;
};

}  // namespace kvprune
