// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kvprune/baselines.hpp"
#include "kvprune/errors.hpp"
#include "kvprune/lethe.hpp"

namespace kvprune {

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kFull: return "full";
    case PolicyKind::kH2O: return "h2o";
    case PolicyKind::kStreaming: return "streaming";
    case PolicyKind::kPyramid: return "pyramid";
    case PolicyKind::kLethe: return "lethe";
  }
  return "unknown";
}

PolicyKind parse_policy_kind(std::string_view name) {
  for (PolicyKind kind : {PolicyKind::kFull, PolicyKind::kH2O, PolicyKind::kStreaming,
                          PolicyKind::kPyramid, PolicyKind::kLethe}) {
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown policy '" + std::string(name) +
                    "' (expected full, h2o, streaming, pyramid or lethe)");
}

void LetheConfig::validate() const {
  if (!(tau > 1.0) || !std::isfinite(tau)) {
    throw ConfigError("tau must be a finite value greater than 1, got " + std::to_string(tau));
  }
  if (segments < 2) throw ConfigError("segments must be at least 2");
  if (sink_len < 1) throw ConfigError("sink length must be at least 1");
  if (!(recent_ratio > 0.0 && recent_ratio < 1.0)) {
    throw ConfigError("recent ratio must lie in (0, 1), got " + std::to_string(recent_ratio));
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigError("gamma must lie in [0, 1], got " + std::to_string(gamma));
  }
  if (evict_threshold_init < sink_len + 1) {
    throw ConfigError("eviction threshold must exceed the sink length");
  }
}

void BaselineConfig::validate(PolicyKind kind) const {
  switch (kind) {
    case PolicyKind::kFull:
    case PolicyKind::kLethe:
      return;
    case PolicyKind::kH2O:
      if (budget < sink_len + 1) throw ConfigError("budget must exceed the sink length");
      if (window > budget) throw ConfigError("h2o window may not exceed the budget");
      return;
    case PolicyKind::kStreaming:
      if (window == 0) throw ConfigError("streaming window must be positive");
      if (budget < sink_len + 1) throw ConfigError("budget must exceed the sink length");
      if (sink_len + window > budget) {
        throw ConfigError("streaming sink + window (" + std::to_string(sink_len + window) +
                          ") exceeds the budget (" + std::to_string(budget) + ")");
      }
      return;
    case PolicyKind::kPyramid:
      if (std::min(pyramid_top_budget, pyramid_bottom_budget) < sink_len + 1) {
        throw ConfigError("pyramid budgets must exceed the sink length");
      }
      if (window > std::min(pyramid_top_budget, pyramid_bottom_budget)) {
        throw ConfigError("pyramid window may not exceed the smallest layer budget");
      }
      return;
  }
}

void PolicyConfig::validate() const {
  if (kind == PolicyKind::kLethe) lethe.validate();
  baseline.validate(kind);
}

RetentionPlan merge_retention(std::size_t cache_len, std::span<const std::size_t> sink,
                              std::span<const std::size_t> recent,
                              std::span<const std::size_t> salient) {
  // Later assignments lose to earlier ones, so apply lowest priority first.
  std::vector<int> rank(cache_len, 0);
  auto mark = [&](std::span<const std::size_t> indices, int priority) {
    for (std::size_t i : indices) {
      if (i >= cache_len) throw DomainError("retention index outside the cache");
      rank[i] = std::max(rank[i], priority);
    }
  };
  mark(salient, 1);
  mark(recent, 2);
  mark(sink, 3);

  RetentionPlan plan;
  for (std::size_t i = 0; i < cache_len; ++i) {
    if (rank[i] == 0) continue;
    plan.keep.push_back(i);
    plan.labels.push_back(rank[i] == 3   ? RetentionLabel::kSink
                          : rank[i] == 2 ? RetentionLabel::kRecent
                                         : RetentionLabel::kSalient);
  }
  return plan;
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::unique_ptr<CachePolicy> make_policy(const PolicyConfig& config, std::size_t n_layers) {
  config.validate();
  switch (config.kind) {
    case PolicyKind::kFull: return std::make_unique<FullKvPolicy>();
    case PolicyKind::kH2O: return std::make_unique<H2OPolicy>(config.baseline);
    case PolicyKind::kStreaming: return std::make_unique<StreamingPolicy>(config.baseline);
    case PolicyKind::kPyramid: return std::make_unique<PyramidPolicy>(config.baseline, n_layers);
    case PolicyKind::kLethe: return std::make_unique<LethePolicy>(config.lethe, n_layers);
  }
  throw ConfigError("unknown policy kind");
}

}  // namespace kvprune
