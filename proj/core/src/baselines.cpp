// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvprune/errors.hpp"

namespace kvprune {

RetentionPlan full_kv_plan(std::size_t cache_len) { return RetentionPlan::keep_all(cache_len); }

RetentionPlan h2o_plan(std::span<const double> scores, std::size_t cache_len, std::size_t budget,
                       std::size_t window) {
  if (scores.size() != cache_len) throw DomainError("score vector length does not match the cache");
  if (window > budget) throw ConfigError("h2o window may not exceed the budget");
  if (cache_len <= budget) return RetentionPlan::keep_all(cache_len);

  const std::size_t older = cache_len - window;
  const std::vector<std::size_t> order = rank_by_score(scores.first(older));
  std::vector<std::size_t> heavy(order.begin(),
                                 order.begin() + static_cast<std::ptrdiff_t>(budget - window));
  std::vector<std::size_t> recent(window);
  std::iota(recent.begin(), recent.end(), older);
  return merge_retention(cache_len, {}, recent, heavy);
}

RetentionPlan streaming_plan(std::size_t cache_len, std::size_t sink_len, std::size_t window) {
  if (cache_len <= sink_len + window) return RetentionPlan::keep_all(cache_len);
  std::vector<std::size_t> sink(sink_len);
  std::iota(sink.begin(), sink.end(), std::size_t{0});
  std::vector<std::size_t> recent(window);
  std::iota(recent.begin(), recent.end(), cache_len - window);
  return merge_retention(cache_len, sink, recent, {});
}

std::size_t pyramid_budget(std::size_t layer, std::size_t n_layers, std::size_t top_budget,
                           std::size_t bottom_budget) {
  if (layer >= n_layers) throw DomainError("layer index outside the model");
  if (n_layers == 1) return bottom_budget;
  const double t = static_cast<double>(layer) / static_cast<double>(n_layers - 1);
  const double b = static_cast<double>(bottom_budget) +
                   (static_cast<double>(top_budget) - static_cast<double>(bottom_budget)) * t;
  return static_cast<std::size_t>(std::llround(b));
}

std::optional<RetentionPlan> FullKvPolicy::observe(std::size_t, long,
                                                   const TokenScoreVector& step_scores,
                                                   KvCacheLayer& cache) {
  if (step_scores.size() != cache.size()) throw DomainError("step scores do not cover the cache");
  return std::nullopt;
}

H2OPolicy::H2OPolicy(const BaselineConfig& config) : config_(config) {}

std::size_t H2OPolicy::budget_for(std::size_t) const { return config_.budget; }

std::optional<RetentionPlan> H2OPolicy::observe(std::size_t layer, long step,
                                                const TokenScoreVector& step_scores,
                                                KvCacheLayer& cache) {
  if (step_scores.size() != cache.size()) throw DomainError("step scores do not cover the cache");
  TokenScoreVector sums = cache.scores();
  for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += step_scores[i];
  cache.set_scores(std::move(sums));

  const std::size_t budget = budget_for(layer);
  if (cache.size() <= budget) return std::nullopt;
  RetentionPlan plan = h2o_plan(cache.scores(), cache.size(), budget, config_.window);

  PruneEvent event;
  event.layer = layer;
  event.step = step;
  event.cache_len = cache.size();
  event.recent = config_.window;
  event.threshold_before = event.threshold_after = budget;
  for (std::size_t i = 0; i < plan.keep.size(); ++i) {
    if (plan.labels[i] == RetentionLabel::kSalient) event.salient.push_back(plan.keep[i]);
  }
  event.plan = plan;
  emit(event);
  return plan;
}

StreamingPolicy::StreamingPolicy(const BaselineConfig& config) : config_(config) {}

std::optional<RetentionPlan> StreamingPolicy::observe(std::size_t layer, long step,
                                                      const TokenScoreVector& step_scores,
                                                      KvCacheLayer& cache) {
  if (step_scores.size() != cache.size()) throw DomainError("step scores do not cover the cache");
  if (cache.size() <= config_.sink_len + config_.window) return std::nullopt;
  RetentionPlan plan = streaming_plan(cache.size(), config_.sink_len, config_.window);

  PruneEvent event;
  event.layer = layer;
  event.step = step;
  event.cache_len = cache.size();
  event.recent = config_.window;
  event.threshold_before = event.threshold_after = config_.sink_len + config_.window;
  event.plan = plan;
  emit(event);
  return plan;
}

PyramidPolicy::PyramidPolicy(const BaselineConfig& config, std::size_t n_layers)
    : H2OPolicy(config), n_layers_(n_layers) {}

std::size_t PyramidPolicy::budget_for(std::size_t layer) const {
  return pyramid_budget(layer, n_layers_, config_.pyramid_top_budget,
                        config_.pyramid_bottom_budget);
}

}  // namespace kvprune
