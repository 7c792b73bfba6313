// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/lethe.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "kvprune/errors.hpp"

namespace kvprune {

TokenScoreVector rasr_update(std::span<const double> previous,
                             std::span<const double> step_scores, double gamma) {
  if (previous.size() > step_scores.size()) {
    throw DomainError("step scores (" + std::to_string(step_scores.size()) +
                      ") shorter than the accumulated scores (" +
                      std::to_string(previous.size()) + ")");
  }
  TokenScoreVector next(step_scores.begin(), step_scores.end());
  for (std::size_t i = 0; i < previous.size(); ++i) next[i] = gamma * previous[i] + step_scores[i];
  return next;
}

bool should_prune(const LetheLayerState& state, std::size_t cache_len) {
  return cache_len > state.evict_threshold;
}

std::optional<std::size_t> find_breakpoint_sorted(std::span<const double> sorted_desc,
                                                  std::size_t segments, double tau) {
  const std::size_t k = sorted_desc.size();
  if (segments < 2) throw DomainError("breakpoint search needs at least two segments");
  if (!(tau > 1.0)) throw DomainError("breakpoint search needs tau > 1");
  if (k < segments) throw DomainError("breakpoint search needs at least as many scores as segments");

  const double head = sorted_desc[0];
  for (std::size_t d = 1; d < segments; ++d) {
    const std::size_t cut = k * d / segments;
    const double at_cut = sorted_desc[cut];
    if (at_cut <= 0.0) continue;
    if (head / at_cut <= tau) return cut;
  }
  return std::nullopt;
}

std::optional<std::size_t> find_breakpoint(std::span<const double> scores, std::size_t segments,
                                           double tau) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::stable_sort(sorted.begin(), sorted.end(), std::greater<>());
  return find_breakpoint_sorted(sorted, segments, tau);
}

std::size_t recent_window(double ratio, std::size_t cache_len) {
  const double exact = ratio * static_cast<double>(cache_len);
  // 0.3 * 10 evaluates to 3.0000000000000004; do not let that round up to 4.
  const double r = std::ceil(exact - 1e-9 * std::max(1.0, exact));
  return std::min(cache_len, static_cast<std::size_t>(std::max(0.0, r)));
}

LethePlan plan_retention(const LetheLayerState& state, std::span<const double> scores,
                         std::size_t cache_len, const LetheConfig& config) {
  if (scores.size() != cache_len) {
    throw DomainError("score vector length does not match the cache length");
  }
  LethePlan out;
  out.state = state;
  out.recent = recent_window(config.recent_ratio, cache_len);

  if (cache_len <= config.sink_len + out.recent || cache_len < config.segments) {
    out.plan = RetentionPlan::keep_all(cache_len);
    return out;
  }

  const std::vector<std::size_t> order = rank_by_score(scores);
  std::vector<double> sorted(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = scores[order[i]];

  out.searched = true;
  out.breakpoint = find_breakpoint_sorted(sorted, config.segments, config.tau);
  if (!out.breakpoint) {
    out.plan = RetentionPlan::keep_all(cache_len);
    out.state.evict_threshold = 2 * state.evict_threshold;
    return out;
  }

  const std::size_t b = *out.breakpoint;
  out.salient.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b));

  std::vector<std::size_t> sink(config.sink_len);
  std::iota(sink.begin(), sink.end(), std::size_t{0});
  std::vector<std::size_t> recent(out.recent);
  std::iota(recent.begin(), recent.end(), cache_len - out.recent);

  out.plan = merge_retention(cache_len, sink, recent, out.salient);
  out.state.evict_threshold = std::max(state.evict_threshold, b + out.recent);
  return out;
}

LethePolicy::LethePolicy(const LetheConfig& config, std::size_t n_layers) : config_(config) {
  config_.validate();
  states_.assign(n_layers, LetheLayerState{config_.evict_threshold_init, -1});
}

std::optional<RetentionPlan> LethePolicy::observe(std::size_t layer, long step,
                                                  const TokenScoreVector& step_scores,
                                                  KvCacheLayer& cache) {
  if (step_scores.size() != cache.size()) {
    throw DomainError("step scores do not cover the cache");
  }
  cache.set_scores(rasr_update(cache.scores(), step_scores, config_.gamma));

  LetheLayerState& state = states_.at(layer);
  if (!should_prune(state, cache.size())) return std::nullopt;

  LethePlan result = plan_retention(state, cache.scores(), cache.size(), config_);

  PruneEvent event;
  event.layer = layer;
  event.step = step;
  event.cache_len = cache.size();
  event.recent = result.recent;
  event.searched = result.searched;
  event.breakpoint = result.breakpoint;
  event.threshold_before = state.evict_threshold;
  event.threshold_after = result.state.evict_threshold;
  event.salient = std::move(result.salient);
  event.plan = result.plan;

  state = result.state;
  state.last_prune_step = step;
  emit(event);
  return std::move(result.plan);
}

}  // namespace kvprune
