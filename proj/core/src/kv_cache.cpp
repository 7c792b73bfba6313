// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/kv_cache.hpp"

#include <algorithm>
#include <string>

#include "kvprune/errors.hpp"

namespace kvprune {

std::string_view to_string(RetentionLabel label) {
  switch (label) {
    case RetentionLabel::kSink: return "sink";
    case RetentionLabel::kRecent: return "recent";
    case RetentionLabel::kSalient: return "salient";
    case RetentionLabel::kAll: return "all";
  }
  return "unknown";
}

RetentionPlan RetentionPlan::keep_all(std::size_t cache_len) {
  RetentionPlan plan;
  plan.keep.resize(cache_len);
  for (std::size_t i = 0; i < cache_len; ++i) plan.keep[i] = i;
  plan.labels.assign(cache_len, RetentionLabel::kAll);
  return plan;
}

void RetentionPlan::validate(std::size_t cache_len) const {
  if (labels.size() != keep.size()) throw DomainError("retention plan labels do not match keep set");
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] >= cache_len) {
      throw DomainError("retention index " + std::to_string(keep[i]) + " outside cache of length " +
                        std::to_string(cache_len));
    }
    if (i > 0 && keep[i] <= keep[i - 1]) {
      throw DomainError("retention indices must be strictly increasing");
    }
  }
}

KvCacheLayer::KvCacheLayer(std::size_t layer, CacheShape shape, bool store_payload)
    : layer_(layer), shape_(shape), store_payload_(store_payload) {
  if (shape.heads_kv == 0) throw ConfigError("cache needs at least one KV head");
}

void KvCacheLayer::append(std::span<const double> key, std::span<const double> value,
                          const TokenMeta& meta) {
  const std::size_t width = store_payload_ ? shape_.scalars_per_entry() : 0;
  if (key.size() != width || value.size() != width) {
    throw ConfigError("key/value width " + std::to_string(key.size()) + "/" +
                      std::to_string(value.size()) + " does not match cache width " +
                      std::to_string(width));
  }
  if (!meta_.empty() && meta.original_position <= meta_.back().original_position) {
    throw DomainError("cache positions must be strictly increasing (got " +
                      std::to_string(meta.original_position) + " after " +
                      std::to_string(meta_.back().original_position) + ")");
  }
  keys_.insert(keys_.end(), key.begin(), key.end());
  values_.insert(values_.end(), value.begin(), value.end());
  meta_.push_back(meta);
  scores_.push_back(0.0);
}

void KvCacheLayer::compact(const RetentionPlan& plan) {
  if (plan.keep.empty()) throw DomainError("retention plan may not empty the cache");
  plan.validate(size());
  const std::size_t width = store_payload_ ? shape_.scalars_per_entry() : 0;
  // keep is strictly increasing, so dst <= src and an in-place forward copy is safe.
  std::size_t dst = 0;
  for (std::size_t src : plan.keep) {
    if (dst != src) {
      std::copy_n(keys_.begin() + static_cast<std::ptrdiff_t>(src * width), width,
                  keys_.begin() + static_cast<std::ptrdiff_t>(dst * width));
      std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(src * width), width,
                  values_.begin() + static_cast<std::ptrdiff_t>(dst * width));
      meta_[dst] = meta_[src];
      scores_[dst] = scores_[src];
    }
    ++dst;
  }
  keys_.resize(dst * width);
  values_.resize(dst * width);
  meta_.resize(dst);
  scores_.resize(dst);
}

std::span<const double> KvCacheLayer::key(std::size_t index) const {
  if (!store_payload_) throw ConfigError("cache holds no key/value payload");
  const std::size_t width = shape_.scalars_per_entry();
  return std::span<const double>(keys_).subspan(index * width, width);
}

std::span<const double> KvCacheLayer::value(std::size_t index) const {
  if (!store_payload_) throw ConfigError("cache holds no key/value payload");
  const std::size_t width = shape_.scalars_per_entry();
  return std::span<const double>(values_).subspan(index * width, width);
}

std::vector<std::int64_t> KvCacheLayer::positions() const {
  std::vector<std::int64_t> out;
  out.reserve(meta_.size());
  for (const auto& m : meta_) out.push_back(m.original_position);
  return out;
}

void KvCacheLayer::set_scores(TokenScoreVector scores) {
  if (scores.size() != meta_.size()) {
    throw DomainError("score vector length " + std::to_string(scores.size()) +
                      " does not match cache length " + std::to_string(meta_.size()));
  }
  scores_ = std::move(scores);
}

std::size_t memory_bytes(const KvCacheLayer& cache, std::size_t bytes_per_scalar) {
  return cache.size() * 2 * cache.shape().heads_kv * cache.shape().head_dim * bytes_per_scalar;
}

}  // namespace kvprune
