// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvprune/errors.hpp"

namespace kvprune {

AttentionSnapshot::AttentionSnapshot(std::size_t layer, long step, std::size_t heads_q,
                                     std::size_t heads_kv, std::size_t query_rows,
                                     std::size_t key_count)
    : layer_(layer),
      step_(step),
      heads_q_(heads_q),
      heads_kv_(heads_kv),
      query_rows_(query_rows),
      key_count_(key_count),
      weights_(heads_q * query_rows * key_count, 0.0) {}

std::span<double> AttentionSnapshot::row(std::size_t head, std::size_t query) {
  return std::span<double>(weights_).subspan((head * query_rows_ + query) * key_count_,
                                             key_count_);
}

std::span<const double> AttentionSnapshot::row(std::size_t head, std::size_t query) const {
  return std::span<const double>(weights_).subspan((head * query_rows_ + query) * key_count_,
                                                   key_count_);
}

void AttentionSnapshot::validate() const {
  if (heads_kv_ == 0 || heads_q_ % heads_kv_ != 0) {
    throw ConfigError("query heads (" + std::to_string(heads_q_) +
                      ") must be a positive multiple of KV heads (" + std::to_string(heads_kv_) +
                      ")");
  }
  for (double w : weights_) {
    if (!std::isfinite(w) || w < 0.0) {
      throw DomainError("attention weights must be finite and non-negative");
    }
  }
}

double hoyer_sparsity(std::span<const double> a) {
  const std::size_t n = a.size();
  if (n < 2) throw DomainError("hoyer_sparsity needs at least two entries");
  double l1 = 0.0;
  double sq = 0.0;
  for (double x : a) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw DomainError("hoyer_sparsity needs finite non-negative entries");
    }
    l1 += x;
    sq += x * x;
  }
  if (l1 == 0.0) throw DomainError("hoyer_sparsity is undefined for the zero vector");
  if (std::all_of(a.begin(), a.end(), [&](double x) { return x == a.front(); })) return 0.0;

  // Dividing by the max first keeps sq from under/overflowing on extreme scales.
  double peak = 0.0;
  for (double x : a) peak = std::max(peak, x);
  const double l1n = l1 / peak;
  double sqn = 0.0;
  for (double x : a) {
    const double y = x / peak;
    sqn += y * y;
  }
  const double root_n = std::sqrt(static_cast<double>(n));
  const double s = (root_n - l1n / std::sqrt(sqn)) / (root_n - 1.0);
  return std::clamp(s, 0.0, 1.0);
}

namespace {

void require_rows(const AttentionSnapshot& snapshot) {
  if (snapshot.heads_q() == 0 || snapshot.query_rows() == 0 || snapshot.key_count() == 0) {
    throw DomainError("attention snapshot has no rows");
  }
}

}  // namespace

TokenScoreVector aggregate_token_scores(const AttentionSnapshot& snapshot) {
  require_rows(snapshot);
  TokenScoreVector scores(snapshot.key_count(), 0.0);
  for (std::size_t h = 0; h < snapshot.heads_q(); ++h) {
    for (std::size_t q = 0; q < snapshot.query_rows(); ++q) {
      const auto row = snapshot.row(h, q);
      for (std::size_t j = 0; j < row.size(); ++j) scores[j] += row[j];
    }
  }
  return scores;
}

TokenScoreVector kv_head_scores(const AttentionSnapshot& snapshot) {
  require_rows(snapshot);
  if (snapshot.heads_kv() == 0 || snapshot.heads_q() % snapshot.heads_kv() != 0) {
    throw ConfigError("query heads must be a multiple of KV heads");
  }
  const std::size_t group = snapshot.heads_q() / snapshot.heads_kv();
  TokenScoreVector scores(snapshot.key_count(), 0.0);
  for (std::size_t g = 0; g < snapshot.heads_kv(); ++g) {
    for (std::size_t member = 0; member < group; ++member) {
      const std::size_t h = g * group + member;
      for (std::size_t q = 0; q < snapshot.query_rows(); ++q) {
        const auto row = snapshot.row(h, q);
        for (std::size_t j = 0; j < row.size(); ++j) scores[j] += row[j];
      }
    }
  }
  return scores;
}

double layer_sparsity(const TokenScoreVector& scores) { return hoyer_sparsity(scores); }

}  // namespace kvprune
