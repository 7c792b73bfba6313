// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used only by tests. Each one takes the long way
// round (explicit expansion, exhaustive scans, plain loops) and shares no code
// with the library path it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace kvprune::testing {

// Exhaustive cut-point scan: evaluates every cut, then takes the smallest
// passing one.
inline std::optional<std::size_t> brute_force_breakpoint(const std::vector<double>& scores,
                                                         std::size_t segments, double tau) {
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < scores.size(); ++i) ranked.emplace_back(scores[i], i);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  const std::size_t k = scores.size();
  std::set<std::size_t> passing;
  for (std::size_t d = 1; d < segments; ++d) {
    const std::size_t cut = (k * d) / segments;
    const double head = ranked.front().first;
    const double v = ranked[cut].first;
    const double ratio = v == 0.0 ? std::numeric_limits<double>::infinity() : head / v;
    if (ratio <= tau) passing.insert(cut);
  }
  if (passing.empty()) return std::nullopt;
  return *passing.begin();
}

// Top-k indices by (score desc, index asc) over [0, limit).
inline std::set<std::size_t> brute_force_top_k(const std::vector<double>& scores, std::size_t k,
                                               std::size_t limit) {
  std::set<std::size_t> chosen;
  for (std::size_t round = 0; round < k && round < limit; ++round) {
    std::size_t best = limit;
    for (std::size_t i = 0; i < limit; ++i) {
      if (chosen.count(i)) continue;
      if (best == limit || scores[i] > scores[best]) best = i;
    }
    chosen.insert(best);
  }
  return chosen;
}

// Heavy-tailed random scores: a few spikes over a low floor, some zeros.
inline std::vector<double> spiky_scores(std::mt19937_64& rng, std::size_t k) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> s(k);
  for (double& x : s) {
    const double u = unit(rng);
    x = u < 0.05 ? 0.0 : u < 0.15 ? 100.0 + 900.0 * unit(rng) : std::pow(unit(rng), 4.0) * 5.0;
  }
  return s;
}

}  // namespace kvprune::testing
