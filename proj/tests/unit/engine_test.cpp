// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "kvprune/baselines.hpp"
#include "kvprune/errors.hpp"
#include "kvprune/lethe.hpp"
#include "kvprune/model.hpp"
#include "kvprune/rng.hpp"
#include "kvprune/session.hpp"

namespace kvprune {
namespace {

TEST(SplitMix64, ReferenceStream) {
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next(), 0x06C45D188009454FULL);
}

TEST(SplitMix64, UnitIntervalFromTopBits) {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.next_unit();
    EXPECT_EQ(u, static_cast<double>(b.next() >> 11) / 9007199254740992.0);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

ModelConfig small_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.heads_q = 4;
  c.heads_kv = 2;
  c.vocab_size = 64;
  c.max_steps = 64;
  c.seed = seed;
  return c;
}

TEST(InitModel, DeterministicPerSeed) {
  const Model a = init_model(small_config(5));
  const Model b = init_model(small_config(5));
  const Model c = init_model(small_config(6));
  EXPECT_EQ(a.embedding, b.embedding);
  EXPECT_EQ(a.layers[1].w2, b.layers[1].w2);
  EXPECT_EQ(a.unembedding, b.unembedding);
  EXPECT_NE(a.embedding, c.embedding);
}

TEST(InitModel, FillOrderAndBounds) {
  const ModelConfig cfg = small_config(3);
  const Model m = init_model(cfg);
  const double bound = 1.0 / std::sqrt(32.0);
  SplitMix64 rng(3);
  for (double w : m.embedding) EXPECT_EQ(w, -bound + 2 * bound * rng.next_unit());
  for (double w : m.layers[0].wq) EXPECT_EQ(w, -bound + 2 * bound * rng.next_unit());
  for (const auto& layer : m.layers) {
    for (const auto* mat : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1, &layer.w2}) {
      for (double w : *mat) {
        EXPECT_GE(w, -bound);
        EXPECT_LT(w, bound);
      }
    }
  }
  EXPECT_EQ(m.layers[0].wk.size(), cfg.kv_dim() * cfg.d_model);
  EXPECT_EQ(m.layers[0].w1.size(), 4 * cfg.d_model * cfg.d_model);
}

TEST(ModelConfig, Arithmetic) {
  ModelConfig c;
  EXPECT_EQ(c.d_head(), 8u);
  EXPECT_EQ(c.group_size(), 4u);
  EXPECT_EQ(c.kv_dim(), 16u);
}

TEST(ModelConfig, RejectsIndivisibleShapes) {
  ModelConfig c;
  c.heads_q = 6;
  EXPECT_THROW(init_model(c), ConfigError);
  c = ModelConfig{};
  c.heads_kv = 3;
  EXPECT_THROW(init_model(c), ConfigError);
}

TEST(MakePrompt, DeterministicInVocabulary) {
  const auto a = make_prompt(9, 100, 17);
  EXPECT_EQ(a, make_prompt(9, 100, 17));
  EXPECT_NE(a, make_prompt(10, 100, 17));
  SplitMix64 rng(9 ^ 0x5DEECE66DULL);
  for (int t : a) EXPECT_EQ(t, static_cast<int>(rng.next() % 17));
}

TEST(Kernels, LogSoftmaxNormalizes) {
  const std::vector<double> logits{1000.0, 999.0, -5.0, 0.0};
  const auto ls = kernels::log_softmax(logits);
  double total = 0.0;
  for (double x : ls) total += std::exp(x);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(ls[0] - ls[1], 1.0, 1e-12);
}

TEST(Kernels, ArgmaxTiesGoLow) {
  EXPECT_EQ(argmax_token(std::vector<double>{1, 3, 3, 2}), 1);
  EXPECT_EQ(argmax_token(std::vector<double>{0, 0, 0}), 0);
}

TEST(Kernels, PositionEncodingFormula) {
  std::vector<double> x(8, 0.0);
  kernels::add_position_encoding(7, x);
  for (std::size_t i = 0; i < 4; ++i) {
    const double freq = std::pow(10000.0, -2.0 * double(i) / 8.0);
    EXPECT_NEAR(x[2 * i], std::sin(7 * freq), 1e-12);
    EXPECT_NEAR(x[2 * i + 1], std::cos(7 * freq), 1e-12);
  }
}

// Attention over keys repeated once per query head, the layout GQA avoids.
std::vector<double> repeated_key_attention(const std::vector<double>& queries,
                                           const KvCacheLayer& cache, std::size_t heads_q) {
  const std::size_t heads_kv = cache.shape().heads_kv, dh = cache.shape().head_dim;
  const std::size_t k = cache.size(), group = heads_q / heads_kv;
  std::vector<std::vector<std::vector<double>>> keys(heads_q);
  for (std::size_t h = 0; h < heads_q; ++h) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto kv = cache.key(j).subspan((h / group) * dh, dh);
      keys[h].emplace_back(kv.begin(), kv.end());
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> weights(heads_q * k);
  for (std::size_t h = 0; h < heads_q; ++h) {
    std::vector<double> logits(k);
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dh; ++i) dot += queries[h * dh + i] * keys[h][j][i];
      logits[j] = dot * scale;
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& x : logits) total += (x = std::exp(x - peak));
    for (std::size_t j = 0; j < k; ++j) weights[h * k + j] = logits[j] / total;
  }
  return weights;
}

TEST(GroupedAttention, MatchesRepeatedKeysBitwise) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t kv_options[] = {1, 2, 4};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t heads_kv = kv_options[trial % 3];
    const std::size_t heads_q = heads_kv * kv_options[(trial / 3) % 3];
    const std::size_t dh = 4 + trial % 5;
    const std::size_t k = 1 + rng() % 60;
    KvCacheLayer cache(0, CacheShape{heads_kv, dh});
    std::vector<double> key(heads_kv * dh), value(heads_kv * dh);
    for (std::size_t j = 0; j < k; ++j) {
      for (double& x : key) x = normal(rng);
      for (double& x : value) x = normal(rng);
      cache.append(key, value, TokenMeta{static_cast<std::int64_t>(j), 0, Provenance::kPrompt});
    }
    std::vector<double> queries(heads_q * dh);
    for (double& x : queries) x = normal(rng);

    std::vector<double> out(heads_q * dh), weights(heads_q * k);
    kernels::grouped_attention(queries, cache, heads_q, k, out, weights);
    const auto expected = repeated_key_attention(queries, cache, heads_q);
    ASSERT_EQ(weights, expected) << "trial " << trial;

    AttentionSnapshot snap(0, 0, heads_q, heads_kv, 1, k);
    std::copy(expected.begin(), expected.end(), snap.row(0, 0).begin());
    std::vector<double> summed(k, 0.0);
    for (std::size_t h = 0; h < heads_q; ++h) {
      for (std::size_t j = 0; j < k; ++j) summed[j] += expected[h * k + j];
    }
    ASSERT_EQ(kv_head_scores(snap), summed);
  }
}

std::unique_ptr<CachePolicy> full_policy() {
  return make_policy(PolicyConfig{PolicyKind::kFull, {}, {}}, 0);
}

std::unique_ptr<CachePolicy> lethe_policy(double tau, std::size_t threshold, std::size_t layers) {
  PolicyConfig cfg;
  cfg.kind = PolicyKind::kLethe;
  cfg.lethe.tau = tau;
  cfg.lethe.evict_threshold_init = threshold;
  return make_policy(cfg, layers);
}

TEST(DecodeSession, FullKvGrowsByOnePerStep) {
  const Model model = init_model(small_config());
  DecodeSession s(model, full_policy());
  const auto prompt = make_prompt(0, 12, 64);
  s.prefill(prompt);
  for (long t = 1; t <= 40; ++t) {
    const auto out = s.step();
    ASSERT_TRUE(out.has_value());
    EXPECT_EQ(out->step, t);
    for (std::size_t l = 0; l < s.layer_count(); ++l) {
      EXPECT_EQ(s.cache(l).size(), 12u + static_cast<std::size_t>(t));
    }
  }
}

TEST(DecodeSession, AttentionRowsAreDistributions) {
  const Model model = init_model(small_config(1));
  DecodeSession s(model, lethe_policy(20, 24, 2));
  const auto pre = s.prefill(make_prompt(1, 16, 64));
  for (const auto& layer : pre.layers) {
    ASSERT_EQ(layer.snapshot.query_rows(), 16u);
    for (std::size_t q = 0; q < 16; ++q) {
      const auto row = layer.snapshot.row(0, q);
      for (std::size_t j = q + 1; j < row.size(); ++j) EXPECT_EQ(row[j], 0.0);
    }
  }
  for (int t = 0; t < 60; ++t) {
    const auto out = s.step();
    ASSERT_TRUE(out.has_value());
    for (const auto& layer : out->layers) {
      const auto& snap = layer.snapshot;
      EXPECT_EQ(snap.key_count(), layer.attended_positions.size());
      for (std::size_t h = 0; h < snap.heads_q(); ++h) {
        const auto row = snap.row(h, 0);
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-5);
      }
    }
  }
}

TEST(DecodeSession, DeterministicAcrossRuns) {
  const Model model = init_model(small_config(2));
  auto run = [&] {
    DecodeSession s(model, lethe_policy(20, 24, 2));
    s.prefill(make_prompt(2, 10, 64));
    std::vector<std::vector<std::int64_t>> positions;
    while (s.step()) positions.push_back(s.cache(1).positions());
    return std::make_pair(s.tokens(), positions);
  };
  EXPECT_EQ(run(), run());
}

TEST(DecodeSession, NonFiringLetheMatchesFullKv) {
  const Model model = init_model(small_config(4));
  DecodeSession full(model, full_policy());
  DecodeSession lethe(model, lethe_policy(1e12, 10000, 2));
  const auto prompt = make_prompt(4, 10, 64);
  full.prefill(prompt);
  lethe.prefill(prompt);
  while (full.step()) ASSERT_TRUE(lethe.step().has_value());
  EXPECT_EQ(full.tokens(), lethe.tokens());
}

TEST(DecodeSession, CompactionKeepsOriginalPositions) {
  const Model model = init_model(small_config(6));
  DecodeSession pruned(model, lethe_policy(20, 20, 2));
  DecodeSession full(model, full_policy());
  const auto prompt = make_prompt(6, 10, 64);
  pruned.prefill(prompt);
  full.prefill(prompt);
  bool shrank = false;
  for (int t = 0; t < 60; ++t) {
    const int input = pruned.next_token();
    ASSERT_TRUE(pruned.step(input).has_value());
    ASSERT_TRUE(full.step(input).has_value());
    const auto& cache = pruned.cache(0);
    const auto positions = cache.positions();
    shrank |= positions.size() < full.cache(0).size();
    ASSERT_TRUE(std::is_sorted(positions.begin(), positions.end()));
    // Layer-0 keys depend only on token and position, so a survivor's key
    // must match the full cache's key at the same original position.
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto p = static_cast<std::size_t>(positions[i]);
      const auto a = cache.key(i), b = full.cache(0).key(p);
      ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
  }
  EXPECT_TRUE(shrank);
}

TEST(DecodeSession, StopsAtMaxSteps) {
  ModelConfig cfg = small_config();
  cfg.max_steps = 3;
  const Model model = init_model(cfg);
  DecodeSession s(model, full_policy());
  EXPECT_THROW(s.step(), ConfigError);
  s.prefill(make_prompt(0, 4, 64));
  EXPECT_TRUE(s.step());
  EXPECT_TRUE(s.step());
  EXPECT_TRUE(s.step());
  EXPECT_TRUE(s.complete());
  EXPECT_FALSE(s.step().has_value());
  EXPECT_EQ(s.tokens().size(), 7u);
}

TEST(DecodeSession, RejectsOutOfVocabularyTokens) {
  const Model model = init_model(small_config());
  DecodeSession s(model, full_policy());
  EXPECT_THROW(s.prefill(std::vector<int>{1, 64}), DomainError);
}

TEST(DecodeSession, CacheNeverExceedsFullBound) {
  const Model model = init_model(small_config(8));
  for (PolicyKind kind : {PolicyKind::kH2O, PolicyKind::kStreaming, PolicyKind::kPyramid,
                          PolicyKind::kLethe}) {
    PolicyConfig cfg;
    cfg.kind = kind;
    cfg.baseline.budget = 24;
    cfg.baseline.window = 8;
    cfg.baseline.pyramid_bottom_budget = 30;
    cfg.baseline.pyramid_top_budget = 16;
    cfg.lethe.evict_threshold_init = 24;
    DecodeSession s(model, make_policy(cfg, 2));
    s.prefill(make_prompt(8, 8, 64));
    while (auto out = s.step()) {
      for (std::size_t l = 0; l < 2; ++l) {
        EXPECT_LE(s.cache(l).size(), 8u + static_cast<std::size_t>(out->step));
        EXPECT_EQ(out->layers[l].cache_len_after, s.cache(l).size());
      }
    }
  }
}

}  // namespace
}  // namespace kvprune
