// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "kvprune/errors.hpp"
#include "kvprune/sparsity.hpp"

namespace kvprune {
namespace {

TEST(RetainedMass, SubsetSum) {
  const std::vector<double> row{0.5, 0.3, 0.2};
  EXPECT_NEAR(retained_mass(row, std::vector<std::size_t>{0, 2}), 0.7, 1e-15);
  EXPECT_NEAR(retained_mass(row, std::vector<std::size_t>{0, 1, 2}), 1.0, 1e-15);
  EXPECT_EQ(retained_mass(row, std::vector<std::size_t>{}), 0.0);
  EXPECT_NEAR(retained_mass(row, std::vector<std::size_t>{2, 2, 0}), 0.7, 1e-15);
}

TEST(RetainedMass, Errors) {
  const std::vector<double> row{0.5, 0.5};
  EXPECT_THROW(retained_mass(row, std::vector<std::size_t>{2}), DomainError);
  EXPECT_THROW(retained_mass(std::vector<double>{0.5, 0.4}, std::vector<std::size_t>{0}),
               DomainError);
  EXPECT_NO_THROW(retained_mass(std::vector<double>{0.5, 0.500001}, std::vector<std::size_t>{0}));
}

TEST(RetainedMass, MonotoneUnderInclusion) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> row(2 + rng() % 100);
    double total = 0.0;
    for (double& x : row) total += (x = unit(rng));
    for (double& x : row) x /= total;
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double u = unit(rng);
      if (u < 0.3) a.push_back(i);
      if (u < 0.6) b.push_back(i);
    }
    const double ma = retained_mass(row, a), mb = retained_mass(row, b);
    EXPECT_LE(ma, mb);
    EXPECT_GE(ma, 0.0);
    EXPECT_LE(mb, 1.0);
  }
}

TEST(KlDivergence, ZeroForEqualAndPositiveOtherwise) {
  const std::vector<double> p{1.0, 2.0, 3.0};
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  EXPECT_EQ(kl_divergence(p, std::vector<double>{11.0, 12.0, 13.0}), 0.0);
  EXPECT_GT(kl_divergence(p, std::vector<double>{3.0, 2.0, 1.0}), 0.0);
  EXPECT_THROW(kl_divergence(p, std::vector<double>{1.0}), DomainError);
}

TEST(KlDivergence, MatchesDirectFormula) {
  const std::vector<double> lp{0.0, std::log(3.0)};  // p = [1/4, 3/4]
  const std::vector<double> lq{0.0, 0.0};            // q = [1/2, 1/2]
  const double expected = 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
  EXPECT_NEAR(kl_divergence(lp, lq), expected, 1e-15);
}

StepReport report(long step, std::vector<std::size_t> lens, std::optional<double> kl = {},
                  std::int64_t micros = 0) {
  StepReport r;
  r.step = step;
  r.kl = kl;
  r.wall_time_micros = micros;
  for (std::size_t l = 0; l < lens.size(); ++l) {
    r.layers.push_back(LayerMetrics{l, lens[l], 0.5, lens[l] * 10, 1.0});
  }
  return r;
}

TEST(Summarize, SingleStepEchoesValues) {
  const std::vector<StepReport> r{report(1, {4, 6}, 0.25, 2000)};
  const auto s = summarize(r);
  EXPECT_EQ(s.steps, 1u);
  EXPECT_EQ(s.mean_memory_bytes, (std::vector<double>{40, 60}));
  EXPECT_EQ(s.max_memory_bytes, (std::vector<std::size_t>{40, 60}));
  EXPECT_EQ(s.mean_kl, 0.25);
  EXPECT_EQ(s.mean_retained_mass, 1.0);
  EXPECT_DOUBLE_EQ(s.tokens_per_second, 500.0);
  EXPECT_FALSE(s.retained_fraction);
}

TEST(Summarize, FullAgainstFullIsOne) {
  std::vector<StepReport> r;
  for (long t = 0; t < 10; ++t) r.push_back(report(t, {10 + std::size_t(t), 10 + std::size_t(t)}, 0.0));
  const auto s = summarize(r, std::span<const StepReport>(r));
  EXPECT_EQ(s.retained_fraction, 1.0);
  EXPECT_EQ(s.steady_retained_fraction, 1.0);
  EXPECT_EQ(s.mean_kl, 0.0);
}

TEST(Summarize, RetainedFractionFromStreams) {
  std::vector<StepReport> pruned, full;
  for (long t = 0; t < 100; ++t) {
    const std::size_t n = 100 + std::size_t(t);
    full.push_back(report(t, {n, n}));
    pruned.push_back(report(t, {t < 50 ? n : n / 10, t < 50 ? n : n / 10}));
  }
  const auto s = summarize(pruned, std::span<const StepReport>(full));
  double all = 0.0, steady = 0.0;
  for (long t = 0; t < 100; ++t) {
    const double ratio = double(pruned[t].layers[0].cache_len) / double(full[t].layers[0].cache_len);
    all += ratio;
    if (t >= 50) steady += ratio;
  }
  EXPECT_NEAR(*s.retained_fraction, all / 100, 1e-12);
  EXPECT_NEAR(*s.steady_retained_fraction, steady / 50, 1e-12);
  EXPECT_LE(*s.steady_retained_fraction, 0.1);
}

TEST(Summarize, OrderInvariant) {
  std::vector<StepReport> r;
  std::mt19937_64 rng(2);
  for (long t = 0; t < 30; ++t) r.push_back(report(t, {1 + rng() % 50, 1 + rng() % 50}, 0.01 * t));
  auto shuffled = r;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_EQ(to_json(summarize(r, std::span<const StepReport>(r))),
            to_json(summarize(shuffled, std::span<const StepReport>(r))));
}

TEST(Summarize, Errors) {
  EXPECT_THROW(summarize(std::vector<StepReport>{}), DomainError);
  const std::vector<StepReport> dup{report(1, {3}), report(1, {3})};
  EXPECT_THROW(summarize(dup), DomainError);
  const std::vector<StepReport> a{report(1, {3}), report(2, {3})};
  const std::vector<StepReport> b{report(1, {3})};
  EXPECT_THROW(summarize(a, std::span<const StepReport>(b)), DomainError);
}

TEST(AverageSummaries, FieldWiseMean) {
  RunSummary a, b;
  a.mean_kl = 1.0;
  b.mean_kl = 3.0;
  a.retained_fraction = 0.5;
  a.mean_memory_bytes = {10};
  b.mean_memory_bytes = {30};
  a.max_memory_bytes = {15};
  b.max_memory_bytes = {40};
  const std::vector<RunSummary> s{a, b};
  const auto m = average_summaries(s);
  EXPECT_EQ(m.mean_kl, 2.0);
  EXPECT_EQ(m.retained_fraction, 0.5);
  EXPECT_EQ(m.mean_memory_bytes, std::vector<double>{20});
  EXPECT_EQ(m.max_memory_bytes, std::vector<std::size_t>{40});
}

TEST(FormatNumber, NineSignificantDigits) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(format_number(51200), "51200");
  EXPECT_EQ(format_optional(std::nullopt), "");
}

TEST(StepCsv, OneRowPerStepAndLayer) {
  std::vector<StepReport> r;
  for (long t = 1; t <= 100; ++t) r.push_back(report(t, {5, 6, 7, 8}, t % 2 ? std::optional(0.5) : std::nullopt));
  std::ostringstream out;
  write_step_csv(out, r);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 401);
  EXPECT_EQ(text.substr(0, text.find('\n')), kStepCsvHeader);

  std::istringstream in(text);
  const auto back = read_step_csv(in);
  ASSERT_EQ(back.size(), 100u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].step, r[i].step);
    EXPECT_EQ(back[i].kl, r[i].kl);
    ASSERT_EQ(back[i].layers.size(), 4u);
    EXPECT_EQ(back[i].layers[3].cache_len, 8u);
    EXPECT_EQ(back[i].layers[2].memory_bytes, 70u);
    EXPECT_EQ(back[i].layers[1].sparsity, 0.5);
  }
}

TEST(StepCsv, RejectsBadInput) {
  std::istringstream no_header("1,0,2,,3,,\n");
  EXPECT_THROW(read_step_csv(no_header), DomainError);
  std::istringstream short_row(std::string(kStepCsvHeader) + "\n1,0,2\n");
  EXPECT_THROW(read_step_csv(short_row), DomainError);
  std::istringstream garbage(std::string(kStepCsvHeader) + "\nx,0,2,,3,,\n");
  EXPECT_THROW(read_step_csv(garbage), DomainError);
}

TEST(HeatmapCsv, SparsityRoundTripsThroughRecomputation) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> dumped;
  std::vector<StepReport> reports;
  for (long t = 0; t < 20; ++t) {
    StepReport r;
    r.step = t;
    for (std::size_t l = 0; l < 3; ++l) {
      std::vector<double> scores(4 + rng() % 40);
      for (double& x : scores) x = std::pow(unit(rng), 3.0);
      r.layers.push_back(LayerMetrics{l, scores.size(), layer_sparsity(scores), 0, {}});
      dumped.push_back(scores);
    }
    reports.push_back(r);
  }
  std::ostringstream out;
  write_heatmap_csv(out, reports);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kHeatmapCsvHeader);
  std::size_t i = 0;
  while (std::getline(in, line)) {
    const double written = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_NEAR(written, hoyer_sparsity(dumped[i++]), 1e-8);
  }
  EXPECT_EQ(i, 60u);

  reports[3].layers[1].sparsity.reset();
  std::ostringstream bad;
  EXPECT_THROW(write_heatmap_csv(bad, reports), DomainError);
  EXPECT_TRUE(bad.str().empty());
}

}  // namespace
}  // namespace kvprune
