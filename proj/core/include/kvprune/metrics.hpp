// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace kvprune {

struct LayerMetrics {
  std::size_t layer = 0;
  std::size_t cache_len = 0;
  std::optional<double> sparsity;
  std::size_t memory_bytes = 0;
  std::optional<double> retained_mass;
};

struct StepReport {
  long step = 0;
  std::vector<LayerMetrics> layers;
  std::optional<double> kl;
  std::int64_t wall_time_micros = 0;
};

struct RunSummary {
  std::size_t steps = 0;
  std::vector<double> mean_memory_bytes;  // per layer
  std::vector<std::size_t> max_memory_bytes;  // per layer
  std::optional<double> retained_fraction;  // mean over steps of cache / FullKV cache
  std::optional<double> steady_retained_fraction;  // same, over the second half of the run
  std::optional<double> mean_kl;
  std::optional<double> mean_retained_mass;
  double tokens_per_second = 0.0;
  nlohmann::json config = nlohmann::json::object();
};

/// Mass of a normalized attention row that falls on the retained slots.
double retained_mass(std::span<const double> full_row, std::span<const std::size_t> retained);

/// KL(p || q) between the softmax distributions of two logit vectors, in nats.
/// Rounding residue below zero is clamped.
double kl_divergence(std::span<const double> logits_p, std::span<const double> logits_q);

/// Aggregates a report stream. Reports are keyed by step, so input order is
/// irrelevant. Throws DomainError on an empty stream, or when a baseline is
/// given that lacks one of the steps.
RunSummary summarize(std::span<const StepReport> reports,
                     std::optional<std::span<const StepReport>> baseline = std::nullopt);

/// Field-wise mean of per-seed summaries; optional fields average over the
/// summaries that carry them.
RunSummary average_summaries(std::span<const RunSummary> summaries);

nlohmann::json to_json(const RunSummary& summary);

/// "%.9g"; empty for a missing optional.
std::string format_number(double value);
std::string format_optional(const std::optional<double>& value);

inline constexpr const char* kStepCsvHeader =
    "step,layer,cache_len,sparsity,memory_bytes,retained_mass,kl";
inline constexpr const char* kHeatmapCsvHeader = "step,layer,sparsity";

/// One row per (step, layer).
void write_step_csv(std::ostream& out, std::span<const StepReport> reports);
std::vector<StepReport> read_step_csv(std::istream& in);

/// Long-format (step, layer, sparsity). Throws DomainError if any row has no
/// sparsity value.
void write_heatmap_csv(std::ostream& out, std::span<const StepReport> reports);

}  // namespace kvprune
