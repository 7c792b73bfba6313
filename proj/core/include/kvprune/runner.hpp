// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvprune/metrics.hpp"
#include "kvprune/model.hpp"
#include "kvprune/policy.hpp"

namespace kvprune {

struct RunConfig {
  PolicyConfig policy;
  ModelConfig model;
  std::size_t prompt_len = 32;
  std::size_t steps = 256;
  std::vector<std::uint64_t> seeds{0};
  std::optional<std::string> trace_path;  // set => replay mode
  bool shadow = false;
  std::size_t bytes_per_scalar = 2;
  std::size_t replay_head_dim = 128;
  std::string out_dir = ".";

  void validate() const;

  /// Echo of every field, in the same flat keys the JSON config file uses.
  nlohmann::json to_json() const;

  /// Applies the keys present in `j` onto `base`. Unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  static RunConfig from_json(const nlohmann::json& j);
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<StepReport> reports;
  std::vector<StepReport> baseline;  // FullKV stream the summary was measured against
  std::vector<int> tokens;
  RunSummary summary;
  std::optional<std::string> error;  // ingest error after a partial replay
};

/// Live desk-model run for one seed. With `config.shadow` a full-cache
/// session is teacher-forced on the pruned session's tokens to measure KL and
/// retained mass; its cache lengths double as the FullKV baseline.
RunResult run_live(const RunConfig& config, std::uint64_t seed,
                   const PruneEventSink& events = {});

/// FullKV reports for the same prompt/steps, used when no shadow is running.
std::vector<StepReport> run_full_baseline(const RunConfig& config, std::uint64_t seed);

/// Replay of config.trace_path. execute() adds the FullKV replay of the same
/// trace as the baseline and fills in the summary.
RunResult run_replay(const RunConfig& config, const PruneEventSink& events = {});

/// One result per seed (one in total for replay). Baselines and summaries filled in.
std::vector<RunResult> execute(const RunConfig& config);

/// Writes steps/summary/heatmap files for `results` into config.out_dir.
/// A single result writes steps.csv, heatmap.csv, summary.json; several
/// results suffix the CSVs with _seed<N> and write one summary.json array.
void write_outputs(const RunConfig& config, const std::vector<RunResult>& results);

/// Writes a FullKV desk-model trace (decode steps only) for `seed`.
void write_live_trace(const RunConfig& config, std::uint64_t seed, std::ostream& out);

struct SweepGrid {
  std::vector<double> tau;
  std::vector<double> recent_ratio;
  std::vector<double> gamma;
  std::vector<PolicyKind> policies;
};

struct SweepPoint {
  std::size_t index = 0;
  PolicyKind policy = PolicyKind::kLethe;
  double tau = 0.0;
  double recent_ratio = 0.0;
  double gamma = 0.0;
};

struct SweepRow {
  SweepPoint point;
  bool ok = false;
  std::string error;
  RunSummary summary;  // averaged over seeds
};

/// Points in declaration order: tau outermost, then recent_ratio, gamma,
/// policy. An empty axis takes the base config's value; a grid with every
/// axis empty is rejected.
std::vector<SweepPoint> expand_grid(const RunConfig& base, const SweepGrid& grid);

/// Runs every point over the same seeds. A failing point yields a row
/// marked failed and the sweep continues. Rows come back in grid order
/// regardless of `jobs`.
std::vector<SweepRow> sweep(const RunConfig& base, const SweepGrid& grid, std::size_t jobs = 1);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace kvprune
