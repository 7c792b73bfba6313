// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

// kvprune: run, sweep and replay KV-cache eviction experiments.
//
//   kvprune --policy lethe --tau 400 --recent-ratio 0.3 --steps 1000 --seed 1,2,3 --shadow
//   kvprune sweep --grid-tau 20,100,400,1000 --steps 500 --out-dir sweep/
//   kvprune record-trace --steps 200 --seed 7 --out desk.kvtrace
//   kvprune --trace desk.kvtrace --policy streaming --out-dir replay/
//   kvprune heatmap --in out/steps.csv --out out/heatmap.csv

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kvprune/errors.hpp"
#include "kvprune/metrics.hpp"
#include "kvprune/policy.hpp"
#include "kvprune/runner.hpp"

namespace {

using nlohmann::json;

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> policy;
  std::optional<double> tau;
  std::optional<double> recent_ratio;
  std::optional<double> gamma;
  std::optional<std::size_t> segments;
  std::optional<std::size_t> sink_len;
  std::optional<std::size_t> evict_threshold;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> window;
  std::optional<std::size_t> pyramid_top;
  std::optional<std::size_t> pyramid_bottom;
  std::optional<std::size_t> steps;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> trace;
  bool shadow = false;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> prompt_len;
  std::optional<std::size_t> n_layers;
  std::optional<std::size_t> d_model;
  std::optional<std::size_t> heads_q;
  std::optional<std::size_t> heads_kv;
  std::optional<std::size_t> vocab;
  std::optional<std::size_t> bytes_per_scalar;
};

void add_run_flags(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config, "JSON config file; explicit flags override it");
  app.add_option("--policy", f.policy, "full | h2o | streaming | pyramid | lethe (default lethe)");
  app.add_option("--tau", f.tau, "Lethe sparse ratio, > 1 (default 400)");
  app.add_option("--recent-ratio", f.recent_ratio, "Lethe recent window fraction (default 0.3)");
  app.add_option("--gamma", f.gamma, "Lethe score decay in [0,1] (default 0.9)");
  app.add_option("--segments", f.segments, "Lethe breakpoint segments D (default 10)");
  app.add_option("--sink-len", f.sink_len, "Attention sink tokens (default 4)");
  app.add_option("--evict-threshold", f.evict_threshold,
                 "Lethe initial eviction threshold in tokens (default 1024)");
  app.add_option("--budget", f.budget, "h2o/streaming per-layer budget (default 128)");
  app.add_option("--window", f.window, "h2o/streaming/pyramid recent window (default 64)");
  app.add_option("--pyramid-top", f.pyramid_top, "pyramid budget at the last layer (default 64)");
  app.add_option("--pyramid-bottom", f.pyramid_bottom,
                 "pyramid budget at layer 0 (default 192)");
  app.add_option("--steps", f.steps, "Decode steps (default 256)");
  app.add_option("--seed", f.seeds, "Seed or comma-separated seeds (default 0)")->delimiter(',');
  app.add_option("--trace", f.trace, "Replay this kvtrace file instead of the desk model");
  app.add_flag("--shadow", f.shadow, "Run a full-cache shadow session for KL and retained mass");
  app.add_option("--out-dir", f.out_dir, "Output directory (default .)");
  app.add_option("--prompt-len", f.prompt_len, "Prompt tokens (default 32)");
  app.add_option("--layers", f.n_layers, "Model layers (default 4)");
  app.add_option("--d-model", f.d_model, "Model width (default 64)");
  app.add_option("--heads-q", f.heads_q, "Query heads (default 8)");
  app.add_option("--heads-kv", f.heads_kv, "KV heads (default 2)");
  app.add_option("--vocab", f.vocab, "Vocabulary size (default 256)");
  app.add_option("--bytes-per-scalar", f.bytes_per_scalar, "Bytes per cached scalar (default 2)");
}

kvprune::RunConfig resolve(const Flags& f) {
  kvprune::RunConfig config;
  if (f.config) {
    std::ifstream in(*f.config);
    if (!in) throw kvprune::ConfigError("cannot open config '" + *f.config + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw kvprune::ConfigError("config '" + *f.config + "' is not valid JSON: " + e.what());
    }
    config = kvprune::RunConfig::from_json(j, config);
  }

  json overrides = json::object();
  auto set = [&](const char* key, const auto& value) {
    if (value) overrides[key] = *value;
  };
  set("policy", f.policy);
  set("tau", f.tau);
  set("recent_ratio", f.recent_ratio);
  set("gamma", f.gamma);
  set("segments", f.segments);
  set("sink_len", f.sink_len);
  set("evict_threshold", f.evict_threshold);
  set("budget", f.budget);
  set("window", f.window);
  set("pyramid_top_budget", f.pyramid_top);
  set("pyramid_bottom_budget", f.pyramid_bottom);
  set("steps", f.steps);
  set("trace", f.trace);
  set("out_dir", f.out_dir);
  set("prompt_len", f.prompt_len);
  set("n_layers", f.n_layers);
  set("d_model", f.d_model);
  set("heads_q", f.heads_q);
  set("heads_kv", f.heads_kv);
  set("vocab_size", f.vocab);
  set("bytes_per_scalar", f.bytes_per_scalar);
  if (!f.seeds.empty()) overrides["seed"] = f.seeds;
  if (f.shadow) overrides["shadow"] = true;
  config = kvprune::RunConfig::from_json(overrides, config);
  config.validate();
  return config;
}

std::vector<kvprune::PolicyKind> parse_policies(const std::vector<std::string>& names) {
  std::vector<kvprune::PolicyKind> kinds;
  for (const auto& n : names) kinds.push_back(kvprune::parse_policy_kind(n));
  return kinds;
}

int do_run(const Flags& flags) {
  const kvprune::RunConfig config = resolve(flags);
  const auto results = kvprune::execute(config);
  kvprune::write_outputs(config, results);
  int status = 0;
  for (const auto& r : results) {
    if (r.error) {
      std::cerr << "kvprune: " << *r.error << '\n';
      status = 1;
    }
  }
  for (const auto& r : results) {
    if (r.reports.empty()) continue;
    const auto& s = r.summary;
    std::cout << "seed " << r.seed << ": steps=" << s.steps
              << " retained_fraction=" << kvprune::format_optional(s.retained_fraction)
              << " mean_kl=" << kvprune::format_optional(s.mean_kl)
              << " tokens/s=" << kvprune::format_number(s.tokens_per_second) << '\n';
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KV-cache eviction policy simulator"};
  app.fallthrough();
  Flags flags;
  add_run_flags(app, flags);

  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over tau x recent ratio x gamma x policy");
  std::vector<double> grid_tau, grid_ratio, grid_gamma;
  std::vector<std::string> grid_policy;
  std::size_t jobs = 1;
  sweep_cmd->add_option("--grid-tau", grid_tau, "tau values")->delimiter(',');
  sweep_cmd->add_option("--grid-recent-ratio", grid_ratio, "recent ratio values")->delimiter(',');
  sweep_cmd->add_option("--grid-gamma", grid_gamma, "gamma values")->delimiter(',');
  sweep_cmd->add_option("--grid-policy", grid_policy, "policies")->delimiter(',');
  sweep_cmd->add_option("--jobs", jobs, "Concurrent grid points (default 1)");

  auto* heatmap_cmd = app.add_subcommand("heatmap", "Long-format sparsity CSV from a step CSV");
  std::string heatmap_in, heatmap_out;
  heatmap_cmd->add_option("--in", heatmap_in, "steps.csv from a run")->required();
  heatmap_cmd->add_option("--out", heatmap_out, "Output CSV")->required();

  auto* record_cmd = app.add_subcommand("record-trace", "Write a FullKV desk-model trace");
  std::string record_out;
  record_cmd->add_option("--out", record_out, "Output trace path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sweep_cmd) {
      const kvprune::RunConfig config = resolve(flags);
      kvprune::SweepGrid grid{grid_tau, grid_ratio, grid_gamma, parse_policies(grid_policy)};
      const auto rows = kvprune::sweep(config, grid, jobs);
      std::filesystem::create_directories(config.out_dir);
      const auto path = std::filesystem::path(config.out_dir) / "sweep.csv";
      std::ofstream out(path);
      if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
      kvprune::write_sweep_csv(out, rows);
      int failed = 0;
      for (const auto& r : rows) {
        if (!r.ok) {
          ++failed;
          std::cerr << "kvprune: point " << r.point.index << " failed: " << r.error << '\n';
        }
      }
      std::cout << rows.size() << " points, " << failed << " failed -> " << path.string() << '\n';
      return 0;
    }
    if (*heatmap_cmd) {
      std::ifstream in(heatmap_in);
      if (!in) throw std::runtime_error("cannot open '" + heatmap_in + "'");
      const auto reports = kvprune::read_step_csv(in);
      std::ofstream out(heatmap_out);
      if (!out) throw std::runtime_error("cannot write '" + heatmap_out + "'");
      kvprune::write_heatmap_csv(out, reports);
      return 0;
    }
    if (*record_cmd) {
      const kvprune::RunConfig config = resolve(flags);
      std::ofstream out(record_out);
      if (!out) throw std::runtime_error("cannot write '" + record_out + "'");
      kvprune::write_live_trace(config, config.seeds.front(), out);
      return 0;
    }
    return do_run(flags);
  } catch (const kvprune::ConfigError& e) {
    std::cerr << "kvprune: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "kvprune: " << e.what() << '\n';
    return 1;
  }
}
