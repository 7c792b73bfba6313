// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "kvprune/baselines.hpp"
#include "kvprune/errors.hpp"
#include "kvprune/kv_cache.hpp"
#include "kvprune/replay.hpp"
#include "kvprune/session.hpp"
#include "kvprune/sparsity.hpp"
#include "kvprune/trace.hpp"

namespace kvprune {

using nlohmann::json;

void RunConfig::validate() const {
  policy.validate();
  model.validate();
  if (steps == 0) throw ConfigError("steps must be positive");
  if (prompt_len == 0) throw ConfigError("prompt length must be positive");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (bytes_per_scalar == 0) throw ConfigError("bytes per scalar must be positive");
  if (replay_head_dim == 0) throw ConfigError("replay head dimension must be positive");
}

json RunConfig::to_json() const {
  json j;
  j["policy"] = std::string(to_string(policy.kind));
  j["tau"] = policy.lethe.tau;
  j["recent_ratio"] = policy.lethe.recent_ratio;
  j["gamma"] = policy.lethe.gamma;
  j["segments"] = policy.lethe.segments;
  j["sink_len"] = policy.lethe.sink_len;
  j["evict_threshold"] = policy.lethe.evict_threshold_init;
  j["budget"] = policy.baseline.budget;
  j["window"] = policy.baseline.window;
  j["pyramid_top_budget"] = policy.baseline.pyramid_top_budget;
  j["pyramid_bottom_budget"] = policy.baseline.pyramid_bottom_budget;
  j["n_layers"] = model.n_layers;
  j["d_model"] = model.d_model;
  j["heads_q"] = model.heads_q;
  j["heads_kv"] = model.heads_kv;
  j["vocab_size"] = model.vocab_size;
  j["prompt_len"] = prompt_len;
  j["steps"] = steps;
  j["seed"] = seeds;
  j["trace"] = trace_path ? json(*trace_path) : json(nullptr);
  j["shadow"] = shadow;
  j["bytes_per_scalar"] = bytes_per_scalar;
  j["replay_head_dim"] = replay_head_dim;
  j["out_dir"] = out_dir;
  return j;
}

RunConfig RunConfig::from_json(const json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  RunConfig c = std::move(base);
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "policy") c.policy.kind = parse_policy_kind(value.get<std::string>());
      else if (key == "tau") c.policy.lethe.tau = value.get<double>();
      else if (key == "recent_ratio") c.policy.lethe.recent_ratio = value.get<double>();
      else if (key == "gamma") c.policy.lethe.gamma = value.get<double>();
      else if (key == "segments") c.policy.lethe.segments = value.get<std::size_t>();
      else if (key == "sink_len") c.policy.lethe.sink_len = c.policy.baseline.sink_len = value.get<std::size_t>();
      else if (key == "evict_threshold") c.policy.lethe.evict_threshold_init = value.get<std::size_t>();
      else if (key == "budget") c.policy.baseline.budget = value.get<std::size_t>();
      else if (key == "window") c.policy.baseline.window = value.get<std::size_t>();
      else if (key == "pyramid_top_budget") c.policy.baseline.pyramid_top_budget = value.get<std::size_t>();
      else if (key == "pyramid_bottom_budget") c.policy.baseline.pyramid_bottom_budget = value.get<std::size_t>();
      else if (key == "n_layers") c.model.n_layers = value.get<std::size_t>();
      else if (key == "d_model") c.model.d_model = value.get<std::size_t>();
      else if (key == "heads_q") c.model.heads_q = value.get<std::size_t>();
      else if (key == "heads_kv") c.model.heads_kv = value.get<std::size_t>();
      else if (key == "vocab_size") c.model.vocab_size = value.get<std::size_t>();
      else if (key == "prompt_len") c.prompt_len = value.get<std::size_t>();
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "seed") {
        c.seeds = value.is_array() ? value.get<std::vector<std::uint64_t>>()
                                   : std::vector<std::uint64_t>{value.get<std::uint64_t>()};
      } else if (key == "trace") {
        if (value.is_null()) c.trace_path.reset();
        else c.trace_path = value.get<std::string>();
      } else if (key == "shadow") c.shadow = value.get<bool>();
      else if (key == "bytes_per_scalar") c.bytes_per_scalar = value.get<std::size_t>();
      else if (key == "replay_head_dim") c.replay_head_dim = value.get<std::size_t>();
      else if (key == "out_dir") c.out_dir = value.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::from_json(const json& j) { return from_json(j, RunConfig{}); }

namespace {

using Clock = std::chrono::steady_clock;

std::optional<double> safe_sparsity(const TokenScoreVector& scores) {
  try {
    return layer_sparsity(scores);
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

// Head-averaged decode row of a full-cache snapshot, normalized.
std::vector<double> mean_row(const AttentionSnapshot& snapshot) {
  std::vector<double> row(snapshot.key_count(), 0.0);
  double total = 0.0;
  for (std::size_t h = 0; h < snapshot.heads_q(); ++h) {
    const auto r = snapshot.row(h, snapshot.query_rows() - 1);
    for (std::size_t j = 0; j < r.size(); ++j) {
      row[j] += r[j];
      total += r[j];
    }
  }
  for (double& w : row) w /= total;
  return row;
}

ModelConfig session_model(const RunConfig& config, std::uint64_t seed) {
  ModelConfig m = config.model;
  m.seed = seed;
  m.max_steps = config.steps;
  return m;
}

std::vector<StepReport> replay_file(const RunConfig& config, const PolicyConfig& policy,
                                    const PruneEventSink& events, std::optional<std::string>* error) {
  std::ifstream in(*config.trace_path);
  if (!in) throw ConfigError("cannot open trace '" + *config.trace_path + "'");
  ReplayOptions options{config.bytes_per_scalar, config.replay_head_dim};
  ReplayOutcome outcome = replay_trace(in, policy, options, events);
  if (outcome.error && error) *error = outcome.error->what();
  return std::move(outcome.reports);
}

using BaselineCache = std::map<std::uint64_t, std::vector<StepReport>>;

void finish(const RunConfig& config, RunResult& result, const BaselineCache* cached) {
  if (result.reports.empty()) return;
  if (result.baseline.empty()) {
    if (config.policy.kind == PolicyKind::kFull) {
      result.baseline = result.reports;
    } else if (cached && cached->count(result.seed)) {
      result.baseline = cached->at(result.seed);
    } else if (config.trace_path) {
      PolicyConfig full;
      full.kind = PolicyKind::kFull;
      result.baseline = replay_file(config, full, {}, nullptr);
    } else {
      result.baseline = run_full_baseline(config, result.seed);
    }
  }
  // A truncated replay has fewer steps than its baseline; compare what exists.
  result.summary = summarize(result.reports, std::span<const StepReport>(result.baseline));
  result.summary.config = config.to_json();
  result.summary.config["seed"] = result.seed;
}

std::vector<RunResult> execute_with(const RunConfig& config, const BaselineCache* cached) {
  config.validate();
  std::vector<RunResult> results;
  if (config.trace_path) {
    results.push_back(run_replay(config));
  } else {
    for (std::uint64_t seed : config.seeds) results.push_back(run_live(config, seed));
  }
  for (RunResult& r : results) finish(config, r, cached);
  return results;
}

}  // namespace

RunResult run_live(const RunConfig& config, std::uint64_t seed, const PruneEventSink& events) {
  config.validate();
  const Model model = init_model(session_model(config, seed));
  const std::vector<int> prompt = make_prompt(seed, config.prompt_len, model.config.vocab_size);

  auto policy = make_policy(config.policy, model.config.n_layers);
  policy->set_event_sink(events);
  DecodeSession session(model, std::move(policy));
  std::optional<DecodeSession> shadow;
  if (config.shadow) shadow.emplace(model, std::make_unique<FullKvPolicy>());

  RunResult result;
  result.seed = seed;
  result.tokens.push_back(session.prefill(prompt).emitted_token);
  if (shadow) shadow->prefill(prompt);

  const std::size_t n_layers = model.config.n_layers;
  result.reports.reserve(config.steps);
  while (true) {
    const auto started = Clock::now();
    std::optional<StepOutput> out = session.step();
    const auto elapsed = Clock::now() - started;
    if (!out) break;
    result.tokens.push_back(out->emitted_token);

    std::optional<StepOutput> full;
    if (shadow) full = shadow->step(out->input_token);

    StepReport report;
    report.step = out->step;
    report.wall_time_micros =
        std::chrono::duration_cast<std::chrono::microseconds>(elapsed).count();
    StepReport base;
    base.step = out->step;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const LayerStepOutput& layer = out->layers[l];
      LayerMetrics m;
      m.layer = l;
      m.cache_len = layer.cache_len_after;
      m.sparsity = safe_sparsity(layer.scores);
      m.memory_bytes = memory_bytes(session.cache(l), config.bytes_per_scalar);
      if (full) {
        // The shadow cache is never pruned, so slot index equals position.
        const std::vector<double> row = mean_row(full->layers[l].snapshot);
        std::vector<std::size_t> retained(layer.attended_positions.begin(),
                                          layer.attended_positions.end());
        m.retained_mass = retained_mass(row, retained);

        LayerMetrics bm;
        bm.layer = l;
        bm.cache_len = full->layers[l].cache_len_after;
        bm.memory_bytes = memory_bytes(shadow->cache(l), config.bytes_per_scalar);
        base.layers.push_back(bm);
      }
      report.layers.push_back(m);
    }
    if (full) {
      report.kl = kl_divergence(full->logits, out->logits);
      result.baseline.push_back(std::move(base));
    }
    result.reports.push_back(std::move(report));
  }
  return result;
}

std::vector<StepReport> run_full_baseline(const RunConfig& config, std::uint64_t seed) {
  RunConfig full = config;
  full.policy.kind = PolicyKind::kFull;
  full.shadow = false;
  return run_live(full, seed).reports;
}

RunResult run_replay(const RunConfig& config, const PruneEventSink& events) {
  if (!config.trace_path) throw ConfigError("replay needs a trace path");
  config.validate();
  RunResult result;
  result.seed = config.seeds.front();
  result.reports = replay_file(config, config.policy, events, &result.error);
  return result;
}

std::vector<RunResult> execute(const RunConfig& config) { return execute_with(config, nullptr); }

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

void write_outputs(const RunConfig& config, const std::vector<RunResult>& results) {
  const std::filesystem::path dir(config.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());

  const bool single = results.size() == 1;
  json summaries = json::array();
  for (const RunResult& r : results) {
    const std::string suffix = single ? "" : "_seed" + std::to_string(r.seed);
    {
      auto out = open_output(dir / ("steps" + suffix + ".csv"));
      write_step_csv(out, r.reports);
    }
    bool has_series = !r.reports.empty();
    for (const StepReport& s : r.reports) {
      for (const LayerMetrics& m : s.layers) has_series = has_series && m.sparsity.has_value();
    }
    if (has_series) {
      auto out = open_output(dir / ("heatmap" + suffix + ".csv"));
      write_heatmap_csv(out, r.reports);
    }
    json entry;
    entry["config"] = r.summary.config.empty() ? config.to_json() : r.summary.config;
    entry["summary"] = r.reports.empty() ? json(nullptr) : to_json(r.summary);
    if (r.error) entry["error"] = *r.error;
    summaries.push_back(std::move(entry));
  }
  auto out = open_output(dir / "summary.json");
  out << (single ? summaries.front() : summaries).dump(2) << '\n';
}

void write_live_trace(const RunConfig& config, std::uint64_t seed, std::ostream& out) {
  config.validate();
  const Model model = init_model(session_model(config, seed));
  const std::vector<int> prompt = make_prompt(seed, config.prompt_len, model.config.vocab_size);
  DecodeSession session(model, std::make_unique<FullKvPolicy>());
  session.prefill(prompt);

  TraceWriter writer(out, TraceHeader{model.config.n_layers, model.config.heads_q,
                                      model.config.heads_kv});
  while (auto step = session.step()) {
    for (const LayerStepOutput& layer : step->layers) {
      TraceRecord record;
      record.step = step->step;
      record.layer = layer.snapshot.layer();
      for (std::size_t h = 0; h < layer.snapshot.heads_q(); ++h) {
        const auto row = layer.snapshot.row(h, 0);
        record.heads.emplace_back(row.begin(), row.end());
      }
      writer.write(record);
    }
  }
}

std::vector<SweepPoint> expand_grid(const RunConfig& base, const SweepGrid& grid) {
  if (grid.tau.empty() && grid.recent_ratio.empty() && grid.gamma.empty() &&
      grid.policies.empty()) {
    throw ConfigError("sweep grid is empty");
  }
  auto or_base = [](const std::vector<double>& axis, double fallback) {
    return axis.empty() ? std::vector<double>{fallback} : axis;
  };
  const auto taus = or_base(grid.tau, base.policy.lethe.tau);
  const auto ratios = or_base(grid.recent_ratio, base.policy.lethe.recent_ratio);
  const auto gammas = or_base(grid.gamma, base.policy.lethe.gamma);
  const auto policies =
      grid.policies.empty() ? std::vector<PolicyKind>{base.policy.kind} : grid.policies;

  std::vector<SweepPoint> points;
  for (double tau : taus) {
    for (double ratio : ratios) {
      for (double gamma : gammas) {
        for (PolicyKind kind : policies) {
          points.push_back(SweepPoint{points.size(), kind, tau, ratio, gamma});
        }
      }
    }
  }
  return points;
}

std::vector<SweepRow> sweep(const RunConfig& base, const SweepGrid& grid, std::size_t jobs) {
  const std::vector<SweepPoint> points = expand_grid(base, grid);
  base.model.validate();

  // FullKV baselines depend only on the seed, so every point shares them.
  BaselineCache baselines;
  if (!base.trace_path && !base.shadow) {
    for (std::uint64_t seed : base.seeds) baselines[seed] = run_full_baseline(base, seed);
  }

  std::vector<SweepRow> rows(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      const SweepPoint& p = points[i];
      SweepRow& row = rows[i];
      row.point = p;
      try {
        RunConfig config = base;
        config.policy.kind = p.policy;
        config.policy.lethe.tau = p.tau;
        config.policy.lethe.recent_ratio = p.recent_ratio;
        config.policy.lethe.gamma = p.gamma;
        std::vector<RunResult> results = execute_with(config, &baselines);
        std::vector<RunSummary> summaries;
        for (RunResult& r : results) {
          if (r.error) throw std::runtime_error(*r.error);
          summaries.push_back(std::move(r.summary));
        }
        row.summary = average_summaries(summaries);
        row.summary.config = config.to_json();
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, points.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "index,policy,tau,recent_ratio,gamma,status,retained_fraction,steady_retained_fraction,"
         "mean_kl,mean_retained_mass,mean_memory_bytes,tokens_per_second,error\n";
  for (const SweepRow& r : rows) {
    out << r.point.index << ',' << to_string(r.point.policy) << ',' << format_number(r.point.tau)
        << ',' << format_number(r.point.recent_ratio) << ',' << format_number(r.point.gamma) << ','
        << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      double mem = 0.0;
      for (double m : r.summary.mean_memory_bytes) mem += m;
      if (!r.summary.mean_memory_bytes.empty()) {
        mem /= static_cast<double>(r.summary.mean_memory_bytes.size());
      }
      out << format_optional(r.summary.retained_fraction) << ','
          << format_optional(r.summary.steady_retained_fraction) << ','
          << format_optional(r.summary.mean_kl) << ','
          << format_optional(r.summary.mean_retained_mass) << ',' << format_number(mem) << ','
          << format_number(r.summary.tokens_per_second) << ",\n";
    } else {
      std::string message = r.error;
      std::replace(message.begin(), message.end(), '"', '\'');
      out << ",,,,,,\"" << message << "\"\n";
    }
  }
}

}  // namespace kvprune
