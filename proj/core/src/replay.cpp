// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/replay.hpp"

#include <chrono>
#include <string>

#include "kvprune/errors.hpp"
#include "kvprune/sparsity.hpp"

namespace kvprune {

namespace {

class ReplayState {
 public:
  ReplayState(const TraceHeader& header, const PolicyConfig& policy, const ReplayOptions& options,
              const PruneEventSink& events)
      : header_(header), options_(options), policy_(make_policy(policy, header.n_layers)) {
    policy_->set_event_sink(events);
    caches_.reserve(header.n_layers);
    for (std::size_t l = 0; l < header.n_layers; ++l) {
      caches_.emplace_back(l, CacheShape{header.heads_kv, options.head_dim},
                           /*store_payload=*/false);
    }
    seen_.assign(header.n_layers, 0);
  }

  LayerMetrics apply(const TraceRecord& record) {
    const std::size_t l = record.layer;
    const std::size_t k = record.key_count();
    KvCacheLayer& cache = caches_[l];
    if (k < seen_[l]) {
      throw DomainError("layer " + std::to_string(l) + " key count shrank from " +
                        std::to_string(seen_[l]) + " to " + std::to_string(k));
    }
    const bool first = seen_[l] == 0;
    for (std::size_t pos = seen_[l]; pos < k; ++pos) {
      const Provenance provenance =
          first && pos + 1 < k ? Provenance::kPrompt : Provenance::kGenerated;
      cache.append({}, {}, TokenMeta{static_cast<std::int64_t>(pos), record.step, provenance});
    }
    seen_[l] = k;

    const std::vector<std::int64_t> positions = cache.positions();
    AttentionSnapshot snapshot(l, record.step, header_.heads_q, header_.heads_kv, 1,
                               positions.size());
    std::vector<double> full_row(k, 0.0);
    double full_total = 0.0;
    for (std::size_t h = 0; h < header_.heads_q; ++h) {
      const std::vector<double>& recorded = record.heads[h];
      for (std::size_t j = 0; j < k; ++j) {
        full_row[j] += recorded[j];
        full_total += recorded[j];
      }
      auto row = snapshot.row(h, 0);
      double kept = 0.0;
      for (std::size_t i = 0; i < positions.size(); ++i) {
        row[i] = recorded[static_cast<std::size_t>(positions[i])];
        kept += row[i];
      }
      if (kept > 0.0) {
        for (double& w : row) w /= kept;
      }
    }

    LayerMetrics metrics;
    metrics.layer = l;
    if (full_total > 0.0) {
      for (double& w : full_row) w /= full_total;
      std::vector<std::size_t> retained(positions.begin(), positions.end());
      metrics.retained_mass = retained_mass(full_row, retained);
    }

    TokenScoreVector scores = kv_head_scores(snapshot);
    double score_total = 0.0;
    for (double s : scores) score_total += s;
    if (scores.size() >= 2 && score_total > 0.0) metrics.sparsity = layer_sparsity(scores);

    if (auto plan = policy_->observe(l, record.step, scores, cache)) {
      if (!plan->keeps_everything(cache.size())) cache.compact(*plan);
    }
    metrics.cache_len = cache.size();
    metrics.memory_bytes = memory_bytes(cache, options_.bytes_per_scalar);
    return metrics;
  }

  const KvCacheLayer& cache(std::size_t layer) const { return caches_[layer]; }

 private:
  TraceHeader header_;
  ReplayOptions options_;
  std::unique_ptr<CachePolicy> policy_;
  std::vector<KvCacheLayer> caches_;
  std::vector<std::size_t> seen_;
};

}  // namespace

ReplayOutcome replay_trace(std::istream& in, const PolicyConfig& policy,
                           const ReplayOptions& options, const PruneEventSink& events,
                           const ReplayObserver& observer) {
  ReplayOutcome outcome;
  std::optional<TraceReader> reader;
  try {
    reader.emplace(in);
  } catch (const TraceError& e) {
    outcome.error = e;
    return outcome;
  }
  outcome.header = reader->header();
  ReplayState state(outcome.header, policy, options, events);

  using Clock = std::chrono::steady_clock;
  std::optional<StepReport> pending;
  Clock::time_point started;
  auto flush = [&] {
    pending->wall_time_micros =
        std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - started).count();
    outcome.reports.push_back(std::move(*pending));
    pending.reset();
  };

  try {
    while (auto record = reader->next()) {
      if (pending && record->step != pending->step) flush();
      if (!pending) {
        pending.emplace();
        pending->step = record->step;
        started = Clock::now();
      }
      try {
        pending->layers.push_back(state.apply(*record));
      } catch (const DomainError& e) {
        throw TraceError(reader->line(), e.what());
      } catch (const ConfigError& e) {
        throw TraceError(reader->line(), e.what());
      }
      if (observer) observer(record->step, state.cache(record->layer));
    }
    if (pending) flush();
  } catch (const TraceError& e) {
    outcome.error = e;
  }
  return outcome;
}

}  // namespace kvprune
