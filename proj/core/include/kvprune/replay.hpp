// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <istream>
#include <optional>
#include <vector>

#include "kvprune/errors.hpp"
#include "kvprune/kv_cache.hpp"
#include "kvprune/metrics.hpp"
#include "kvprune/policy.hpp"
#include "kvprune/trace.hpp"

namespace kvprune {

struct ReplayOptions {
  std::size_t bytes_per_scalar = 2;
  std::size_t head_dim = 128;  // traces carry no tensors; used for memory accounting only
};

/// Called after each record is applied, with the layer's cache post-compaction.
using ReplayObserver = std::function<void(long step, const KvCacheLayer& cache)>;

struct ReplayOutcome {
  TraceHeader header;
  std::vector<StepReport> reports;  // completed steps only
  std::optional<TraceError> error;
};

/// Runs a policy over recorded full-cache attention.
///
/// Each layer tracks which recorded key positions it still holds; a record's
/// rows are gathered onto those positions and renormalized per head, as a
/// softmax over the shortened key axis would be. Retained mass is measured
/// against the recorded full rows. No tokens are generated, so KL is absent.
///
/// Ingest errors stop the replay; the reports of fully processed steps are
/// kept and the error is returned alongside them.
ReplayOutcome replay_trace(std::istream& in, const PolicyConfig& policy,
                           const ReplayOptions& options = {}, const PruneEventSink& events = {},
                           const ReplayObserver& observer = {});

}  // namespace kvprune
