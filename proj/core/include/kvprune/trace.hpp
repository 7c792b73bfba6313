// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace kvprune {

// Line-delimited JSON attention trace:
//   {"format":"kvtrace","version":1,"n_layers":L,"heads_q":H,"heads_kv":G}
//   {"step":s,"layer":l,"heads":[[w, ...], ...]}   one line per (step, layer)
// `heads` holds heads_q rows over every key position present at that step.
// Steps are non-decreasing; within a step layers strictly increase.

inline constexpr const char* kTraceFormat = "kvtrace";
inline constexpr int kTraceVersion = 1;

struct TraceHeader {
  std::size_t n_layers = 0;
  std::size_t heads_q = 0;
  std::size_t heads_kv = 0;
};

struct TraceRecord {
  long step = 0;
  std::size_t layer = 0;
  std::vector<std::vector<double>> heads;

  std::size_t key_count() const noexcept { return heads.empty() ? 0 : heads.front().size(); }
};

/// Streaming reader that validates each line as it is consumed. Every
/// failure is a TraceError naming the offending line.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in);

  const TraceHeader& header() const noexcept { return header_; }

  /// Next record, or empty at a clean end of input.
  std::optional<TraceRecord> next();

  std::size_t line() const noexcept { return line_; }

 private:
  std::istream* in_;
  TraceHeader header_;
  std::size_t line_ = 0;
  std::optional<long> last_step_;
  std::optional<std::size_t> last_layer_;
};

class TraceWriter {
 public:
  TraceWriter(std::ostream& out, const TraceHeader& header);

  void write(const TraceRecord& record);

 private:
  std::ostream* out_;
};

}  // namespace kvprune
