// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>

#include "kvprune/errors.hpp"
#include "kvprune/model.hpp"

namespace kvprune {

double retained_mass(std::span<const double> full_row, std::span<const std::size_t> retained) {
  double total = 0.0;
  for (double w : full_row) {
    if (!(w >= 0.0)) throw DomainError("attention row has a negative entry");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-5) {
    throw DomainError("attention row is not normalized (sums to " + format_number(total) + ")");
  }
  std::vector<std::size_t> unique(retained.begin(), retained.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  double mass = 0.0;
  for (std::size_t i : unique) {
    if (i >= full_row.size()) {
      throw DomainError("retained position " + std::to_string(i) + " outside a row of length " +
                        std::to_string(full_row.size()));
    }
    mass += full_row[i];
  }
  return std::clamp(mass, 0.0, 1.0);
}

double kl_divergence(std::span<const double> logits_p, std::span<const double> logits_q) {
  if (logits_p.size() != logits_q.size() || logits_p.empty()) {
    throw DomainError("KL needs two logit vectors of equal, non-zero length");
  }
  const std::vector<double> log_p = kernels::log_softmax(logits_p);
  const std::vector<double> log_q = kernels::log_softmax(logits_q);
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  return std::max(0.0, kl);
}

namespace {

std::map<long, const StepReport*> key_by_step(std::span<const StepReport> reports) {
  std::map<long, const StepReport*> keyed;
  for (const StepReport& r : reports) {
    if (!keyed.emplace(r.step, &r).second) {
      throw DomainError("duplicate report for step " + std::to_string(r.step));
    }
  }
  return keyed;
}

std::size_t total_cache(const StepReport& r) {
  std::size_t total = 0;
  for (const LayerMetrics& m : r.layers) total += m.cache_len;
  return total;
}

}  // namespace

RunSummary summarize(std::span<const StepReport> reports,
                     std::optional<std::span<const StepReport>> baseline) {
  if (reports.empty()) throw DomainError("cannot summarize an empty report stream");
  const auto keyed = key_by_step(reports);

  RunSummary s;
  s.steps = keyed.size();
  std::size_t n_layers = 0;
  for (const auto& [step, r] : keyed) {
    for (const LayerMetrics& m : r->layers) n_layers = std::max(n_layers, m.layer + 1);
  }
  s.mean_memory_bytes.assign(n_layers, 0.0);
  s.max_memory_bytes.assign(n_layers, 0);
  std::vector<std::size_t> layer_samples(n_layers, 0);

  double kl_sum = 0.0;
  std::size_t kl_count = 0;
  double mass_sum = 0.0;
  std::size_t mass_count = 0;
  std::int64_t wall = 0;
  for (const auto& [step, r] : keyed) {
    for (const LayerMetrics& m : r->layers) {
      s.mean_memory_bytes[m.layer] += static_cast<double>(m.memory_bytes);
      s.max_memory_bytes[m.layer] = std::max(s.max_memory_bytes[m.layer], m.memory_bytes);
      ++layer_samples[m.layer];
      if (m.retained_mass) {
        mass_sum += *m.retained_mass;
        ++mass_count;
      }
    }
    if (r->kl) {
      kl_sum += *r->kl;
      ++kl_count;
    }
    wall += r->wall_time_micros;
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (layer_samples[l] > 0) s.mean_memory_bytes[l] /= static_cast<double>(layer_samples[l]);
  }
  if (kl_count > 0) s.mean_kl = kl_sum / static_cast<double>(kl_count);
  if (mass_count > 0) s.mean_retained_mass = mass_sum / static_cast<double>(mass_count);
  if (wall > 0) s.tokens_per_second = static_cast<double>(s.steps) / (static_cast<double>(wall) * 1e-6);

  if (baseline) {
    const auto base = key_by_step(*baseline);
    std::vector<double> ratios;
    ratios.reserve(keyed.size());
    for (const auto& [step, r] : keyed) {
      const auto it = base.find(step);
      if (it == base.end()) {
        throw DomainError("baseline has no report for step " + std::to_string(step));
      }
      const std::size_t full = total_cache(*it->second);
      if (full == 0) throw DomainError("baseline cache is empty at step " + std::to_string(step));
      ratios.push_back(static_cast<double>(total_cache(*r)) / static_cast<double>(full));
    }
    double all = 0.0;
    double steady = 0.0;
    const std::size_t steady_from = ratios.size() / 2;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      all += ratios[i];
      if (i >= steady_from) steady += ratios[i];
    }
    s.retained_fraction = all / static_cast<double>(ratios.size());
    s.steady_retained_fraction = steady / static_cast<double>(ratios.size() - steady_from);
  }
  return s;
}

RunSummary average_summaries(std::span<const RunSummary> summaries) {
  if (summaries.empty()) throw DomainError("no summaries to average");
  RunSummary out = summaries.front();
  if (summaries.size() == 1) return out;

  auto mean_optional = [&](auto field) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const RunSummary& s : summaries) {
      if (const auto& v = s.*field) {
        sum += *v;
        ++n;
      }
    }
    return n == 0 ? std::nullopt : std::optional<double>(sum / static_cast<double>(n));
  };
  out.retained_fraction = mean_optional(&RunSummary::retained_fraction);
  out.steady_retained_fraction = mean_optional(&RunSummary::steady_retained_fraction);
  out.mean_kl = mean_optional(&RunSummary::mean_kl);
  out.mean_retained_mass = mean_optional(&RunSummary::mean_retained_mass);

  const double n = static_cast<double>(summaries.size());
  out.tokens_per_second = 0.0;
  for (const RunSummary& s : summaries) out.tokens_per_second += s.tokens_per_second / n;
  for (std::size_t l = 0; l < out.mean_memory_bytes.size(); ++l) {
    double sum = 0.0;
    std::size_t peak = 0;
    for (const RunSummary& s : summaries) {
      if (l < s.mean_memory_bytes.size()) sum += s.mean_memory_bytes[l];
      if (l < s.max_memory_bytes.size()) peak = std::max(peak, s.max_memory_bytes[l]);
    }
    out.mean_memory_bytes[l] = sum / n;
    out.max_memory_bytes[l] = peak;
  }
  return out;
}

nlohmann::json to_json(const RunSummary& summary) {
  auto optional_json = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["steps"] = summary.steps;
  j["mean_memory_bytes"] = summary.mean_memory_bytes;
  j["max_memory_bytes"] = summary.max_memory_bytes;
  j["retained_fraction"] = optional_json(summary.retained_fraction);
  j["steady_retained_fraction"] = optional_json(summary.steady_retained_fraction);
  j["mean_kl"] = optional_json(summary.mean_kl);
  j["mean_retained_mass"] = optional_json(summary.mean_retained_mass);
  j["tokens_per_second"] = summary.tokens_per_second;
  return j;
}

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

std::string format_optional(const std::optional<double>& value) {
  return value ? format_number(*value) : std::string{};
}

void write_step_csv(std::ostream& out, std::span<const StepReport> reports) {
  out << kStepCsvHeader << '\n';
  for (const StepReport& r : reports) {
    for (const LayerMetrics& m : r.layers) {
      out << r.step << ',' << m.layer << ',' << m.cache_len << ',' << format_optional(m.sparsity)
          << ',' << m.memory_bytes << ',' << format_optional(m.retained_mass) << ','
          << format_optional(r.kl) << '\n';
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::optional<double> parse_optional(const std::string& field) {
  if (field.empty()) return std::nullopt;
  return std::stod(field);
}

}  // namespace

std::vector<StepReport> read_step_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kStepCsvHeader) {
    throw DomainError("step CSV must start with header '" + std::string(kStepCsvHeader) + "'");
  }
  std::vector<StepReport> reports;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw DomainError("step CSV row " + std::to_string(row) + " has " +
                                         std::to_string(f.size()) + " fields");
    try {
      const long step = std::stol(f[0]);
      if (reports.empty() || reports.back().step != step) {
        reports.emplace_back();
        reports.back().step = step;
        reports.back().kl = parse_optional(f[6]);
      }
      LayerMetrics m;
      m.layer = std::stoul(f[1]);
      m.cache_len = std::stoul(f[2]);
      m.sparsity = parse_optional(f[3]);
      m.memory_bytes = std::stoul(f[4]);
      m.retained_mass = parse_optional(f[5]);
      reports.back().layers.push_back(m);
    } catch (const std::logic_error&) {
      throw DomainError("step CSV row " + std::to_string(row) + " is malformed");
    }
  }
  return reports;
}

void write_heatmap_csv(std::ostream& out, std::span<const StepReport> reports) {
  if (reports.empty()) throw DomainError("no sparsity series to export");
  for (const StepReport& r : reports) {
    for (const LayerMetrics& m : r.layers) {
      if (!m.sparsity) {
        throw DomainError("missing sparsity for step " + std::to_string(r.step) + " layer " +
                          std::to_string(m.layer));
      }
    }
  }
  out << kHeatmapCsvHeader << '\n';
  for (const StepReport& r : reports) {
    for (const LayerMetrics& m : r.layers) {
      out << r.step << ',' << m.layer << ',' << format_number(*m.sparsity) << '\n';
    }
  }
}

}  // namespace kvprune
