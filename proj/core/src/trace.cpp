// Copyright 2026 The kvprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvprune/trace.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "kvprune/errors.hpp"
#include "kvprune/metrics.hpp"

namespace kvprune {

namespace {

using nlohmann::json;

std::size_t require_count(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() <= 0) {
    throw TraceError(line, std::string("header field '") + key + "' must be a positive integer");
  }
  return j[key].get<std::size_t>();
}

}  // namespace

TraceReader::TraceReader(std::istream& in) : in_(&in) {
  std::string text;
  line_ = 1;
  if (!std::getline(*in_, text)) throw TraceError(line_, "missing header");
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw TraceError(line_, std::string("header is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string{}) != kTraceFormat) {
    throw TraceError(line_, "header must declare format \"kvtrace\"");
  }
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != kTraceVersion) {
    throw TraceError(line_, "unsupported trace version");
  }
  header_.n_layers = require_count(j, "n_layers", line_);
  header_.heads_q = require_count(j, "heads_q", line_);
  header_.heads_kv = require_count(j, "heads_kv", line_);
  if (header_.heads_q % header_.heads_kv != 0) {
    throw TraceError(line_, "heads_q must be a multiple of heads_kv");
  }
}

std::optional<TraceRecord> TraceReader::next() {
  std::string text;
  while (true) {
    if (!std::getline(*in_, text)) return std::nullopt;
    ++line_;
    if (text.find_first_not_of(" \t\r") != std::string::npos) break;
  }

  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw TraceError(line_, std::string("record is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw TraceError(line_, "record must be a JSON object");
  if (!j.contains("step") || !j["step"].is_number_integer()) {
    throw TraceError(line_, "record needs an integer 'step'");
  }
  if (!j.contains("layer") || !j["layer"].is_number_integer()) {
    throw TraceError(line_, "record needs an integer 'layer'");
  }
  if (!j.contains("heads") || !j["heads"].is_array()) {
    throw TraceError(line_, "record needs a 'heads' array");
  }

  TraceRecord record;
  record.step = j["step"].get<long>();
  const long long layer = j["layer"].get<long long>();
  if (record.step < 0) throw TraceError(line_, "step must be non-negative");
  if (layer < 0 || static_cast<std::size_t>(layer) >= header_.n_layers) {
    throw TraceError(line_, "layer " + std::to_string(layer) + " out of range");
  }
  record.layer = static_cast<std::size_t>(layer);

  if (last_step_ && record.step < *last_step_) {
    throw TraceError(line_, "step " + std::to_string(record.step) + " follows step " +
                                std::to_string(*last_step_));
  }
  if (last_step_ && record.step == *last_step_ && record.layer <= *last_layer_) {
    throw TraceError(line_, "layers must strictly increase within step " +
                                std::to_string(record.step));
  }

  const json& heads = j["heads"];
  if (heads.size() != header_.heads_q) {
    throw TraceError(line_, "expected " + std::to_string(header_.heads_q) + " head rows, got " +
                                std::to_string(heads.size()));
  }
  record.heads.reserve(heads.size());
  for (const json& row : heads) {
    if (!row.is_array() || row.empty()) throw TraceError(line_, "head rows must be non-empty arrays");
    std::vector<double> values;
    values.reserve(row.size());
    for (const json& w : row) {
      if (!w.is_number()) throw TraceError(line_, "attention weights must be numbers");
      const double x = w.get<double>();
      if (!std::isfinite(x) || x < 0.0) {
        throw TraceError(line_, "attention weights must be finite and non-negative");
      }
      values.push_back(x);
    }
    if (!record.heads.empty() && values.size() != record.heads.front().size()) {
      throw TraceError(line_, "head rows differ in length");
    }
    record.heads.push_back(std::move(values));
  }

  last_step_ = record.step;
  last_layer_ = record.layer;
  return record;
}

TraceWriter::TraceWriter(std::ostream& out, const TraceHeader& header) : out_(&out) {
  *out_ << "{\"format\":\"" << kTraceFormat << "\",\"version\":" << kTraceVersion
        << ",\"n_layers\":" << header.n_layers << ",\"heads_q\":" << header.heads_q
        << ",\"heads_kv\":" << header.heads_kv << "}\n";
}

void TraceWriter::write(const TraceRecord& record) {
  *out_ << "{\"step\":" << record.step << ",\"layer\":" << record.layer << ",\"heads\":[";
  for (std::size_t h = 0; h < record.heads.size(); ++h) {
    if (h > 0) *out_ << ',';
    *out_ << '[';
    for (std::size_t j = 0; j < record.heads[h].size(); ++j) {
      if (j > 0) *out_ << ',';
      *out_ << format_number(record.heads[h][j]);
    }
    *out_ << ']';
  }
  *out_ << "]}\n";
}

}  // namespace kvprune
