// Copyright 2026 The flexattn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run reports and heatmap grids.

#ifndef FLEXATTN_REPORT_HPP_
#define FLEXATTN_REPORT_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexattn/engine.hpp"

namespace flexattn {

inline constexpr const char* kToolName = "flexattn";
inline constexpr const char* kToolVersion = "0.1.0";

struct HeadEntry {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t seq_len = 0;
  std::size_t dim = 0;
  HeadReport report;
};

struct PatternCount {
  std::size_t layer = 0;
  std::size_t vertical_slash = 0;
  std::size_t query_specific = 0;
  friend bool operator==(const PatternCount&, const PatternCount&) = default;
};

struct RunAggregates {
  std::size_t head_count = 0;
  double mean_sparsity = 0.0;
  std::vector<PatternCount> pattern_counts;  // ascending layer
  std::uint64_t total_flops = 0;             // sum of sparse totals
  std::uint64_t dense_flops = 0;
  double speedup = 0.0;                      // dense_flops / total_flops
  friend bool operator==(const RunAggregates&, const RunAggregates&) = default;
};

struct RunReport {
  HeadConfig config;
  std::size_t layer_heads = 0;  // heads per layer
  bool check_bound = false;
  std::map<std::string, std::string> input_digests;  // name -> crc32:xxxxxxxx
  std::vector<HeadEntry> heads;
  RunAggregates aggregates;
};

// Sums in head order; mean sparsity is the sum divided by the head count.
RunAggregates compute_aggregates(const std::vector<HeadEntry>& heads);

// Field order is fixed; doubles use the shortest round-trip representation.
nlohmann::ordered_json config_to_json(const HeadConfig& cfg);
nlohmann::ordered_json report_to_json(const RunReport& report);
std::string render_report(const RunReport& report);  // with trailing newline

enum class HeatmapKind { kSparsity, kPattern, kJsd };

// Throws std::invalid_argument for names other than sparsity|pattern|jsd.
HeatmapKind parse_heatmap_kind(const std::string& name);
const char* to_string(HeatmapKind kind);

// Layer rows by head columns. Cells without a head stay empty.
std::string heatmap_csv(const nlohmann::ordered_json& report, HeatmapKind kind);

// Shortest round-trip decimal form.
std::string format_double(double x);

}  // namespace flexattn

#endif  // FLEXATTN_REPORT_HPP_
