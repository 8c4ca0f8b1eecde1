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

#include "flexattn/report.hpp"

#include <charconv>
#include <set>
#include <stdexcept>
#include <system_error>

namespace flexattn {
namespace {

using Json = nlohmann::ordered_json;

const char* qa_mode_name(QaMode m) {
  return m == QaMode::kGlobalFlatten ? "global" : "per-query";
}

template <typename T>
Json optional_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

Json flops_to_json(const FlopRecord& f) {
  Json j;
  j["representative"] = f.representative;
  j["pattern_search"] = f.pattern_search;
  j["index_build"] = f.index_build;
  j["sparse_attention"] = f.sparse_attention;
  j["sparse_total"] = f.sparse_total();
  j["dense"] = f.dense;
  j["speedup"] = f.speedup();
  return j;
}

Json head_to_json(const HeadEntry& e) {
  const HeadReport& r = e.report;
  Json j;
  j["layer"] = e.layer;
  j["head"] = e.head;
  j["seq_len"] = e.seq_len;
  j["dim"] = e.dim;
  j["pattern"] = to_string(r.pattern.kind);
  j["pattern_code"] = static_cast<int>(r.pattern.kind);
  j["js_distance"] = r.pattern.js_distance;
  j["dense_fallback"] = r.dense_fallback;
  j["selected_tokens"] = r.selected_tokens;
  j["total_causal_pairs"] = r.total_causal_pairs;
  j["visited_block_pairs"] = r.visited_block_pairs;
  j["vertical_lines"] = r.vertical_lines;
  j["slash_lines"] = r.slash_lines;
  j["selected_blocks"] = r.selected_blocks;
  j["sparsity_ratio"] = r.sparsity_ratio;
  j["estimated_coverage"] = r.estimated_coverage;
  j["flops"] = flops_to_json(r.flops);
  j["true_coverage"] = optional_json(r.true_coverage);
  j["min_true_coverage"] = optional_json(r.min_true_coverage);
  j["error_linf"] = optional_json(r.error_linf);
  j["error_l2"] = optional_json(r.error_l2);
  j["bound_violations"] = optional_json(r.bound_violations);
  return j;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  if (res.ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, res.ptr);
}

RunAggregates compute_aggregates(const std::vector<HeadEntry>& heads) {
  RunAggregates a;
  a.head_count = heads.size();
  double sparsity_sum = 0.0;
  std::map<std::size_t, PatternCount> per_layer;
  for (const auto& e : heads) {
    sparsity_sum += e.report.sparsity_ratio;
    a.total_flops += e.report.flops.sparse_total();
    a.dense_flops += e.report.flops.dense;
    PatternCount& pc = per_layer[e.layer];
    pc.layer = e.layer;
    if (e.report.pattern.kind == PatternKind::kVerticalSlash) {
      ++pc.vertical_slash;
    } else {
      ++pc.query_specific;
    }
  }
  if (!heads.empty()) {
    a.mean_sparsity = sparsity_sum / static_cast<double>(heads.size());
  }
  for (const auto& [layer, pc] : per_layer) a.pattern_counts.push_back(pc);
  if (a.total_flops > 0) {
    a.speedup = static_cast<double>(a.dense_flops) /
                static_cast<double>(a.total_flops);
  }
  return a;
}

Json config_to_json(const HeadConfig& cfg) {
  Json j;
  j["block_size"] = cfg.block;
  j["tau"] = cfg.tau;
  j["gamma"] = cfg.budget.gamma;
  j["min_budget_tokens"] = cfg.budget.min_budget_tokens;
  j["max_budget_tokens"] = optional_json(cfg.budget.max_budget_tokens);
  j["keep_first_last_blocks"] = cfg.budget.keep_first_last_blocks;
  j["qa_mode"] = qa_mode_name(cfg.budget.qa_mode);
  j["representative"] =
      cfg.representative == RepresentativePosition::kLast ? "last" : "middle";
  j["error_metrics"] = cfg.collect_error_metrics;
  return j;
}

Json report_to_json(const RunReport& report) {
  Json j;
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  Json cfg = config_to_json(report.config);
  cfg["layer_heads"] = report.layer_heads;
  cfg["check_bound"] = report.check_bound;
  j["config"] = std::move(cfg);
  Json digests = Json::object();
  for (const auto& [name, crc] : report.input_digests) digests[name] = crc;
  j["inputs"] = std::move(digests);
  Json heads = Json::array();
  for (const auto& e : report.heads) heads.push_back(head_to_json(e));
  j["heads"] = std::move(heads);

  const RunAggregates& a = report.aggregates;
  Json agg;
  agg["head_count"] = a.head_count;
  agg["mean_sparsity"] = a.mean_sparsity;
  Json counts = Json::array();
  for (const auto& pc : a.pattern_counts) {
    counts.push_back({{"layer", pc.layer},
                      {"vertical_slash", pc.vertical_slash},
                      {"query_specific", pc.query_specific}});
  }
  agg["pattern_counts"] = std::move(counts);
  agg["total_flops"] = a.total_flops;
  agg["dense_flops"] = a.dense_flops;
  agg["speedup"] = a.speedup;
  j["aggregates"] = std::move(agg);
  return j;
}

std::string render_report(const RunReport& report) {
  return report_to_json(report).dump(2) + "\n";
}

HeatmapKind parse_heatmap_kind(const std::string& name) {
  if (name == "sparsity") return HeatmapKind::kSparsity;
  if (name == "pattern") return HeatmapKind::kPattern;
  if (name == "jsd") return HeatmapKind::kJsd;
  throw std::invalid_argument("unknown heatmap '" + name +
                              "' (expected sparsity, pattern or jsd)");
}

const char* to_string(HeatmapKind kind) {
  switch (kind) {
    case HeatmapKind::kSparsity: return "sparsity";
    case HeatmapKind::kPattern: return "pattern";
    case HeatmapKind::kJsd: return "jsd";
  }
  return "?";
}

std::string heatmap_csv(const Json& report, HeatmapKind kind) {
  const Json& heads = report.at("heads");
  if (!heads.is_array() || heads.empty()) {
    throw std::invalid_argument("report has no heads");
  }
  std::size_t layers = 0, cols = 0;
  for (const auto& h : heads) {
    layers = std::max(layers, h.at("layer").get<std::size_t>() + 1);
    cols = std::max(cols, h.at("head").get<std::size_t>() + 1);
  }
  std::vector<std::vector<std::string>> grid(layers,
                                             std::vector<std::string>(cols));
  for (const auto& h : heads) {
    std::string cell;
    switch (kind) {
      case HeatmapKind::kSparsity:
        cell = format_double(h.at("sparsity_ratio").get<double>());
        break;
      case HeatmapKind::kPattern:
        cell = std::to_string(h.at("pattern_code").get<int>());
        break;
      case HeatmapKind::kJsd:
        cell = format_double(h.at("js_distance").get<double>());
        break;
    }
    grid[h.at("layer").get<std::size_t>()][h.at("head").get<std::size_t>()] =
        cell;
  }
  std::string out;
  for (const auto& row : grid) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      out += row[c];
    }
    out += '\n';
  }
  return out;
}

}  // namespace flexattn
