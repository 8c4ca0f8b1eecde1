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

#include "flexattn/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flexattn/engine.hpp"
#include "flexattn/fpt.hpp"
#include "flexattn/report.hpp"
#include "flexattn/workload.hpp"

namespace flexattn {
namespace {

namespace fs = std::filesystem;

// Usage problems detected after parsing (bad combinations, bad values).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bound or invariant violation found during a run.
struct ViolationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputFlags {
  std::string workload;
  std::string q, k, v;
};

struct ConfigFlags {
  double gamma = 0.95;
  double tau = 0.1;
  std::size_t block = 128;
  std::size_t min_budget = 1024;
  std::optional<std::size_t> max_budget;
  bool no_first_last = false;
  std::string qa_mode = "global";
  bool check_bound = false;
  bool oracle_errors = false;
  std::size_t layer_heads = 0;
};

void add_input_flags(CLI::App* cmd, InputFlags& in) {
  auto* w = cmd->add_option("--workload", in.workload,
                            "FPT file holding q, k and v records");
  auto* q = cmd->add_option("--q", in.q, "FPT file with queries");
  auto* k = cmd->add_option("--k", in.k, "FPT file with keys");
  auto* v = cmd->add_option("--v", in.v, "FPT file with values");
  w->excludes(q)->excludes(k)->excludes(v);
}

void add_config_flags(CLI::App* cmd, ConfigFlags& c) {
  cmd->add_option("--gamma", c.gamma, "cumulative attention threshold")
      ->capture_default_str();
  cmd->add_option("--tau", c.tau, "pattern threshold on JS distance")
      ->capture_default_str();
  cmd->add_option("--block-size", c.block, "block size")
      ->capture_default_str();
  cmd->add_option("--min-budget", c.min_budget, "minimum budget in tokens")
      ->capture_default_str();
  cmd->add_option("--max-budget", c.max_budget, "maximum budget in tokens");
  cmd->add_flag("--no-first-last", c.no_first_last,
                "do not force the first and last key blocks");
  cmd->add_option("--qa-mode", c.qa_mode, "query-aware ranking")
      ->check(CLI::IsMember({"global", "per-query"}))
      ->capture_default_str();
  cmd->add_flag("--check-bound", c.check_bound,
                "run the dense oracle and fail on bound violations");
  cmd->add_flag("--oracle-errors", c.oracle_errors,
                "run the dense oracle and report errors");
  cmd->add_option("--layer-heads", c.layer_heads,
                  "heads per layer (default: all heads in one layer)");
}

HeadConfig to_head_config(const ConfigFlags& c) {
  HeadConfig cfg;
  cfg.tau = c.tau;
  cfg.block = c.block;
  cfg.budget.gamma = c.gamma;
  cfg.budget.min_budget_tokens = c.min_budget;
  cfg.budget.max_budget_tokens = c.max_budget;
  cfg.budget.keep_first_last_blocks = !c.no_first_last;
  cfg.budget.qa_mode =
      c.qa_mode == "global" ? QaMode::kGlobalFlatten : QaMode::kPerQueryBlock;
  cfg.collect_error_metrics = c.check_bound || c.oracle_errors;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::string crc_string(std::uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "crc32:%08x", crc);
  return buf;
}

const TensorRecord& find_record(const std::vector<TensorRecord>& records,
                                const std::string& name, std::size_t fallback,
                                const std::string& path) {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  if (fallback < records.size()) return records[fallback];
  throw FptError(FptError::Kind::kHeaderValidation,
                 path + ": no record named '" + name + "'");
}

struct LoadedInputs {
  std::vector<HeadInput> heads;
  std::map<std::string, std::string> digests;
};

LoadedInputs load_inputs(const InputFlags& in) {
  std::vector<TensorRecord> q, k, v;
  LoadedInputs out;
  if (!in.workload.empty()) {
    auto records = load_tensors(in.workload);
    q = {find_record(records, "q", 0, in.workload)};
    k = {find_record(records, "k", 1, in.workload)};
    v = {find_record(records, "v", 2, in.workload)};
    out.digests["workload"] = crc_string(payload_digest(records));
  } else if (!in.q.empty() && !in.k.empty() && !in.v.empty()) {
    q = {load_tensors(in.q).front()};
    k = {load_tensors(in.k).front()};
    v = {load_tensors(in.v).front()};
    out.digests["q"] = crc_string(payload_digest(q));
    out.digests["k"] = crc_string(payload_digest(k));
    out.digests["v"] = crc_string(payload_digest(v));
  } else {
    throw UsageError("give --workload or all of --q, --k and --v");
  }
  const auto& qh = q[0].heads;
  const auto& kh = k[0].heads;
  const auto& vh = v[0].heads;
  if (qh.size() != kh.size() || qh.size() != vh.size()) {
    throw FptError(FptError::Kind::kHeaderValidation,
                   "q, k and v hold different head counts");
  }
  for (std::size_t h = 0; h < qh.size(); ++h) {
    if (qh[h].rows() != kh[h].rows() || qh[h].rows() != vh[h].rows() ||
        qh[h].cols() != kh[h].cols()) {
      throw FptError(FptError::Kind::kHeaderValidation,
                     "q, k and v shapes are incompatible");
    }
    out.heads.push_back({qh[h], kh[h], vh[h]});
  }
  return out;
}

RunReport evaluate(const LoadedInputs& inputs, const HeadConfig& cfg,
                   const ConfigFlags& flags) {
  const std::size_t total = inputs.heads.size();
  const std::size_t per_layer = flags.layer_heads ? flags.layer_heads : total;
  if (total % per_layer != 0) {
    throw UsageError("--layer-heads must divide the head count " +
                     std::to_string(total));
  }
  const auto results = flexprefill_multihead(inputs.heads, cfg);
  RunReport report;
  report.config = cfg;
  report.layer_heads = per_layer;
  report.check_bound = flags.check_bound;
  report.input_digests = inputs.digests;
  for (std::size_t i = 0; i < total; ++i) {
    HeadEntry e;
    e.layer = i / per_layer;
    e.head = i % per_layer;
    e.seq_len = inputs.heads[i].q.rows();
    e.dim = inputs.heads[i].q.cols();
    e.report = results[i].report;
    report.heads.push_back(std::move(e));
  }
  report.aggregates = compute_aggregates(report.heads);
  return report;
}

void check_bounds(const RunReport& report) {
  for (const auto& e : report.heads) {
    if (e.report.bound_violations.value_or(0) > 0) {
      throw ViolationError("error bound violated on layer " +
                           std::to_string(e.layer) + " head " +
                           std::to_string(e.head) + " (" +
                           std::to_string(*e.report.bound_violations) +
                           " entries)");
    }
  }
}

void write_heatmaps(const fs::path& dir, const nlohmann::ordered_json& json) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw FptError(FptError::Kind::kIo, "cannot create " + dir.string());
  }
  for (HeatmapKind kind :
       {HeatmapKind::kSparsity, HeatmapKind::kPattern, HeatmapKind::kJsd}) {
    write_file_atomic(dir / (std::string(to_string(kind)) + ".csv"),
                      heatmap_csv(json, kind));
  }
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
  }
}

std::vector<double> parse_list(const std::string& text,
                               const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(flag + ": not a number: '" + item + "'");
    }
  }
  return out;
}

// ---- gen

struct GenFlags {
  std::string kind;
  std::size_t seq_len = 0;
  std::size_t dim = 64;
  std::uint64_t seed = 0;
  std::size_t heads = 1;
  WorkloadSpec spec;
  std::string out;
};

int cmd_gen(GenFlags& g) {
  WorkloadSpec spec = g.spec;
  try {
    spec.kind = parse_workload_kind(g.kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  spec.seq_len = g.seq_len;
  spec.dim = g.dim;
  spec.seed = g.seed;
  if (g.heads == 0) throw UsageError("--heads must be positive");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<TensorRecord> records = {{"q", {}}, {"k", {}}, {"v", {}}};
  for (std::size_t h = 0; h < g.heads; ++h) {
    Workload w = generate(spec, h);
    records[0].heads.push_back(std::move(w.q));
    records[1].heads.push_back(std::move(w.k));
    records[2].heads.push_back(std::move(w.v));
  }
  save_tensors(g.out, records);
  return kExitOk;
}

// ---- run

struct RunFlags {
  InputFlags in;
  ConfigFlags cfg;
  std::string report;
  std::string heatmap_dir;
};

int cmd_run(const RunFlags& r) {
  const HeadConfig cfg = to_head_config(r.cfg);
  const LoadedInputs inputs = load_inputs(r.in);
  const RunReport report = evaluate(inputs, cfg, r.cfg);
  const auto json = report_to_json(report);
  emit(r.report, json.dump(2) + "\n");
  if (!r.heatmap_dir.empty()) write_heatmaps(r.heatmap_dir, json);
  if (r.cfg.check_bound) check_bounds(report);
  return kExitOk;
}

// ---- sweep

struct SweepFlags {
  InputFlags in;
  ConfigFlags cfg;
  std::string gammas;
  std::string taus;
  std::string format = "csv";
  std::string out;
};

struct SweepRow {
  double value = 0.0;
  RunAggregates agg;
  std::optional<double> error_l2;  // mean over heads
};

int cmd_sweep(const SweepFlags& s) {
  const bool by_gamma = !s.gammas.empty();
  if (by_gamma == !s.taus.empty()) {
    throw UsageError("give exactly one of --gammas and --taus");
  }
  const std::vector<double> points =
      parse_list(by_gamma ? s.gammas : s.taus, by_gamma ? "--gammas" : "--taus");
  if (points.size() < 2) throw UsageError("a sweep needs at least 2 points");

  const LoadedInputs inputs = load_inputs(s.in);
  std::vector<SweepRow> rows;
  for (double p : points) {
    ConfigFlags flags = s.cfg;
    (by_gamma ? flags.gamma : flags.tau) = p;
    const HeadConfig cfg = to_head_config(flags);
    const RunReport report = evaluate(inputs, cfg, flags);
    if (flags.check_bound) check_bounds(report);
    SweepRow row{p, report.aggregates, std::nullopt};
    if (cfg.collect_error_metrics) {
      double sum = 0.0;
      for (const auto& e : report.heads) sum += e.report.error_l2.value_or(0.0);
      row.error_l2 = sum / static_cast<double>(report.heads.size());
    }
    rows.push_back(std::move(row));
  }

  const char* param = by_gamma ? "gamma" : "tau";
  std::string text;
  if (s.format == "json") {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      std::size_t qs = 0;
      for (const auto& pc : r.agg.pattern_counts) qs += pc.query_specific;
      nlohmann::ordered_json e;
      e[param] = r.value;
      e["mean_sparsity"] = r.agg.mean_sparsity;
      e["total_flops"] = r.agg.total_flops;
      e["dense_flops"] = r.agg.dense_flops;
      e["speedup"] = r.agg.speedup;
      e["query_specific_heads"] = qs;
      e["error_l2"] =
          r.error_l2 ? nlohmann::ordered_json(*r.error_l2) : nullptr;
      j.push_back(std::move(e));
    }
    text = j.dump(2) + "\n";
  } else {
    text = std::string(param) +
           ",mean_sparsity,total_flops,dense_flops,speedup,"
           "query_specific_heads,error_l2\n";
    for (const auto& r : rows) {
      std::size_t qs = 0;
      for (const auto& pc : r.agg.pattern_counts) qs += pc.query_specific;
      text += format_double(r.value) + ',' +
              format_double(r.agg.mean_sparsity) + ',' +
              std::to_string(r.agg.total_flops) + ',' +
              std::to_string(r.agg.dense_flops) + ',' +
              format_double(r.agg.speedup) + ',' + std::to_string(qs) + ',' +
              (r.error_l2 ? format_double(*r.error_l2) : std::string()) + '\n';
    }
  }
  emit(s.out, text);

  // Selected sets are nested in gamma, so cost must not fall as gamma rises.
  if (by_gamma) {
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < rows.size(); ++b) {
        if (rows[a].value < rows[b].value &&
            rows[a].agg.total_flops > rows[b].agg.total_flops) {
          throw ViolationError("FLOPs decrease from gamma " +
                               format_double(rows[a].value) + " to " +
                               format_double(rows[b].value));
        }
      }
    }
  }
  return kExitOk;
}

// ---- heatmap

struct HeatmapFlags {
  std::string report;
  std::string what;
  std::string out;
};

int cmd_heatmap(const HeatmapFlags& h) {
  HeatmapKind kind;
  try {
    kind = parse_heatmap_kind(h.what);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::ifstream in(h.report, std::ios::binary);
  if (!in) throw FptError(FptError::Kind::kIo, "cannot open " + h.report);
  nlohmann::ordered_json json;
  try {
    json = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FptError(FptError::Kind::kMalformedHeader,
                   h.report + ": not a report: " + e.what());
  }
  std::string csv;
  try {
    csv = heatmap_csv(json, kind);
  } catch (const nlohmann::json::exception& e) {
    throw FptError(FptError::Kind::kMalformedHeader,
                   h.report + ": not a report: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  emit(h.out, csv);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Adaptive sparse attention for long-sequence prefill",
               "flexattn"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  GenFlags gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic workload");
  g->add_option("--kind", gen.kind, "needle | blocky | local | random")
      ->required();
  g->add_option("--seq-len", gen.seq_len, "sequence length")->required();
  g->add_option("--dim", gen.dim, "head dimension")->capture_default_str();
  g->add_option("--seed", gen.seed, "seed")->capture_default_str();
  g->add_option("--heads", gen.heads, "heads per tensor")
      ->capture_default_str();
  g->add_option("--spike-count", gen.spec.needle.spike_count)
      ->capture_default_str();
  g->add_option("--spike-gain", gen.spec.needle.spike_gain)
      ->capture_default_str();
  g->add_option("--clusters", gen.spec.blocky.cluster_count)
      ->capture_default_str();
  g->add_option("--cluster-gain", gen.spec.blocky.cluster_gain)
      ->capture_default_str();
  g->add_option("--cluster-block", gen.spec.blocky.block)
      ->capture_default_str();
  g->add_option("--window", gen.spec.local.window_width)
      ->capture_default_str();
  g->add_option("--decay", gen.spec.local.decay_rate,
                "logit decay per position (0: 3 / window)")
      ->capture_default_str();
  g->add_option("--local-gain", gen.spec.local.gain)->capture_default_str();
  g->add_option("--out", gen.out, "output FPT path")->required();

  RunFlags run;
  auto* r = app.add_subcommand("run", "run sparse attention and report");
  add_input_flags(r, run.in);
  add_config_flags(r, run.cfg);
  r->add_option("--report", run.report, "report JSON path (default stdout)");
  r->add_option("--heatmap-dir", run.heatmap_dir,
                "directory for sparsity/pattern/jsd CSV heatmaps");

  SweepFlags sweep;
  auto* s = app.add_subcommand("sweep", "sweep gamma or tau");
  add_input_flags(s, sweep.in);
  add_config_flags(s, sweep.cfg);
  auto* sg = s->add_option("--gammas", sweep.gammas, "comma-separated values");
  auto* st = s->add_option("--taus", sweep.taus, "comma-separated values");
  sg->excludes(st);
  s->add_option("--format", sweep.format)
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  s->add_option("--out", sweep.out, "output path (default stdout)");

  HeatmapFlags heat;
  auto* h = app.add_subcommand("heatmap", "grid from a run report");
  h->add_option("--report", heat.report, "report JSON")->required();
  h->add_option("--what", heat.what, "sparsity | pattern | jsd")->required();
  h->add_option("--out", heat.out, "output CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (r->parsed()) return cmd_run(run);
    if (s->parsed()) return cmd_sweep(sweep);
    if (h->parsed()) return cmd_heatmap(heat);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FptError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ViolationError& e) {
    std::cerr << "violation: " << e.what() << "\n";
    return kExitViolation;
  } catch (const MultiHeadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace flexattn
