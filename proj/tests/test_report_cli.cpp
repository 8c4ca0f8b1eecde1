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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexattn/cli.hpp"
#include "flexattn/fpt.hpp"
#include "flexattn/report.hpp"
#include "test_util.hpp"

namespace fa = flexattn;
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

int cli(std::initializer_list<std::string> args) {
  std::vector<std::string> owned = {"flexattn"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  return fa::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

const fs::path& dir() {
  static const fs::path d = fa::testing::temp_dir("cli");
  return d;
}

std::string path(const std::string& leaf) { return (dir() / leaf).string(); }

}  // namespace

TEST_CASE("gen writes three tensors of the requested shape") {
  REQUIRE(cli({"gen", "--kind", "needle", "--seq-len", "4096", "--dim", "64", "--seed", "7",
               "--out", path("w.fpt")}) == fa::kExitOk);
  const auto recs = fa::load_tensors(path("w.fpt"));
  REQUIRE(recs.size() == 3);
  for (const auto& r : recs) {
    REQUIRE(r.heads.size() == 1);
    CHECK(r.heads[0].rows() == 4096);
    CHECK(r.heads[0].cols() == 64);
  }
  CHECK(recs[0].name == "q");
  CHECK(recs[2].name == "v");
  REQUIRE(cli({"gen", "--kind", "needle", "--seq-len", "4096", "--dim", "64", "--seed", "7",
               "--out", path("w2.fpt")}) == fa::kExitOk);
  CHECK(slurp(path("w.fpt")) == slurp(path("w2.fpt")));
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({"gen", "--kind", "needle", "--out", path("x.fpt")}) == fa::kExitUsage);
  CHECK(cli({"gen", "--kind", "spiky", "--seq-len", "10", "--out", path("x.fpt")}) == fa::kExitUsage);
  CHECK(cli({"gen", "--kind", "local", "--seq-len", "10", "--window", "20", "--out",
             path("x.fpt")}) == fa::kExitUsage);
  CHECK(cli({}) == fa::kExitUsage);
  CHECK(cli({"run"}) == fa::kExitUsage);
  CHECK(cli({"run", "--workload", path("missing.fpt"), "--gamma", "1.5"}) == fa::kExitUsage);
  CHECK(cli({"run", "--workload", path("missing.fpt"), "--qa-mode", "local"}) == fa::kExitUsage);
}

TEST_CASE("io errors exit with 3") {
  CHECK(cli({"run", "--workload", path("missing.fpt")}) == fa::kExitIo);
  std::ofstream(path("junk.fpt")) << "not a tensor file";
  CHECK(cli({"run", "--workload", path("junk.fpt")}) == fa::kExitIo);
  CHECK(cli({"heatmap", "--report", path("missing.json"), "--what", "pattern"}) == fa::kExitIo);
}

TEST_CASE("near-full run passes the bound check") {
  REQUIRE(cli({"gen", "--kind", "random", "--seq-len", "512", "--dim", "32", "--seed", "1",
               "--out", path("r512.fpt")}) == fa::kExitOk);
  REQUIRE(cli({"run", "--workload", path("r512.fpt"), "--gamma", "0.999999", "--check-bound",
               "--report", path("r512.json")}) == fa::kExitOk);
  const auto j = Json::parse(slurp(path("r512.json")));
  CHECK(j["heads"][0]["error_l2"].get<double>() <= 1e-4);
  CHECK(j["heads"][0]["bound_violations"] == 0);
  CHECK(j["config"]["check_bound"] == true);
}

TEST_CASE("separate q/k/v files") {
  REQUIRE(cli({"gen", "--kind", "random", "--seq-len", "300", "--dim", "8", "--seed", "3",
               "--out", path("sep.fpt")}) == fa::kExitOk);
  const auto recs = fa::load_tensors(path("sep.fpt"));
  for (std::size_t i = 0; i < 3; ++i) {
    fa::save_tensors(path("sep_" + recs[i].name + ".fpt"), std::span(&recs[i], 1));
  }
  REQUIRE(cli({"run", "--q", path("sep_q.fpt"), "--k", path("sep_k.fpt"), "--v",
               path("sep_v.fpt"), "--block-size", "64", "--report", path("sep.json")}) == fa::kExitOk);
  REQUIRE(cli({"run", "--workload", path("sep.fpt"), "--block-size", "64", "--report",
               path("whole.json")}) == fa::kExitOk);
  auto a = Json::parse(slurp(path("sep.json"))), b = Json::parse(slurp(path("whole.json")));
  CHECK(a["heads"] == b["heads"]);
  CHECK(a["inputs"].contains("q"));
  CHECK(b["inputs"].contains("workload"));
  CHECK(cli({"run", "--q", path("sep_q.fpt"), "--report", path("x.json")}) == fa::kExitUsage);
}

TEST_CASE("run report contents and determinism") {
  REQUIRE(cli({"gen", "--kind", "needle", "--seq-len", "1024", "--dim", "64", "--seed", "2",
               "--heads", "4", "--out", path("n4.fpt")}) == fa::kExitOk);
  for (const char* tag : {"a", "b"}) {
    REQUIRE(cli({"run", "--workload", path("n4.fpt"), "--layer-heads", "2", "--report",
                 path(std::string("n4_") + tag + ".json"), "--heatmap-dir",
                 path(std::string("heat_") + tag)}) == fa::kExitOk);
  }
  CHECK(slurp(path("n4_a.json")) == slurp(path("n4_b.json")));
  for (const char* f : {"sparsity.csv", "pattern.csv", "jsd.csv"}) {
    CHECK(slurp(dir() / "heat_a" / f) == slurp(dir() / "heat_b" / f));
  }

  const auto j = Json::parse(slurp(path("n4_a.json")));
  CHECK(j["tool"]["version"] == fa::kToolVersion);
  CHECK(j["config"]["block_size"] == 128);
  CHECK(j["config"]["gamma"] == 0.95);
  CHECK(j["config"]["tau"] == 0.1);
  CHECK(j["config"]["min_budget_tokens"] == 1024);
  CHECK(j["config"]["keep_first_last_blocks"] == true);
  REQUIRE(j["heads"].size() == 4);
  for (const auto& h : j["heads"]) CHECK(h["pattern"] == "vertical_slash");

  // Aggregates recomputed from the per-head entries.
  double sparsity = 0;
  std::uint64_t total = 0, dense = 0;
  std::vector<std::size_t> vs(2, 0), qs(2, 0);
  for (const auto& h : j["heads"]) {
    sparsity += h["sparsity_ratio"].get<double>();
    total += h["flops"]["sparse_total"].get<std::uint64_t>();
    dense += h["flops"]["dense"].get<std::uint64_t>();
    (h["pattern_code"] == 0 ? vs : qs)[h["layer"].get<std::size_t>()]++;
  }
  const auto& agg = j["aggregates"];
  CHECK(agg["head_count"] == 4);
  CHECK(agg["mean_sparsity"].get<double>() == sparsity / 4);
  CHECK(agg["total_flops"] == total);
  CHECK(agg["dense_flops"] == dense);
  CHECK(agg["speedup"].get<double>() == static_cast<double>(dense) / static_cast<double>(total));
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(agg["pattern_counts"][l]["vertical_slash"] == vs[l]);
    CHECK(agg["pattern_counts"][l]["query_specific"] == qs[l]);
  }

  const auto grid = parse_csv(slurp(dir() / "heat_a" / "pattern.csv"));
  REQUIRE(grid.size() == 2);
  for (const auto& row : grid) {
    REQUIRE(row.size() == 2);
    for (const auto& c : row) CHECK(c == "0");
  }
  CHECK(cli({"run", "--workload", path("n4.fpt"), "--layer-heads", "3", "--report",
             path("x.json")}) == fa::kExitUsage);
}

TEST_CASE("heatmap subcommand") {
  REQUIRE(cli({"gen", "--kind", "blocky", "--seq-len", "1024", "--seed", "4", "--out",
               path("b.fpt")}) == fa::kExitOk);
  REQUIRE(cli({"run", "--workload", path("b.fpt"), "--report", path("b.json")}) == fa::kExitOk);
  for (const char* what : {"sparsity", "pattern", "jsd"}) {
    const auto out = path(std::string("b_") + what + ".csv");
    REQUIRE(cli({"heatmap", "--report", path("b.json"), "--what", what, "--out", out}) == fa::kExitOk);
    const auto grid = parse_csv(slurp(out));
    REQUIRE(grid.size() == 1);
    REQUIRE(grid[0].size() == 1);
    const double x = std::stod(grid[0][0]);
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
    if (std::string(what) == "pattern") CHECK((grid[0][0] == "0" || grid[0][0] == "1"));
  }
  CHECK(cli({"heatmap", "--report", path("b.json"), "--what", "entropy"}) == fa::kExitUsage);
}

TEST_CASE("heatmap_csv on a hand-made report") {
  const auto j = Json::parse(R"({"heads":[
    {"layer":0,"head":0,"sparsity_ratio":0.5,"pattern_code":1,"js_distance":0.25},
    {"layer":0,"head":1,"sparsity_ratio":0.75,"pattern_code":0,"js_distance":0.125},
    {"layer":1,"head":0,"sparsity_ratio":0.1,"pattern_code":0,"js_distance":1}]})");
  CHECK(fa::heatmap_csv(j, fa::HeatmapKind::kSparsity) == "0.5,0.75\n0.1,\n");
  CHECK(fa::heatmap_csv(j, fa::HeatmapKind::kPattern) == "1,0\n0,\n");
  CHECK(fa::heatmap_csv(j, fa::HeatmapKind::kJsd) == "0.25,0.125\n1,\n");
  CHECK_THROWS_AS(fa::heatmap_csv(Json::parse(R"({"heads":[]})"), fa::HeatmapKind::kJsd),
                  std::invalid_argument);
}

TEST_CASE("gamma sweep on a local workload") {
  REQUIRE(cli({"gen", "--kind", "local", "--seq-len", "4096", "--window", "256", "--seed", "5",
               "--out", path("l.fpt")}) == fa::kExitOk);
  REQUIRE(cli({"sweep", "--workload", path("l.fpt"), "--gammas", "0.6,0.9,0.95", "--out",
               path("g.csv")}) == fa::kExitOk);
  const auto rows = parse_csv(slurp(path("g.csv")));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0][0] == "gamma");
  CHECK(rows[0][2] == "total_flops");
  for (std::size_t r = 2; r < rows.size(); ++r) {
    CHECK(std::stoull(rows[r][2]) > std::stoull(rows[r - 1][2]));
  }
  REQUIRE(cli({"sweep", "--workload", path("l.fpt"), "--gammas", "0.6,0.9", "--format", "json",
               "--oracle-errors", "--out", path("g.json")}) == fa::kExitOk);
  const auto j = Json::parse(slurp(path("g.json")));
  REQUIRE(j.size() == 2);
  CHECK(j[0]["error_l2"].is_number());
}

TEST_CASE("tau sweep counts are monotone") {
  REQUIRE(cli({"gen", "--kind", "random", "--seq-len", "1024", "--seed", "6", "--heads", "6",
               "--out", path("t.fpt")}) == fa::kExitOk);
  REQUIRE(cli({"sweep", "--workload", path("t.fpt"), "--taus", "0,0.1,0.3", "--out",
               path("t.csv")}) == fa::kExitOk);
  const auto rows = parse_csv(slurp(path("t.csv")));
  REQUIRE(rows.size() == 4);
  CHECK(rows[1][5] == "0");
  for (std::size_t r = 2; r < rows.size(); ++r) {
    CHECK(std::stoul(rows[r][5]) >= std::stoul(rows[r - 1][5]));
  }
}

TEST_CASE("sweep usage errors") {
  CHECK(cli({"sweep", "--workload", path("l.fpt"), "--gammas", "0.9"}) == fa::kExitUsage);
  CHECK(cli({"sweep", "--workload", path("l.fpt"), "--gammas", ""}) == fa::kExitUsage);
  CHECK(cli({"sweep", "--workload", path("l.fpt")}) == fa::kExitUsage);
  CHECK(cli({"sweep", "--workload", path("l.fpt"), "--gammas", "0.5,abc"}) == fa::kExitUsage);
}

TEST_CASE("format_double is shortest round trip") {
  CHECK(fa::format_double(0.1) == "0.1");
  CHECK(fa::format_double(1.0) == "1");
  const double x = 0.1 + 0.2;
  CHECK(std::stod(fa::format_double(x)) == x);
}
