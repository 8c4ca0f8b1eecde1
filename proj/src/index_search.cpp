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

#include "flexattn/index_search.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace flexattn {
namespace {

constexpr std::size_t kOracleMaxLength = 20;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

bool contains_sorted(const std::vector<std::size_t>& v, std::size_t x) {
  return std::binary_search(v.begin(), v.end(), x);
}

void insert_sorted(std::vector<std::size_t>& v, std::size_t x) {
  auto it = std::lower_bound(v.begin(), v.end(), x);
  if (it == v.end() || *it != x) v.insert(it, x);
}

void erase_sorted(std::vector<std::size_t>& v, std::size_t x) {
  auto it = std::lower_bound(v.begin(), v.end(), x);
  if (it != v.end() && *it == x) v.erase(it);
}

SparseIndexSet constrain_vertical_slash(const SparseIndexSet& s,
                                        std::span<const RankedPrefix> groups,
                                        const BudgetConfig& budget) {
  if (groups.size() != 2) {
    throw std::invalid_argument("vertical-slash budget needs two rankings");
  }
  const RankedPrefix& vrank = groups[0];
  const RankedPrefix& srank = groups[1];
  const std::size_t n = s.seq_len();
  auto verticals = s.as_vertical_slash().verticals;
  auto slashes = s.as_vertical_slash().slashes;

  const bool forced = budget.keep_first_last_blocks;
  if (forced) {
    insert_sorted(verticals, 0);  // sink column
    insert_sorted(slashes, 0);    // diagonal
  }

  if (budget.min_budget_tokens >= n) {
    verticals.resize(n);
    for (std::size_t j = 0; j < n; ++j) verticals[j] = j;
  } else {
    for (std::size_t r = 0; r < vrank.order.size() &&
                            verticals.size() + slashes.size() <
                                budget.min_budget_tokens;
         ++r) {
      insert_sorted(verticals, vrank.order[r]);
    }
  }

  if (budget.max_budget_tokens) {
    const std::size_t cap = *budget.max_budget_tokens;
    auto is_forced = [&](std::size_t idx) { return forced && idx == 0; };
    // Walk both rankings from the bottom, always dropping the weaker line.
    std::size_t vr = vrank.order.size(), sr = srank.order.size();
    auto next_removable = [&](const RankedPrefix& rank,
                              const std::vector<std::size_t>& chosen,
                              std::size_t& pos) -> std::optional<std::size_t> {
      while (pos > 0) {
        const std::size_t idx = rank.order[pos - 1];
        if (contains_sorted(chosen, idx) && !is_forced(idx)) return idx;
        --pos;
      }
      return std::nullopt;
    };
    while (verticals.size() + slashes.size() > cap) {
      const auto v = next_removable(vrank, verticals, vr);
      const auto o = next_removable(srank, slashes, sr);
      if (!v && !o) break;
      if (v && (!o || vrank.scores[*v] <= srank.scores[*o])) {
        erase_sorted(verticals, *v);
      } else {
        erase_sorted(slashes, *o);
      }
    }
  }
  return SparseIndexSet::vertical_slash(std::move(verticals), std::move(slashes),
                                        s.block(), n);
}

// Per-row ranking of key blocks implied by the selection groups.
std::vector<std::vector<std::size_t>> row_rankings(
    std::span<const RankedPrefix> groups, std::size_t nb, QaMode mode) {
  std::vector<std::vector<std::size_t>> rows(nb);
  if (mode == QaMode::kPerQueryBlock) {
    if (groups.size() != nb) {
      throw std::invalid_argument("per-query budget needs one ranking per row");
    }
    for (std::size_t qb = 0; qb < nb; ++qb) rows[qb] = groups[qb].order;
    return rows;
  }
  if (groups.size() != 1) {
    throw std::invalid_argument("global budget needs one flattened ranking");
  }
  // The flattened order restricted to one row is that row's own ranking.
  for (std::size_t id : groups[0].order) {
    const auto [qb, kb] = block_cell(id);
    rows[qb].push_back(kb);
  }
  return rows;
}

SparseIndexSet constrain_blocks(const SparseIndexSet& s,
                                std::span<const RankedPrefix> groups,
                                const BudgetConfig& budget) {
  const std::size_t b = s.block();
  const std::size_t n = s.seq_len();
  const std::size_t nb = s.num_blocks();
  const auto ranking = row_rankings(groups, nb, budget.qa_mode);
  auto rows = s.as_blocks().key_blocks;
  const bool forced = budget.keep_first_last_blocks;

  for (std::size_t qb = 0; qb < nb; ++qb) {
    auto& row = rows[qb];
    if (forced) {
      insert_sorted(row, 0);
      insert_sorted(row, qb);
    }
    const std::size_t visible = std::min((qb + 1) * b, n);
    const std::size_t floor_blocks =
        ceil_div(std::min(budget.min_budget_tokens, visible), b);
    for (std::size_t r = 0; r < ranking[qb].size() && row.size() < floor_blocks;
         ++r) {
      insert_sorted(row, ranking[qb][r]);
    }
    if (budget.max_budget_tokens) {
      const std::size_t cap = *budget.max_budget_tokens / b;
      for (std::size_t r = ranking[qb].size(); r > 0 && row.size() > cap; --r) {
        const std::size_t kb = ranking[qb][r - 1];
        if (forced && (kb == 0 || kb == qb)) continue;
        erase_sorted(row, kb);
      }
    }
  }
  return SparseIndexSet::blocks(std::move(rows), b, n);
}

}  // namespace

void BudgetConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in (0, 1)");
  }
  if (max_budget_tokens && min_budget_tokens > *max_budget_tokens) {
    throw std::invalid_argument("minimum budget exceeds maximum budget");
  }
}

LineScores vertical_slash_scores(const ScoreMatrix& rep_attention,
                                 std::size_t seq_len,
                                 std::optional<std::size_t> first_position) {
  if (rep_attention.cols() != seq_len) {
    throw std::invalid_argument("representative map width != seq_len");
  }
  if (rep_attention.rows() == 0 || rep_attention.rows() > seq_len) {
    throw std::invalid_argument("bad representative row count");
  }
  const std::size_t first =
      first_position.value_or(seq_len - rep_attention.rows());
  if (first + rep_attention.rows() > seq_len) {
    throw std::invalid_argument("representative window extends past seq_len");
  }
  std::vector<long double> vertical(seq_len, 0.0L), slash(seq_len, 0.0L);
  long double total = 0.0L;
  for (std::size_t r = 0; r < rep_attention.rows(); ++r) {
    const std::size_t pos = first + r;
    const auto row = rep_attention.row(r);
    for (std::size_t j = 0; j < seq_len; ++j) {
      total += row[j];
      vertical[j] += row[j];
      if (j <= pos) slash[pos - j] += row[j];
    }
  }
  if (!(total > 0.0L)) throw std::invalid_argument("representative map is zero");
  std::vector<double> a_v(seq_len), a_s(seq_len);
  for (std::size_t j = 0; j < seq_len; ++j) {
    a_v[j] = static_cast<double>(vertical[j] / total);
    a_s[j] = static_cast<double>(slash[j] / total);
  }
  return LineScores{ProbVector(std::move(a_v)), ProbVector(std::move(a_s))};
}

RankedPrefix rank_prefix(std::vector<double> scores, double gamma) {
  RankedPrefix rp;
  rp.order = argsort_desc(scores);
  std::vector<double> sorted(scores.size());
  for (std::size_t r = 0; r < rp.order.size(); ++r) sorted[r] = scores[rp.order[r]];
  rp.count = min_prefix_count(sorted, gamma);
  long double mass = 0.0L;
  for (std::size_t r = 0; r < rp.count; ++r) mass += sorted[r];
  rp.mass = static_cast<double>(mass);
  rp.scores = std::move(scores);
  return rp;
}

std::pair<std::size_t, std::size_t> block_cell(std::size_t id) {
  auto qb = static_cast<std::size_t>(
      (std::sqrt(8.0 * static_cast<double>(id) + 1.0) - 1.0) / 2.0);
  while (block_cell_id(qb + 1, 0) <= id) ++qb;
  while (block_cell_id(qb, 0) > id) --qb;
  return {qb, id - block_cell_id(qb, 0)};
}

SparseIndexSet apply_budget_constraints(const SparseIndexSet& s,
                                        std::span<const RankedPrefix> groups,
                                        const BudgetConfig& budget) {
  budget.validate();
  return s.is_vertical_slash() ? constrain_vertical_slash(s, groups, budget)
                               : constrain_blocks(s, groups, budget);
}

IndexSelection select_vertical_slash(const LineScores& scores,
                                     const BudgetConfig& budget,
                                     std::size_t seq_len, std::size_t block) {
  budget.validate();
  if (scores.vertical.size() != seq_len || scores.slash.size() != seq_len) {
    throw std::invalid_argument("line scores do not match seq_len");
  }
  std::vector<RankedPrefix> groups;
  groups.push_back(rank_prefix(
      {scores.vertical.begin(), scores.vertical.end()}, budget.gamma));
  groups.push_back(
      rank_prefix({scores.slash.begin(), scores.slash.end()}, budget.gamma));
  const auto core_v = groups[0].core();
  const auto core_s = groups[1].core();
  const SparseIndexSet core = SparseIndexSet::vertical_slash(
      {core_v.begin(), core_v.end()}, {core_s.begin(), core_s.end()}, block,
      seq_len);
  const double coverage = std::min(groups[0].mass, groups[1].mass);
  SparseIndexSet constrained = apply_budget_constraints(core, groups, budget);
  return IndexSelection{std::move(constrained), std::move(groups), coverage};
}

ScoreMatrix block_estimated_attention(const Tensor2D& q, const Tensor2D& k,
                                      std::size_t block) {
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("query/key head dimension mismatch");
  }
  if (q.rows() != k.rows()) {
    throw std::invalid_argument("block map needs equal query and key lengths");
  }
  const ScoreMatrix pq = block_pool(q, block, Axis::kRows, PoolMode::kAvg);
  const ScoreMatrix pk = block_pool(k, block, Axis::kRows, PoolMode::kAvg);
  const std::size_t nb = pq.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  ScoreMatrix map(nb, nb);
  std::vector<double> logits;
  for (std::size_t qb = 0; qb < nb; ++qb) {
    logits.assign(qb + 1, 0.0);
    for (std::size_t kb = 0; kb <= qb; ++kb) {
      double acc = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) acc += pq(qb, c) * pk(kb, c);
      logits[kb] = acc * inv_sqrt_d;
    }
    const ProbVector p = stable_softmax(logits);
    std::copy(p.begin(), p.end(), map.row(qb).begin());
  }
  return map;
}

IndexSelection select_query_aware(const ScoreMatrix& block_map,
                                  const BudgetConfig& budget,
                                  std::size_t seq_len, std::size_t block) {
  budget.validate();
  if (block == 0) throw std::invalid_argument("block size must be >= 1");
  const std::size_t nb = ceil_div(seq_len, block);
  if (block_map.rows() != nb || block_map.cols() != nb) {
    throw std::invalid_argument("block map shape does not match seq_len/block");
  }
  std::vector<std::vector<std::size_t>> core(nb);
  std::vector<RankedPrefix> groups;
  double coverage = 0.0;

  if (budget.qa_mode == QaMode::kGlobalFlatten) {
    long double total = 0.0L;
    for (std::size_t qb = 0; qb < nb; ++qb) {
      for (std::size_t kb = 0; kb <= qb; ++kb) total += block_map(qb, kb);
    }
    if (!(total > 0.0L)) throw std::invalid_argument("block map is zero");
    std::vector<double> flat(block_cell_id(nb, 0));
    for (std::size_t qb = 0; qb < nb; ++qb) {
      for (std::size_t kb = 0; kb <= qb; ++kb) {
        flat[block_cell_id(qb, kb)] =
            static_cast<double>(block_map(qb, kb) / total);
      }
    }
    groups.push_back(rank_prefix(std::move(flat), budget.gamma));
    for (std::size_t id : groups[0].core()) {
      const auto [qb, kb] = block_cell(id);
      core[qb].push_back(kb);
    }
    coverage = groups[0].mass;
  } else {
    coverage = 1.0;
    for (std::size_t qb = 0; qb < nb; ++qb) {
      const auto row = block_map.row(qb);
      std::vector<double> scores(row.begin(), row.begin() + qb + 1);
      long double total = 0.0L;
      for (double x : scores) total += x;
      for (double& x : scores) x = static_cast<double>(x / total);
      groups.push_back(rank_prefix(std::move(scores), budget.gamma));
      const auto c = groups.back().core();
      core[qb].assign(c.begin(), c.end());
      coverage = std::min(coverage, groups.back().mass);
    }
  }
  const SparseIndexSet core_set =
      SparseIndexSet::blocks(std::move(core), block, seq_len);
  SparseIndexSet constrained =
      apply_budget_constraints(core_set, groups, budget);
  return IndexSelection{std::move(constrained), std::move(groups), coverage};
}

OracleSubset oracle_min_subset(std::span<const double> scores, double gamma) {
  if (scores.size() > kOracleMaxLength) {
    throw std::invalid_argument("oracle scale exceeded");
  }
  if (!(gamma > 0.0) || gamma > 1.0) {
    throw std::invalid_argument("gamma must lie in (0, 1]");
  }
  const std::size_t len = scores.size();
  OracleSubset best;
  best.size = len + 1;
  for (std::uint32_t mask = 0; mask < (1u << len); ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    if (size > best.size) continue;
    long double mass = 0.0L;
    for (std::size_t i = 0; i < len; ++i) {
      if (mask & (1u << i)) mass += scores[i];
    }
    if (mass < gamma) continue;
    if (size < best.size || mass > best.mass) {
      best.size = size;
      best.mass = static_cast<double>(mass);
      best.subset.clear();
      for (std::size_t i = 0; i < len; ++i) {
        if (mask & (1u << i)) best.subset.push_back(i);
      }
    }
  }
  if (best.size > len) {  // rounding left the total short of gamma
    best.size = len;
    best.subset.resize(len);
    best.mass = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      best.subset[i] = i;
      best.mass += scores[i];
    }
  }
  return best;
}

PrimalDualReport primal_dual_check(std::span<const double> scores,
                                   double gamma) {
  PrimalDualReport report;
  const OracleSubset dual = oracle_min_subset(scores, gamma);
  report.min_size = dual.size;

  const std::size_t len = scores.size();
  long double best = -1.0L;
  std::uint32_t best_mask = 0;
  for (std::uint32_t mask = 0; mask < (1u << len); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) > report.min_size) continue;
    long double mass = 0.0L;
    for (std::size_t i = 0; i < len; ++i) {
      if (mask & (1u << i)) mass += scores[i];
    }
    if (mass > best) {
      best = mass;
      best_mask = mask;
    }
  }
  report.primal_optimum = static_cast<double>(best);

  const auto order = argsort_desc(scores);
  long double greedy = 0.0L;
  for (std::size_t r = 0; r < report.min_size; ++r) greedy += scores[order[r]];
  report.greedy_mass = static_cast<double>(greedy);

  report.threshold = 1.0;
  report.max_rejected = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    if (best_mask & (1u << i)) {
      report.threshold = std::min(report.threshold, scores[i]);
    } else {
      report.max_rejected = std::max(report.max_rejected, scores[i]);
    }
  }
  constexpr double kMassTolerance = 1e-12;
  report.primal_reaches_gamma = best + kMassTolerance >= gamma ||
                                report.min_size == len;
  report.greedy_attains_primal = std::fabs(report.greedy_mass -
                                           report.primal_optimum) <=
                                 kMassTolerance;
  report.threshold_structure = report.threshold >= report.max_rejected;
  return report;
}

}  // namespace flexattn
