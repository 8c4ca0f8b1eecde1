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

// Cumulative-attention index selection. Candidates (vertical lines, slash
// lines or attention blocks) are ranked by estimated mass and the shortest
// prefix reaching gamma is kept; budget rules then force the sink and
// diagonal blocks and enforce the minimum/maximum token budgets.

#ifndef FLEXATTN_INDEX_SEARCH_HPP_
#define FLEXATTN_INDEX_SEARCH_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "flexattn/attention.hpp"
#include "flexattn/tensor.hpp"

namespace flexattn {

enum class QaMode { kGlobalFlatten, kPerQueryBlock };

struct BudgetConfig {
  double gamma = 0.95;
  std::size_t min_budget_tokens = 1024;
  std::optional<std::size_t> max_budget_tokens;
  bool keep_first_last_blocks = true;
  QaMode qa_mode = QaMode::kGlobalFlatten;

  // Throws std::invalid_argument unless 0 < gamma < 1 and min <= max.
  void validate() const;
};

// Normalized vertical (per key column) and slash (per diagonal offset) mass
// of the representative attention map.
struct LineScores {
  ProbVector vertical;
  ProbVector slash;
};

// rep_attention rows sit at global positions first_position + r (default:
// the final rows of a seq_len sequence).
LineScores vertical_slash_scores(
    const ScoreMatrix& rep_attention, std::size_t seq_len,
    std::optional<std::size_t> first_position = std::nullopt);

// One ranked candidate list and its greedy prefix.
struct RankedPrefix {
  std::vector<double> scores;      // indexed by candidate id
  std::vector<std::size_t> order;  // argsort_desc(scores)
  std::size_t count = 0;           // minimal prefix reaching gamma
  double mass = 0.0;               // scores summed over the prefix, rank order

  std::span<const std::size_t> core() const { return {order.data(), count}; }
};

RankedPrefix rank_prefix(std::vector<double> scores, double gamma);

// Candidate id of the causal block cell (qb, kb), kb <= qb, in row-major
// order over the lower triangle, and its inverse.
constexpr std::size_t block_cell_id(std::size_t qb, std::size_t kb) {
  return qb * (qb + 1) / 2 + kb;
}
std::pair<std::size_t, std::size_t> block_cell(std::size_t id);

struct IndexSelection {
  SparseIndexSet indices;            // after forcing and budgets
  std::vector<RankedPrefix> groups;  // vertical-slash: {vertical, slash};
                                     // global flatten: {all causal cells};
                                     // per query block: one per row
  double estimated_coverage = 0.0;   // min greedy mass over groups
};

// Forced lines/blocks, then minimum budget, then maximum budget. `s` must be
// the greedy core of `groups`.
//  - Vertical-slash: each line counts as one token per query row; the
//    vertical list is extended down its ranking until lines >= min budget
//    (every column when the budget reaches seq_len). Truncation drops the
//    lowest-scored non-forced line of either kind.
//  - Blocks: each query-block row keeps at least
//    ceil(min(min budget, visible tokens) / block) key blocks and at most
//    floor(max budget / block) plus forced ones, extended or truncated along
//    that row's ranking.
SparseIndexSet apply_budget_constraints(const SparseIndexSet& s,
                                        std::span<const RankedPrefix> groups,
                                        const BudgetConfig& budget);

IndexSelection select_vertical_slash(const LineScores& scores,
                                     const BudgetConfig& budget,
                                     std::size_t seq_len, std::size_t block);

// Pools Q and K by `block` (average) and returns the causal row-softmax of
// the pooled logits: an nb x nb map, zero above the diagonal.
ScoreMatrix block_estimated_attention(const Tensor2D& q, const Tensor2D& k,
                                      std::size_t block);

IndexSelection select_query_aware(const ScoreMatrix& block_map,
                                  const BudgetConfig& budget,
                                  std::size_t seq_len, std::size_t block);

// Exhaustive minimum-cardinality subset with mass >= gamma; ground truth for
// the greedy prefix. Limited to 20 entries.
struct OracleSubset {
  std::size_t size = 0;
  std::vector<std::size_t> subset;  // ascending
  double mass = 0.0;
};
OracleSubset oracle_min_subset(std::span<const double> scores, double gamma);

// Exhaustive check that the coverage-constrained minimum size K* and the
// size-constrained maximum coverage agree, and that the optimum selects by a
// score threshold.
struct PrimalDualReport {
  std::size_t min_size = 0;        // K*
  double primal_optimum = 0.0;     // max mass over |S| <= K*
  double greedy_mass = 0.0;        // mass of the top-K* prefix
  double threshold = 0.0;          // smallest selected score in the optimum
  double max_rejected = 0.0;       // largest rejected score in the optimum
  bool primal_reaches_gamma = false;
  bool greedy_attains_primal = false;
  bool threshold_structure = false;
  bool ok() const {
    return primal_reaches_gamma && greedy_attains_primal && threshold_structure;
  }
};
PrimalDualReport primal_dual_check(std::span<const double> scores,
                                   double gamma);

}  // namespace flexattn

#endif  // FLEXATTN_INDEX_SEARCH_HPP_
