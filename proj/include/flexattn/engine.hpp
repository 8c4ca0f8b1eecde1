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

// Per-head orchestration: pattern decision, index selection and the
// block-streaming sparse kernel, plus the FLOP cost model and a multi-head
// dispatcher.

#ifndef FLEXATTN_ENGINE_HPP_
#define FLEXATTN_ENGINE_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flexattn/attention.hpp"
#include "flexattn/index_search.hpp"
#include "flexattn/pattern.hpp"
#include "flexattn/tensor.hpp"

namespace flexattn {

struct HeadConfig {
  double tau = 0.1;
  std::size_t block = 128;
  BudgetConfig budget;  // gamma 0.95, 1024-token floor, first/last retention
  // Runs the dense oracle (quadratic) for error and coverage metrics.
  bool collect_error_metrics = false;
  RepresentativePosition representative = RepresentativePosition::kLast;

  void validate() const;
};

// Operation counts of the cost model. A multiply-add counts as two.
//   representative   = 2 * b * n * d       (b = min(block, n))
//   pattern_search   = kPatternSearchOpsPerScore * b * n
//   index_build      = kIndexBuildOpsPerElement * n * ceil(log2 n)
//   sparse_attention = 2 * |S| * d * 2     (QK^T and PV over selected pairs)
//   dense            = 2 * n(n+1)/2 * d * 2
struct FlopRecord {
  // Pooling, exponentiation and divergence terms per representative score.
  static constexpr std::uint64_t kPatternSearchOpsPerScore = 4;
  // Comparisons plus index writes per sorted element.
  static constexpr std::uint64_t kIndexBuildOpsPerElement = 4;

  std::uint64_t representative = 0;
  std::uint64_t pattern_search = 0;
  std::uint64_t index_build = 0;
  std::uint64_t sparse_attention = 0;
  std::uint64_t dense = 0;

  std::uint64_t sparse_total() const {
    return representative + pattern_search + index_build + sparse_attention;
  }
  double speedup() const {
    return static_cast<double>(dense) / static_cast<double>(sparse_total());
  }
  friend bool operator==(const FlopRecord&, const FlopRecord&) = default;
};

// Selected pairs are counted at element granularity: the streaming kernel
// masks inside each visited block.
FlopRecord count_flops(std::size_t n, std::size_t d, std::size_t block,
                       const SparseIndexSet& s);

// Cost of running dense attention without any search.
FlopRecord dense_flops(std::size_t n, std::size_t d);

struct HeadReport {
  PatternDecision pattern;
  bool dense_fallback = false;  // seq_len <= block: search skipped
  std::uint64_t selected_tokens = 0;     // selected causal element pairs
  std::uint64_t total_causal_pairs = 0;
  std::uint64_t visited_block_pairs = 0; // element pairs inside visited blocks
  std::size_t vertical_lines = 0;
  std::size_t slash_lines = 0;
  std::size_t selected_blocks = 0;       // after rasterization
  double sparsity_ratio = 0.0;           // 1 - selected / total
  double estimated_coverage = 0.0;       // pre-budget greedy mass
  FlopRecord flops;
  std::optional<double> true_coverage;   // mean over rows of a_S(i)
  std::optional<double> min_true_coverage;
  std::optional<double> error_linf;
  std::optional<double> error_l2;        // relative Frobenius error
  std::optional<std::uint64_t> bound_violations;

  friend bool operator==(const HeadReport&, const HeadReport&) = default;
};

struct HeadResult {
  AttentionOutput output;
  HeadReport report;
  SparseIndexSet indices;
};

HeadResult flexprefill_head(const Tensor2D& q, const Tensor2D& k,
                            const Tensor2D& v, const HeadConfig& cfg);

struct HeadInput {
  Tensor2D q;
  Tensor2D k;
  Tensor2D v;
};

// Failures of individual heads, tagged with their input index.
class MultiHeadError : public std::runtime_error {
 public:
  explicit MultiHeadError(std::vector<std::pair<std::size_t, std::string>> f);
  const std::vector<std::pair<std::size_t, std::string>>& failures() const {
    return failures_;
  }

 private:
  std::vector<std::pair<std::size_t, std::string>> failures_;
};

// FLEXATTN_THREADS when set to a positive integer, else the hardware
// concurrency (at least 1).
std::size_t default_thread_count();

// Runs heads on up to `threads` workers (0 = default_thread_count()).
// Results are in input order and identical to sequential evaluation.
std::vector<HeadResult> flexprefill_multihead(std::span<const HeadInput> heads,
                                              const HeadConfig& cfg,
                                              std::size_t threads = 0);

}  // namespace flexattn

#endif  // FLEXATTN_ENGINE_HPP_
