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

// Per-head sparse pattern determination: compare the block-pooled estimate of
// the representative queries' attention against its exact block-summed value
// and fall back to the vertical-slash pattern when they disagree.

#ifndef FLEXATTN_PATTERN_HPP_
#define FLEXATTN_PATTERN_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>

#include "flexattn/tensor.hpp"

namespace flexattn {

enum class PatternKind { kVerticalSlash = 0, kQuerySpecific = 1 };

const char* to_string(PatternKind kind);

struct PatternDecision {
  PatternKind kind = PatternKind::kVerticalSlash;
  double js_distance = 0.0;
  double tau = 0.0;
  friend bool operator==(const PatternDecision&,
                         const PatternDecision&) = default;
};

// Where the representative window sits. kMiddle is only used by ablations.
enum class RepresentativePosition { kLast, kMiddle };

// First row index of the representative window of min(block, rows) rows.
std::size_t representative_start(std::size_t rows, std::size_t block,
                                 RepresentativePosition pos =
                                     RepresentativePosition::kLast);

Tensor2D select_representative_queries(
    const Tensor2D& q, std::size_t block,
    RepresentativePosition pos = RepresentativePosition::kLast);

// Causal softmax rows of q_hat against all keys: row r sits at global
// position first_position + r and sees keys 0..first_position + r. Columns
// beyond that are exactly zero. When first_position is omitted, q_hat is
// taken to be the final rows of the sequence.
ScoreMatrix representative_attention(
    const Tensor2D& q_hat, const Tensor2D& k,
    std::optional<std::size_t> first_position = std::nullopt);

// Number of representative_attention evaluations in this process.
std::uint64_t representative_attention_evaluations();

// softmax(avgpool(q_hat) avgpool(K)^T / sqrt(d)) over key blocks. Blocks past
// the last representative row are excluded (zero); for the default trailing
// window every block is visible.
ProbVector estimated_block_distribution(
    const Tensor2D& q_hat, const Tensor2D& k, std::size_t block,
    std::optional<std::size_t> first_position = std::nullopt);

// Row-softmax with causal mask, sum-pooled per key block, averaged across
// the representative rows and renormalized.
ProbVector true_block_distribution(
    const Tensor2D& q_hat, const Tensor2D& k, std::size_t block,
    std::optional<std::size_t> first_position = std::nullopt);

// Same reduction from an already computed representative_attention map.
ProbVector true_block_distribution_from_map(const ScoreMatrix& rep_attention,
                                            std::size_t block);

// Square root of the Jensen-Shannon divergence with base-2 logarithms, so the
// result lies in [0, 1].
double js_distance(const ProbVector& p, const ProbVector& q);

// Query-specific iff js_distance(estimated, true) < tau.
PatternDecision decide_pattern(
    const Tensor2D& q, const Tensor2D& k, std::size_t block, double tau,
    RepresentativePosition pos = RepresentativePosition::kLast);

PatternDecision decide_from_distributions(const ProbVector& estimated,
                                          const ProbVector& truth, double tau);

}  // namespace flexattn

#endif  // FLEXATTN_PATTERN_HPP_
