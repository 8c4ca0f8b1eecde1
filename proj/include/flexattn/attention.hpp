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

// Causal attention kernels: the dense oracle, the masked reference for an
// arbitrary selection, and a block-streaming kernel with online softmax
// renormalization that only touches selected key blocks.

#ifndef FLEXATTN_ATTENTION_HPP_
#define FLEXATTN_ATTENTION_HPP_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "flexattn/tensor.hpp"

namespace flexattn {

// Raised when a query row ends up with no selected key.
class EmptyRowError : public std::runtime_error {
 public:
  explicit EmptyRowError(std::size_t row)
      : std::runtime_error("empty attention row " + std::to_string(row)),
        row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Vertical lines are key columns; slash offset o selects key i - o for
// query i. Both lists are sorted and unique.
struct VerticalSlash {
  std::vector<std::size_t> verticals;
  std::vector<std::size_t> slashes;
  friend bool operator==(const VerticalSlash&, const VerticalSlash&) = default;
};

// key_blocks[qb] lists the selected key blocks of query block qb, sorted,
// unique and each <= qb.
struct BlockSet {
  std::vector<std::vector<std::size_t>> key_blocks;
  friend bool operator==(const BlockSet&, const BlockSet&) = default;
};

// The computation set S over a causal seq_len x seq_len attention matrix.
class SparseIndexSet {
 public:
  using Lines = std::variant<VerticalSlash, BlockSet>;

  // Inputs need not be sorted; duplicates are removed. Throws
  // std::invalid_argument on out-of-range indices.
  static SparseIndexSet vertical_slash(std::vector<std::size_t> verticals,
                                       std::vector<std::size_t> slashes,
                                       std::size_t block, std::size_t seq_len);
  static SparseIndexSet blocks(std::vector<std::vector<std::size_t>> key_blocks,
                               std::size_t block, std::size_t seq_len);
  // Every causal block pair.
  static SparseIndexSet full(std::size_t block, std::size_t seq_len);

  std::size_t block() const { return block_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t num_blocks() const { return (seq_len_ + block_ - 1) / block_; }

  bool is_vertical_slash() const {
    return std::holds_alternative<VerticalSlash>(lines_);
  }
  const VerticalSlash& as_vertical_slash() const {
    return std::get<VerticalSlash>(lines_);
  }
  const BlockSet& as_blocks() const { return std::get<BlockSet>(lines_); }
  const Lines& lines() const { return lines_; }

  // Whether the element pair (query i, key j) is selected. Non-causal pairs
  // are never selected.
  bool contains(std::size_t i, std::size_t j) const;

  // Selected keys of query row i, ascending.
  std::vector<std::size_t> row_keys(std::size_t i) const;

  friend bool operator==(const SparseIndexSet&,
                         const SparseIndexSet&) = default;

 private:
  SparseIndexSet(Lines lines, std::size_t block, std::size_t seq_len)
      : lines_(std::move(lines)), block_(block), seq_len_(seq_len) {}

  Lines lines_;
  std::size_t block_ = 1;
  std::size_t seq_len_ = 0;
};

using ElementPair = std::pair<std::size_t, std::size_t>;

// Every selected (query, key) element pair, sorted and deduplicated.
std::vector<ElementPair> expand_index_set(const SparseIndexSet& s);

// |expand_index_set(s)| without materializing the pairs.
std::uint64_t selected_pair_count(const SparseIndexSet& s);

// Number of causal pairs j <= i for a sequence of length n.
constexpr std::uint64_t causal_pair_count(std::uint64_t n) {
  return n * (n + 1) / 2;
}

// Smallest BlockSet covering every element of `s`. A vertical j maps to key
// block j / block for every query block at or after it; a slash offset o
// maps to the block diagonals floor(o / block) and ceil(o / block).
SparseIndexSet rasterize(const SparseIndexSet& s);

struct AttentionOutput {
  Matrix<double> out;
  // Per query row, the probabilities over row_keys (or all visible keys for
  // the dense kernel). Only filled when requested.
  std::vector<ProbVector> row_scores;
};

// Softmax(QK^T / sqrt(d) + causal mask) V.
AttentionOutput dense_causal_attention(const Tensor2D& q, const Tensor2D& k,
                                       const Tensor2D& v,
                                       bool keep_scores = false);

// Softmax(QK^T / sqrt(d) + M_S) V with M_S = 0 on S and -inf elsewhere.
AttentionOutput sparse_attention_masked(const Tensor2D& q, const Tensor2D& k,
                                        const Tensor2D& v,
                                        const SparseIndexSet& s,
                                        bool keep_scores = false);

// Visits only the key blocks of rasterize(s), one query block at a time,
// keeping a running max and normalizer per row. Inside a visited block the
// element mask of `s` (including the causal mask) is applied, so the result
// matches sparse_attention_masked for any selection.
AttentionOutput block_sparse_attention_stream(const Tensor2D& q,
                                              const Tensor2D& k,
                                              const Tensor2D& v,
                                              const SparseIndexSet& s);

// Per-row comparison of a sparse output against the dense oracle, including
// the bound |dense - sparse| <= (1 - a_S(i)) * sum_j |v[j, c]| where a_S(i)
// is the true attention mass of the selected keys of row i.
struct ErrorBoundReport {
  double error_linf = 0.0;
  double error_l2 = 0.0;          // ||dense - sparse||_F / ||dense||_F
  double mean_coverage = 0.0;     // mean_i a_S(i)
  double min_coverage = 1.0;
  std::uint64_t violations = 0;   // (row, dim) cells breaking the bound
  double max_bound_ratio = 0.0;   // max |diff| / bound over cells with bound > 0
};

ErrorBoundReport check_error_bound(const Tensor2D& q, const Tensor2D& k,
                                   const Tensor2D& v, const SparseIndexSet& s,
                                   const Matrix<double>& sparse_out);

// Row i's uncovered true mass 1 - a_S(i), summed over unselected keys.
std::vector<double> uncovered_mass(const Tensor2D& q, const Tensor2D& k,
                                   const SparseIndexSet& s);

}  // namespace flexattn

#endif  // FLEXATTN_ATTENTION_HPP_
