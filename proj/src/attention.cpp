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

#include "flexattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace flexattn {
namespace {

void sort_unique(std::vector<std::size_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

void check_geometry(std::size_t block, std::size_t seq_len) {
  if (block == 0) throw std::invalid_argument("block size must be >= 1");
  if (seq_len == 0) throw std::invalid_argument("sequence length must be >= 1");
}

void check_shapes(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v) {
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("query/key head dimension mismatch: " +
                                std::to_string(q.cols()) + " vs " +
                                std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw std::invalid_argument("key/value length mismatch: " +
                                std::to_string(k.rows()) + " vs " +
                                std::to_string(v.rows()));
  }
  if (q.rows() > k.rows()) {
    throw std::invalid_argument("more query rows than keys in causal attention");
  }
  if (q.rows() == 0 || q.cols() == 0) {
    throw std::invalid_argument("empty attention input");
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    acc += static_cast<double>(a[c]) * static_cast<double>(b[c]);
  }
  return acc;
}

// Two-pass softmax over `keys` followed by the weighted sum of value rows.
// Dense and masked kernels share it so a complete selection reproduces the
// dense result bit for bit.
void attend_row(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v,
                std::size_t i, std::span<const std::size_t> keys,
                double inv_sqrt_d, std::span<double> out,
                std::vector<ProbVector>* scores) {
  if (keys.empty()) throw EmptyRowError(i);
  std::vector<double> logits(keys.size());
  for (std::size_t t = 0; t < keys.size(); ++t) {
    logits[t] = dot(q.row(i), k.row(keys[t])) * inv_sqrt_d;
  }
  ProbVector p = stable_softmax(logits);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t t = 0; t < keys.size(); ++t) {
    const auto vr = v.row(keys[t]);
    for (std::size_t c = 0; c < out.size(); ++c) {
      out[c] += p[t] * static_cast<double>(vr[c]);
    }
  }
  if (scores != nullptr) scores->push_back(std::move(p));
}

// Keys of row i that fall inside [lo, hi) for a vertical-slash selection.
void vertical_slash_keys_in_range(const VerticalSlash& vs, std::size_t i,
                                  std::size_t lo, std::size_t hi,
                                  std::vector<std::size_t>& keys) {
  keys.clear();
  hi = std::min(hi, i + 1);
  if (lo >= hi) return;
  auto v_first = std::lower_bound(vs.verticals.begin(), vs.verticals.end(), lo);
  auto v_last = std::lower_bound(v_first, vs.verticals.end(), hi);
  keys.insert(keys.end(), v_first, v_last);
  // key = i - o in [lo, hi)  <=>  o in (i - hi, i - lo]
  const std::size_t o_lo = i + 1 - hi;
  const std::size_t o_hi = i - lo + 1;
  auto s_first = std::lower_bound(vs.slashes.begin(), vs.slashes.end(), o_lo);
  auto s_last = std::lower_bound(s_first, vs.slashes.end(), o_hi);
  for (auto it = s_first; it != s_last; ++it) keys.push_back(i - *it);
  sort_unique(keys);
}

}  // namespace

SparseIndexSet SparseIndexSet::vertical_slash(std::vector<std::size_t> verticals,
                                              std::vector<std::size_t> slashes,
                                              std::size_t block,
                                              std::size_t seq_len) {
  check_geometry(block, seq_len);
  sort_unique(verticals);
  sort_unique(slashes);
  if (!verticals.empty() && verticals.back() >= seq_len) {
    throw std::invalid_argument("vertical index " +
                                std::to_string(verticals.back()) +
                                " out of range");
  }
  if (!slashes.empty() && slashes.back() >= seq_len) {
    throw std::invalid_argument("slash offset " + std::to_string(slashes.back()) +
                                " out of range");
  }
  return SparseIndexSet(VerticalSlash{std::move(verticals), std::move(slashes)},
                        block, seq_len);
}

SparseIndexSet SparseIndexSet::blocks(
    std::vector<std::vector<std::size_t>> key_blocks, std::size_t block,
    std::size_t seq_len) {
  check_geometry(block, seq_len);
  const std::size_t nb = (seq_len + block - 1) / block;
  if (key_blocks.size() != nb) {
    throw std::invalid_argument("block set needs " + std::to_string(nb) +
                                " query-block rows, got " +
                                std::to_string(key_blocks.size()));
  }
  for (std::size_t qb = 0; qb < nb; ++qb) {
    sort_unique(key_blocks[qb]);
    if (!key_blocks[qb].empty() && key_blocks[qb].back() > qb) {
      throw std::invalid_argument("block pair (" + std::to_string(qb) + ", " +
                                  std::to_string(key_blocks[qb].back()) +
                                  ") violates block causality");
    }
  }
  return SparseIndexSet(BlockSet{std::move(key_blocks)}, block, seq_len);
}

SparseIndexSet SparseIndexSet::full(std::size_t block, std::size_t seq_len) {
  check_geometry(block, seq_len);
  const std::size_t nb = (seq_len + block - 1) / block;
  std::vector<std::vector<std::size_t>> rows(nb);
  for (std::size_t qb = 0; qb < nb; ++qb) {
    for (std::size_t kb = 0; kb <= qb; ++kb) rows[qb].push_back(kb);
  }
  return SparseIndexSet(BlockSet{std::move(rows)}, block, seq_len);
}

bool SparseIndexSet::contains(std::size_t i, std::size_t j) const {
  if (j > i || i >= seq_len_) return false;
  if (const auto* vs = std::get_if<VerticalSlash>(&lines_)) {
    return std::binary_search(vs->verticals.begin(), vs->verticals.end(), j) ||
           std::binary_search(vs->slashes.begin(), vs->slashes.end(), i - j);
  }
  const auto& row = std::get<BlockSet>(lines_).key_blocks[i / block_];
  return std::binary_search(row.begin(), row.end(), j / block_);
}

std::vector<std::size_t> SparseIndexSet::row_keys(std::size_t i) const {
  std::vector<std::size_t> keys;
  if (i >= seq_len_) return keys;
  if (const auto* vs = std::get_if<VerticalSlash>(&lines_)) {
    vertical_slash_keys_in_range(*vs, i, 0, i + 1, keys);
    return keys;
  }
  for (std::size_t kb : std::get<BlockSet>(lines_).key_blocks[i / block_]) {
    const std::size_t last = std::min({(kb + 1) * block_, seq_len_, i + 1});
    for (std::size_t j = kb * block_; j < last; ++j) keys.push_back(j);
  }
  return keys;
}

std::vector<ElementPair> expand_index_set(const SparseIndexSet& s) {
  std::vector<ElementPair> pairs;
  for (std::size_t i = 0; i < s.seq_len(); ++i) {
    for (std::size_t j : s.row_keys(i)) pairs.emplace_back(i, j);
  }
  return pairs;
}

namespace {

std::uint64_t block_pair_elements(std::size_t qb, std::size_t kb,
                                  std::size_t block, std::size_t n) {
  const std::uint64_t q_len = std::min((qb + 1) * block, n) - qb * block;
  const std::uint64_t k_len = std::min((kb + 1) * block, n) - kb * block;
  if (kb < qb) return q_len * k_len;
  return causal_pair_count(q_len);  // diagonal block: q_len == k_len
}

}  // namespace

std::uint64_t selected_pair_count(const SparseIndexSet& s) {
  const std::uint64_t n = s.seq_len();
  if (s.is_vertical_slash()) {
    const auto& vs = s.as_vertical_slash();
    std::uint64_t total = 0;
    for (std::size_t v : vs.verticals) total += n - v;
    for (std::size_t o : vs.slashes) total += n - o;
    // A vertical v and slash o coincide at row v + o when v + o < n.
    for (std::size_t v : vs.verticals) {
      total -= static_cast<std::uint64_t>(
          std::lower_bound(vs.slashes.begin(), vs.slashes.end(), n - v) -
          vs.slashes.begin());
    }
    return total;
  }
  std::uint64_t total = 0;
  const auto& rows = s.as_blocks().key_blocks;
  for (std::size_t qb = 0; qb < rows.size(); ++qb) {
    for (std::size_t kb : rows[qb]) {
      total += block_pair_elements(qb, kb, s.block(), s.seq_len());
    }
  }
  return total;
}

SparseIndexSet rasterize(const SparseIndexSet& s) {
  if (!s.is_vertical_slash()) return s;
  const auto& vs = s.as_vertical_slash();
  const std::size_t b = s.block();
  const std::size_t n = s.seq_len();
  const std::size_t nb = s.num_blocks();
  std::vector<std::size_t> vertical_blocks;
  for (std::size_t v : vs.verticals) vertical_blocks.push_back(v / b);
  sort_unique(vertical_blocks);

  std::vector<std::vector<std::size_t>> rows(nb);
  for (std::size_t qb = 0; qb < nb; ++qb) {
    auto& row = rows[qb];
    for (std::size_t vb : vertical_blocks) {
      if (vb > qb) break;
      row.push_back(vb);
    }
    const std::size_t first_q = qb * b;
    const std::size_t last_q = std::min((qb + 1) * b, n) - 1;
    for (std::size_t o : vs.slashes) {
      if (o > last_q) break;
      const std::size_t first_key = first_q >= o ? first_q - o : 0;
      const std::size_t last_key = last_q - o;
      for (std::size_t kb = first_key / b; kb <= last_key / b; ++kb) {
        row.push_back(kb);
      }
    }
    sort_unique(row);
  }
  return SparseIndexSet::blocks(std::move(rows), b, n);
}

AttentionOutput dense_causal_attention(const Tensor2D& q, const Tensor2D& k,
                                       const Tensor2D& v, bool keep_scores) {
  check_shapes(q, k, v);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  AttentionOutput result{Matrix<double>(q.rows(), v.cols()), {}};
  std::vector<std::size_t> keys;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    keys.push_back(i);  // keys == 0..i
    attend_row(q, k, v, i, keys, inv_sqrt_d, result.out.row(i),
               keep_scores ? &result.row_scores : nullptr);
  }
  return result;
}

AttentionOutput sparse_attention_masked(const Tensor2D& q, const Tensor2D& k,
                                        const Tensor2D& v,
                                        const SparseIndexSet& s,
                                        bool keep_scores) {
  check_shapes(q, k, v);
  if (s.seq_len() != q.rows()) {
    throw std::invalid_argument("selection length does not match queries");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  AttentionOutput result{Matrix<double>(q.rows(), v.cols()), {}};
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto keys = s.row_keys(i);
    attend_row(q, k, v, i, keys, inv_sqrt_d, result.out.row(i),
               keep_scores ? &result.row_scores : nullptr);
  }
  return result;
}

AttentionOutput block_sparse_attention_stream(const Tensor2D& q,
                                              const Tensor2D& k,
                                              const Tensor2D& v,
                                              const SparseIndexSet& s) {
  check_shapes(q, k, v);
  const std::size_t n = q.rows();
  if (s.seq_len() != n) {
    throw std::invalid_argument("selection length does not match queries");
  }
  const SparseIndexSet visits = rasterize(s);
  const auto* vs = s.is_vertical_slash() ? &s.as_vertical_slash() : nullptr;
  const std::size_t b = s.block();
  const std::size_t dv = v.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));

  AttentionOutput result{Matrix<double>(n, dv), {}};
  std::vector<double> running_max, running_sum, acc;
  std::vector<std::size_t> keys;
  std::vector<double> logits;

  for (std::size_t qb = 0; qb < visits.num_blocks(); ++qb) {
    const std::size_t first_q = qb * b;
    const std::size_t rows = std::min(first_q + b, n) - first_q;
    running_max.assign(rows, -std::numeric_limits<double>::infinity());
    running_sum.assign(rows, 0.0);
    acc.assign(rows * dv, 0.0);

    for (std::size_t kb : visits.as_blocks().key_blocks[qb]) {
      const std::size_t first_k = kb * b;
      const std::size_t last_k = std::min(first_k + b, n);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = first_q + r;
        if (vs != nullptr) {
          vertical_slash_keys_in_range(*vs, i, first_k, last_k, keys);
        } else {
          keys.clear();
          for (std::size_t j = first_k; j < std::min(last_k, i + 1); ++j) {
            keys.push_back(j);
          }
        }
        if (keys.empty()) continue;

        logits.resize(keys.size());
        double tile_max = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < keys.size(); ++t) {
          logits[t] = dot(q.row(i), k.row(keys[t])) * inv_sqrt_d;
          tile_max = std::max(tile_max, logits[t]);
        }
        const double new_max = std::max(running_max[r], tile_max);
        const double rescale = std::exp(running_max[r] - new_max);
        double* row_acc = acc.data() + r * dv;
        running_sum[r] *= rescale;
        for (std::size_t c = 0; c < dv; ++c) row_acc[c] *= rescale;
        for (std::size_t t = 0; t < keys.size(); ++t) {
          const double w = std::exp(logits[t] - new_max);
          running_sum[r] += w;
          const auto vr = v.row(keys[t]);
          for (std::size_t c = 0; c < dv; ++c) {
            row_acc[c] += w * static_cast<double>(vr[c]);
          }
        }
        running_max[r] = new_max;
      }
    }

    for (std::size_t r = 0; r < rows; ++r) {
      if (!(running_sum[r] > 0.0)) throw EmptyRowError(first_q + r);
      auto out = result.out.row(first_q + r);
      for (std::size_t c = 0; c < dv; ++c) {
        out[c] = acc[r * dv + c] / running_sum[r];
      }
    }
  }
  return result;
}

namespace {

// True probabilities of row i over keys 0..i.
std::vector<long double> dense_row_probs(const Tensor2D& q, const Tensor2D& k,
                                         std::size_t i, double inv_sqrt_d) {
  std::vector<long double> p(i + 1);
  long double max_logit = -std::numeric_limits<long double>::infinity();
  for (std::size_t j = 0; j <= i; ++j) {
    p[j] = dot(q.row(i), k.row(j)) * inv_sqrt_d;
    max_logit = std::max(max_logit, p[j]);
  }
  long double total = 0.0L;
  for (auto& x : p) {
    x = std::exp(x - max_logit);
    total += x;
  }
  for (auto& x : p) x /= total;
  return p;
}

}  // namespace

std::vector<double> uncovered_mass(const Tensor2D& q, const Tensor2D& k,
                                   const SparseIndexSet& s) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  std::vector<double> result(q.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto p = dense_row_probs(q, k, i, inv_sqrt_d);
    long double uncovered = 0.0L;
    for (std::size_t j = 0; j <= i; ++j) {
      if (!s.contains(i, j)) uncovered += p[j];
    }
    result[i] = static_cast<double>(uncovered);
  }
  return result;
}

ErrorBoundReport check_error_bound(const Tensor2D& q, const Tensor2D& k,
                                   const Tensor2D& v, const SparseIndexSet& s,
                                   const Matrix<double>& sparse_out) {
  check_shapes(q, k, v);
  if (sparse_out.rows() != q.rows() || sparse_out.cols() != v.cols()) {
    throw std::invalid_argument("sparse output shape mismatch");
  }
  // Absolute allowance for double rounding in the two outputs, relative to
  // the magnitude of the value column.
  constexpr double kRoundingSlack = 1e-12;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const std::size_t dv = v.cols();

  ErrorBoundReport report;
  long double diff_sq = 0.0L, ref_sq = 0.0L, coverage_sum = 0.0L;
  std::vector<long double> abs_v_sum(dv, 0.0L);
  std::vector<long double> dense(dv);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto vr_i = v.row(i);
    for (std::size_t c = 0; c < dv; ++c) abs_v_sum[c] += std::fabs(vr_i[c]);

    const auto p = dense_row_probs(q, k, i, inv_sqrt_d);
    long double uncovered = 0.0L;
    std::fill(dense.begin(), dense.end(), 0.0L);
    for (std::size_t j = 0; j <= i; ++j) {
      if (!s.contains(i, j)) uncovered += p[j];
      const auto vr = v.row(j);
      for (std::size_t c = 0; c < dv; ++c) dense[c] += p[j] * vr[c];
    }
    const double coverage = static_cast<double>(1.0L - uncovered);
    coverage_sum += coverage;
    report.min_coverage = std::min(report.min_coverage, coverage);

    for (std::size_t c = 0; c < dv; ++c) {
      const double diff =
          static_cast<double>(std::fabs(dense[c] - sparse_out(i, c)));
      const double bound = static_cast<double>(uncovered * abs_v_sum[c]);
      const double slack =
          kRoundingSlack * static_cast<double>(abs_v_sum[c] + 1.0L);
      if (diff > bound + slack) ++report.violations;
      if (bound > 0.0) {
        report.max_bound_ratio = std::max(report.max_bound_ratio, diff / bound);
      }
      report.error_linf = std::max(report.error_linf, diff);
      diff_sq += static_cast<long double>(diff) * diff;
      ref_sq += dense[c] * dense[c];
    }
  }
  report.error_l2 = ref_sq > 0.0L
                        ? static_cast<double>(std::sqrt(diff_sq / ref_sq))
                        : static_cast<double>(std::sqrt(diff_sq));
  report.mean_coverage =
      static_cast<double>(coverage_sum / static_cast<long double>(q.rows()));
  return report;
}

}  // namespace flexattn
