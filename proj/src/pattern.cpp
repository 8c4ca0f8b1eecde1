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

#include "flexattn/pattern.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace flexattn {
namespace {

std::atomic<std::uint64_t> g_representative_evaluations{0};

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    acc += static_cast<double>(a[c]) * static_cast<double>(b[c]);
  }
  return acc;
}

std::size_t resolve_first(const Tensor2D& q_hat, const Tensor2D& k,
                          std::optional<std::size_t> first_position) {
  if (q_hat.rows() == 0) throw std::invalid_argument("no representative rows");
  if (q_hat.cols() != k.cols()) {
    throw std::invalid_argument("query/key head dimension mismatch");
  }
  if (q_hat.rows() > k.rows()) {
    throw std::invalid_argument("more representative rows than keys");
  }
  const std::size_t first = first_position.value_or(k.rows() - q_hat.rows());
  if (first + q_hat.rows() > k.rows()) {
    throw std::invalid_argument("representative window extends past the keys");
  }
  return first;
}

// Kullback-Leibler divergence in bits; zero-probability terms of p vanish.
double kl_bits(std::span<const double> p, std::span<const double> m) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += p[i] * std::log2(p[i] / m[i]);
  }
  return acc;
}

}  // namespace

const char* to_string(PatternKind kind) {
  return kind == PatternKind::kQuerySpecific ? "query_specific"
                                             : "vertical_slash";
}

std::size_t representative_start(std::size_t rows, std::size_t block,
                                 RepresentativePosition pos) {
  const std::size_t count = std::min(block, rows);
  return pos == RepresentativePosition::kLast ? rows - count
                                              : (rows - count) / 2;
}

Tensor2D select_representative_queries(const Tensor2D& q, std::size_t block,
                                       RepresentativePosition pos) {
  if (q.rows() == 0) throw std::invalid_argument("no query rows");
  if (block == 0) throw std::invalid_argument("block size must be >= 1");
  const std::size_t count = std::min(block, q.rows());
  return q.slice_rows(representative_start(q.rows(), block, pos), count);
}

ScoreMatrix representative_attention(const Tensor2D& q_hat, const Tensor2D& k,
                                     std::optional<std::size_t> first_position) {
  const std::size_t first = resolve_first(q_hat, k, first_position);
  g_representative_evaluations.fetch_add(1, std::memory_order_relaxed);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  ScoreMatrix map(q_hat.rows(), k.rows());
  std::vector<double> logits;
  for (std::size_t r = 0; r < q_hat.rows(); ++r) {
    const std::size_t visible = first + r + 1;
    logits.resize(visible);
    for (std::size_t j = 0; j < visible; ++j) {
      logits[j] = dot(q_hat.row(r), k.row(j)) * inv_sqrt_d;
    }
    const ProbVector p = stable_softmax(logits);
    std::copy(p.begin(), p.end(), map.row(r).begin());
  }
  return map;
}

std::uint64_t representative_attention_evaluations() {
  return g_representative_evaluations.load(std::memory_order_relaxed);
}

ProbVector estimated_block_distribution(
    const Tensor2D& q_hat, const Tensor2D& k, std::size_t block,
    std::optional<std::size_t> first_position) {
  const std::size_t first = resolve_first(q_hat, k, first_position);
  if (block == 0) throw std::invalid_argument("block size must be >= 1");
  const ScoreMatrix pooled_q =
      block_pool(q_hat, q_hat.rows(), Axis::kRows, PoolMode::kAvg);
  const ScoreMatrix pooled_k = block_pool(k, block, Axis::kRows, PoolMode::kAvg);
  const std::size_t nb = pooled_k.rows();
  const std::size_t visible = (first + q_hat.rows() - 1) / block + 1;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(k.cols()));

  std::vector<double> logits(nb, 0.0);
  auto keep = std::make_unique<bool[]>(nb);  // value-initialized to false
  for (std::size_t b = 0; b < visible; ++b) {
    double acc = 0.0;
    for (std::size_t c = 0; c < k.cols(); ++c) acc += pooled_q(0, c) * pooled_k(b, c);
    logits[b] = acc * inv_sqrt_d;
    keep[b] = true;
  }
  return stable_softmax(logits, std::span<const bool>(keep.get(), nb));
}

ProbVector true_block_distribution_from_map(const ScoreMatrix& rep_attention,
                                            std::size_t block) {
  if (block == 0) throw std::invalid_argument("block size must be >= 1");
  if (rep_attention.rows() == 0) throw std::invalid_argument("empty map");
  const ScoreMatrix summed =
      block_pool(rep_attention, block, Axis::kCols, PoolMode::kSum);
  std::vector<double> mean(summed.cols(), 0.0);
  for (std::size_t b = 0; b < summed.cols(); ++b) {
    long double acc = 0.0L;
    for (std::size_t r = 0; r < summed.rows(); ++r) acc += summed(r, b);
    mean[b] = static_cast<double>(acc / static_cast<long double>(summed.rows()));
  }
  return ProbVector::normalized(std::move(mean));
}

ProbVector true_block_distribution(const Tensor2D& q_hat, const Tensor2D& k,
                                   std::size_t block,
                                   std::optional<std::size_t> first_position) {
  return true_block_distribution_from_map(
      representative_attention(q_hat, k, first_position), block);
}

double js_distance(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("js_distance length mismatch: " +
                                std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()));
  }
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  const double jsd = 0.5 * (kl_bits(p.values(), m) + kl_bits(q.values(), m));
  return std::clamp(std::sqrt(std::max(jsd, 0.0)), 0.0, 1.0);
}

PatternDecision decide_from_distributions(const ProbVector& estimated,
                                          const ProbVector& truth, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("tau must lie in [0, 1]");
  }
  PatternDecision d;
  d.js_distance = js_distance(estimated, truth);
  d.tau = tau;
  d.kind = d.js_distance < tau ? PatternKind::kQuerySpecific
                               : PatternKind::kVerticalSlash;
  return d;
}

PatternDecision decide_pattern(const Tensor2D& q, const Tensor2D& k,
                               std::size_t block, double tau,
                               RepresentativePosition pos) {
  const Tensor2D q_hat = select_representative_queries(q, block, pos);
  const std::size_t first = representative_start(q.rows(), block, pos);
  return decide_from_distributions(
      estimated_block_distribution(q_hat, k, block, first),
      true_block_distribution(q_hat, k, block, first), tau);
}

}  // namespace flexattn
