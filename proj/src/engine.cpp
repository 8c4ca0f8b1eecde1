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

#include "flexattn/engine.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace flexattn {
namespace {

std::uint64_t ceil_log2(std::uint64_t n) {
  return n <= 1 ? 0 : static_cast<std::uint64_t>(std::bit_width(n - 1));
}

void fill_selection_counts(const SparseIndexSet& s, const SparseIndexSet& raster,
                           HeadReport& report) {
  if (s.is_vertical_slash()) {
    report.vertical_lines = s.as_vertical_slash().verticals.size();
    report.slash_lines = s.as_vertical_slash().slashes.size();
  }
  std::size_t blocks = 0;
  for (const auto& row : raster.as_blocks().key_blocks) blocks += row.size();
  report.selected_blocks = blocks;
  report.visited_block_pairs = selected_pair_count(raster);
}

}  // namespace

void HeadConfig::validate() const {
  if (block == 0) throw std::invalid_argument("block size must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("tau must lie in [0, 1]");
  }
  budget.validate();
}

FlopRecord count_flops(std::size_t n, std::size_t d, std::size_t block,
                       const SparseIndexSet& s) {
  if (s.seq_len() != n) {
    throw std::invalid_argument("selection length does not match n");
  }
  const std::uint64_t b = std::min(block, n);
  FlopRecord f;
  f.representative = 2 * b * n * d;
  f.pattern_search = FlopRecord::kPatternSearchOpsPerScore * b * n;
  f.index_build = FlopRecord::kIndexBuildOpsPerElement * n * ceil_log2(n);
  f.sparse_attention = 4 * selected_pair_count(s) * d;
  f.dense = 4 * causal_pair_count(n) * d;
  return f;
}

FlopRecord dense_flops(std::size_t n, std::size_t d) {
  FlopRecord f;
  f.dense = 4 * causal_pair_count(n) * d;
  f.sparse_attention = f.dense;
  return f;
}

HeadResult flexprefill_head(const Tensor2D& q, const Tensor2D& k,
                            const Tensor2D& v, const HeadConfig& cfg) {
  cfg.validate();
  if (q.rows() == 0) throw std::invalid_argument("empty sequence");
  if (q.rows() != k.rows() || k.rows() != v.rows()) {
    throw std::invalid_argument("q, k and v must have the same number of rows");
  }
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("query/key head dimension mismatch");
  }
  const std::size_t n = q.rows();
  const std::size_t d = q.cols();
  HeadReport report;
  report.total_causal_pairs = causal_pair_count(n);

  std::optional<SparseIndexSet> selected;
  if (n <= cfg.block) {
    // One block: nothing to search, attend densely.
    selected = SparseIndexSet::full(cfg.block, n);
    report.dense_fallback = true;
    report.pattern = PatternDecision{
        0.0 < cfg.tau ? PatternKind::kQuerySpecific : PatternKind::kVerticalSlash,
        0.0, cfg.tau};
    report.estimated_coverage = 1.0;
    report.flops = dense_flops(n, d);
  } else {
    const std::size_t first =
        representative_start(n, cfg.block, cfg.representative);
    const Tensor2D q_hat =
        select_representative_queries(q, cfg.block, cfg.representative);
    // Shared by the pattern decision and the vertical-slash scores.
    const ScoreMatrix rep = representative_attention(q_hat, k, first);
    report.pattern = decide_from_distributions(
        estimated_block_distribution(q_hat, k, cfg.block, first),
        true_block_distribution_from_map(rep, cfg.block), cfg.tau);

    IndexSelection selection =
        report.pattern.kind == PatternKind::kQuerySpecific
            ? select_query_aware(block_estimated_attention(q, k, cfg.block),
                                 cfg.budget, n, cfg.block)
            : select_vertical_slash(vertical_slash_scores(rep, n, first),
                                    cfg.budget, n, cfg.block);
    report.estimated_coverage = selection.estimated_coverage;
    selected = std::move(selection.indices);
    report.flops = count_flops(n, d, cfg.block, *selected);
  }

  fill_selection_counts(*selected, rasterize(*selected), report);
  report.selected_tokens = selected_pair_count(*selected);
  report.sparsity_ratio =
      1.0 - static_cast<double>(report.selected_tokens) /
                static_cast<double>(report.total_causal_pairs);

  AttentionOutput output = block_sparse_attention_stream(q, k, v, *selected);

  if (cfg.collect_error_metrics) {
    const ErrorBoundReport check =
        check_error_bound(q, k, v, *selected, output.out);
    report.true_coverage = check.mean_coverage;
    report.min_true_coverage = check.min_coverage;
    report.error_linf = check.error_linf;
    report.error_l2 = check.error_l2;
    report.bound_violations = check.violations;
  }
  return HeadResult{std::move(output), std::move(report), std::move(*selected)};
}

MultiHeadError::MultiHeadError(
    std::vector<std::pair<std::size_t, std::string>> f)
    : std::runtime_error([&] {
        std::string msg = std::to_string(f.size()) + " head(s) failed";
        for (const auto& [head, what] : f) {
          msg += "; head " + std::to_string(head) + ": " + what;
        }
        return msg;
      }()),
      failures_(std::move(f)) {}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("FLEXATTN_THREADS")) {
    std::size_t value = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, value);
    if (ec == std::errc() && ptr == end && value > 0) return value;
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

std::vector<HeadResult> flexprefill_multihead(std::span<const HeadInput> heads,
                                              const HeadConfig& cfg,
                                              std::size_t threads) {
  cfg.validate();
  for (std::size_t h = 1; h < heads.size(); ++h) {
    if (heads[h].q.cols() != heads[0].q.cols()) {
      throw std::invalid_argument("head " + std::to_string(h) +
                                  " has a different head dimension");
    }
  }
  if (threads == 0) threads = default_thread_count();
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, heads.size()));

  std::vector<std::optional<HeadResult>> slots(heads.size());
  std::vector<std::pair<std::size_t, std::string>> failures;
  std::mutex failures_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t h = next.fetch_add(1); h < heads.size();
         h = next.fetch_add(1)) {
      try {
        slots[h] = flexprefill_head(heads[h].q, heads[h].k, heads[h].v, cfg);
      } catch (const std::exception& e) {
        std::lock_guard lock(failures_mutex);
        failures.emplace_back(h, e.what());
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    throw MultiHeadError(std::move(failures));
  }
  std::vector<HeadResult> results;
  results.reserve(heads.size());
  for (auto& slot : slots) results.push_back(std::move(*slot));
  return results;
}

}  // namespace flexattn
