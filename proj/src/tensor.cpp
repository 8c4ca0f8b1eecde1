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

#include "flexattn/tensor.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace flexattn {

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const double p = probs_[i];
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("probability entry " + std::to_string(i) +
                                  " is negative or not finite");
    }
    total += p;
  }
  if (std::fabs(static_cast<double>(total) - 1.0) > kSumTolerance) {
    throw std::invalid_argument("probabilities sum to " +
                                std::to_string(static_cast<double>(total)) +
                                ", expected 1");
  }
}

ProbVector ProbVector::normalized(std::vector<double> weights) {
  long double total = 0.0L;
  for (double w : weights) total += w;
  if (!(total > 0.0L)) {
    throw std::invalid_argument("cannot normalize weights with total <= 0");
  }
  for (double& w : weights) w = static_cast<double>(w / total);
  return ProbVector(std::move(weights));
}

ProbVector stable_softmax(std::span<const double> logits,
                          std::optional<std::span<const bool>> keep) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  if (keep && keep->size() != logits.size()) {
    throw std::invalid_argument("softmax mask length mismatch");
  }
  const auto kept = [&](std::size_t i) { return !keep || (*keep)[i]; };

  double max_logit = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!kept(i)) continue;
    any = true;
    max_logit = std::max(max_logit, logits[i]);
  }
  if (!any) throw std::invalid_argument("empty attention row");

  std::vector<long double> e(logits.size(), 0.0L);
  long double total = 0.0L;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!kept(i)) continue;
    e[i] = std::exp(static_cast<long double>(logits[i]) - max_logit);
    total += e[i];
  }
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = static_cast<double>(e[i] / total);
  }
  return ProbVector(std::move(probs));
}

std::vector<std::size_t> argsort_desc(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

std::size_t min_prefix_count(std::span<const double> sorted_probs,
                             double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0) {
    throw std::invalid_argument("gamma must lie in (0, 1]");
  }
  // Extended accumulation: sums that equal gamma exactly (ties such as
  // 0.4 + 0.3 + 0.2 against 0.9) must not depend on summation order.
  long double prefix = 0.0L;
  for (std::size_t k = 0; k < sorted_probs.size(); ++k) {
    prefix += sorted_probs[k];
    if (prefix >= gamma) return k + 1;
  }
  return sorted_probs.size();
}

}  // namespace flexattn
