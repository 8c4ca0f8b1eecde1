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

// Synthetic Q/K/V heads with planted attention structure.
//
// Structure is planted in logit space: reserved coordinates carry aligned
// components whose dot product adds a known boost to q.k / sqrt(d).
//  - needle: coordinate 0 is set to c = sqrt(gain * sqrt(d)) in every query
//    and in the spike keys (column 0 plus spike_count - 1 seeded columns),
//    so those keys gain `spike_gain` logits for every query.
//  - blocky: coordinates [0, clusters) tag blocks of `block` rows with a
//    cluster; a query block shares its cluster with at least one earlier key
//    block and never with its own diagonal block (except block 0). Matching
//    (query block, key block) pairs gain `cluster_gain` logits uniformly.
//  - local: deterministic random Fourier features whose inner product is
//    gain * mean_m cos(w_m (i - j)) ~ gain * exp(-decay |i - j|), with w_m
//    at stratified quantiles of a Cauchy distribution of scale decay.
//  - random: independent standard normal Q and K.
// Remaining coordinates hold N(0, 1/2) noise; V is N(0, 1) throughout.
//
// Randomness comes from std::mt19937_64 (fully specified by the C++
// standard) seeded through std::seed_seq{seed_lo, seed_hi, head}. Uniforms
// take the top 53 bits; normals use Box-Muller.

#ifndef FLEXATTN_WORKLOAD_HPP_
#define FLEXATTN_WORKLOAD_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "flexattn/tensor.hpp"

namespace flexattn {

enum class WorkloadKind { kNeedle, kBlocky, kLocal, kRandom };

const char* to_string(WorkloadKind kind);
// Throws std::invalid_argument for unknown names.
WorkloadKind parse_workload_kind(const std::string& name);

struct NeedleParams {
  std::size_t spike_count = 4;
  double spike_gain = 10.0;
};

struct BlockyParams {
  std::size_t cluster_count = 4;
  double cluster_gain = 8.0;
  std::size_t block = 128;
};

struct LocalParams {
  std::size_t window_width = 128;
  double decay_rate = 0.0;  // 0 selects 3 / window_width
  double gain = 12.0;

  double effective_decay() const {
    return decay_rate > 0.0 ? decay_rate
                            : 3.0 / static_cast<double>(window_width);
  }
};

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::kRandom;
  std::size_t seq_len = 1024;
  std::size_t dim = 64;
  std::uint64_t seed = 0;
  NeedleParams needle;
  BlockyParams blocky;
  LocalParams local;

  void validate() const;
};

struct PlantedStructure {
  std::vector<std::size_t> spike_columns;  // needle, ascending
  std::vector<std::pair<std::size_t, std::size_t>> block_pairs;  // blocky
  std::size_t window_width = 0;            // local
};

struct Workload {
  Tensor2D q;
  Tensor2D k;
  Tensor2D v;
  PlantedStructure truth;
};

Workload generate(const WorkloadSpec& spec, std::size_t head = 0);

// Seeded generator used by the workloads; exposed for tests and tools.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  double uniform();  // [0, 1)
  double normal();
  std::size_t below(std::size_t bound);  // [0, bound)

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace flexattn

#endif  // FLEXATTN_WORKLOAD_HPP_
