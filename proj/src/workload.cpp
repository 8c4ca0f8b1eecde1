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

#include "flexattn/workload.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace flexattn {
namespace {

constexpr double kNoiseStd = 0.7071067811865476;  // sqrt(1/2)
constexpr double kLocalNoiseStd = 0.05;

void fill_normal(Tensor2D& t, Rng& rng, std::size_t first_col, double stddev) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = first_col; c < t.cols(); ++c) {
      t(r, c) = static_cast<float>(stddev * rng.normal());
    }
  }
}

// Amplitude a with a * a / sqrt(d) == gain.
double boost_amplitude(double gain, std::size_t dim) {
  return std::sqrt(gain * std::sqrt(static_cast<double>(dim)));
}

void make_needle(const WorkloadSpec& spec, Rng& rng, Workload& w) {
  const std::size_t n = spec.seq_len;
  fill_normal(w.q, rng, 1, kNoiseStd);
  fill_normal(w.k, rng, 1, kNoiseStd);
  std::vector<std::size_t> spikes{0};
  while (spikes.size() < spec.needle.spike_count) {
    const std::size_t col = 1 + rng.below(n - 1);
    if (std::find(spikes.begin(), spikes.end(), col) == spikes.end()) {
      spikes.push_back(col);
    }
  }
  std::sort(spikes.begin(), spikes.end());
  const auto amp =
      static_cast<float>(boost_amplitude(spec.needle.spike_gain, spec.dim));
  for (std::size_t i = 0; i < n; ++i) w.q(i, 0) = amp;
  for (std::size_t j = 0; j < n; ++j) w.k(j, 0) = 0.0f;
  for (std::size_t j : spikes) w.k(j, 0) = amp;
  w.truth.spike_columns = std::move(spikes);
}

void make_blocky(const WorkloadSpec& spec, Rng& rng, Workload& w) {
  const std::size_t n = spec.seq_len;
  const std::size_t b = spec.blocky.block;
  const std::size_t clusters = spec.blocky.cluster_count;
  const std::size_t nb = (n + b - 1) / b;
  fill_normal(w.q, rng, clusters, kNoiseStd);
  fill_normal(w.k, rng, clusters, kNoiseStd);

  std::vector<std::size_t> key_cluster(nb), query_cluster(nb);
  for (std::size_t kb = 0; kb < nb; ++kb) key_cluster[kb] = rng.below(clusters);
  for (std::size_t qb = 0; qb < nb; ++qb) {
    std::vector<std::size_t> candidates;
    for (std::size_t kb = 0; kb < qb; ++kb) {
      if (key_cluster[kb] != key_cluster[qb]) candidates.push_back(key_cluster[kb]);
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()),
                     candidates.end());
    query_cluster[qb] = candidates.empty()
                            ? key_cluster[qb]
                            : candidates[rng.below(candidates.size())];
  }

  const auto amp =
      static_cast<float>(boost_amplitude(spec.blocky.cluster_gain, spec.dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < clusters; ++c) {
      w.q(i, c) = 0.0f;
      w.k(i, c) = 0.0f;
    }
    w.q(i, query_cluster[i / b]) = amp;
    w.k(i, key_cluster[i / b]) = amp;
  }
  for (std::size_t qb = 0; qb < nb; ++qb) {
    for (std::size_t kb = 0; kb <= qb; ++kb) {
      if (key_cluster[kb] == query_cluster[qb]) {
        w.truth.block_pairs.emplace_back(qb, kb);
      }
    }
  }
}

void make_local(const WorkloadSpec& spec, Rng& rng, Workload& w) {
  const std::size_t n = spec.seq_len;
  const std::size_t freqs = spec.dim / 2;
  const double decay = spec.local.effective_decay();
  fill_normal(w.q, rng, 0, kLocalNoiseStd);
  fill_normal(w.k, rng, 0, kLocalNoiseStd);
  // q_i . k_j = amp^2 * sum_m cos(w_m (i - j)) = gain * sqrt(d) * mean_m(...)
  const double amp = std::sqrt(spec.local.gain *
                               std::sqrt(static_cast<double>(spec.dim)) /
                               static_cast<double>(freqs));
  for (std::size_t m = 0; m < freqs; ++m) {
    const double quantile =
        (static_cast<double>(m) + 0.5) / static_cast<double>(2 * freqs);
    const double omega = decay * std::tan(std::numbers::pi * quantile);
    for (std::size_t i = 0; i < n; ++i) {
      const double phase = omega * static_cast<double>(i);
      const auto c = static_cast<float>(amp * std::cos(phase));
      const auto s = static_cast<float>(amp * std::sin(phase));
      w.q(i, 2 * m) += c;
      w.q(i, 2 * m + 1) += s;
      w.k(i, 2 * m) += c;
      w.k(i, 2 * m + 1) += s;
    }
  }
  w.truth.window_width = spec.local.window_width;
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below(0)");
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

const char* to_string(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::kNeedle: return "needle";
    case WorkloadKind::kBlocky: return "blocky";
    case WorkloadKind::kLocal: return "local";
    case WorkloadKind::kRandom: return "random";
  }
  return "unknown";
}

WorkloadKind parse_workload_kind(const std::string& name) {
  if (name == "needle") return WorkloadKind::kNeedle;
  if (name == "blocky") return WorkloadKind::kBlocky;
  if (name == "local") return WorkloadKind::kLocal;
  if (name == "random") return WorkloadKind::kRandom;
  throw std::invalid_argument("unknown workload kind '" + name + "'");
}

void WorkloadSpec::validate() const {
  if (seq_len == 0) throw std::invalid_argument("seq_len must be >= 1");
  if (dim == 0) throw std::invalid_argument("dim must be >= 1");
  switch (kind) {
    case WorkloadKind::kNeedle:
      if (dim < 2) throw std::invalid_argument("needle workload needs dim >= 2");
      if (needle.spike_count == 0 || needle.spike_count > seq_len) {
        throw std::invalid_argument("spike_count must lie in [1, seq_len]");
      }
      if (!(needle.spike_gain > 0.0)) {
        throw std::invalid_argument("spike_gain must be > 0");
      }
      break;
    case WorkloadKind::kBlocky:
      if (blocky.cluster_count == 0 || blocky.cluster_count >= dim) {
        throw std::invalid_argument("cluster_count must lie in [1, dim)");
      }
      if (blocky.block == 0) throw std::invalid_argument("block must be >= 1");
      if (!(blocky.cluster_gain > 0.0)) {
        throw std::invalid_argument("cluster_gain must be > 0");
      }
      break;
    case WorkloadKind::kLocal:
      if (dim < 2) throw std::invalid_argument("local workload needs dim >= 2");
      if (local.window_width == 0 || local.window_width > seq_len) {
        throw std::invalid_argument("window_width must lie in [1, seq_len]");
      }
      if (!(local.gain > 0.0) || local.decay_rate < 0.0) {
        throw std::invalid_argument("local gain must be > 0, decay >= 0");
      }
      break;
    case WorkloadKind::kRandom:
      break;
  }
}

Workload generate(const WorkloadSpec& spec, std::size_t head) {
  spec.validate();
  Rng rng(spec.seed, head);
  Workload w{Tensor2D(spec.seq_len, spec.dim), Tensor2D(spec.seq_len, spec.dim),
             Tensor2D(spec.seq_len, spec.dim), {}};
  switch (spec.kind) {
    case WorkloadKind::kNeedle: make_needle(spec, rng, w); break;
    case WorkloadKind::kBlocky: make_blocky(spec, rng, w); break;
    case WorkloadKind::kLocal: make_local(spec, rng, w); break;
    case WorkloadKind::kRandom:
      fill_normal(w.q, rng, 0, 1.0);
      fill_normal(w.k, rng, 0, 1.0);
      break;
  }
  fill_normal(w.v, rng, 0, 1.0);
  if (!w.q.all_finite() || !w.k.all_finite() || !w.v.all_finite()) {
    throw std::runtime_error("generator produced non-finite values");
  }
  return w;
}

}  // namespace flexattn
