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

// Shared helpers for the test binaries.

#ifndef FLEXATTN_TESTS_TEST_UTIL_HPP_
#define FLEXATTN_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "flexattn/tensor.hpp"
#include "flexattn/workload.hpp"

namespace flexattn::testing {

inline Tensor2D random_tensor(std::size_t rows, std::size_t cols,
                              std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed, 0x7e57);
  std::vector<float> data(rows * cols);
  for (float& x : data) x = static_cast<float>(scale * rng.normal());
  return Tensor2D(rows, cols, std::move(data));
}

inline std::vector<double> random_weights(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, 0xd157);
  std::vector<double> w(n);
  for (double& x : w) x = rng.uniform() + 1e-3;
  return w;
}

inline double relative_l2(const Matrix<double>& a, const Matrix<double>& b) {
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = a.data()[i] - b.data()[i];
    num += d * d;
    den += static_cast<long double>(b.data()[i]) * b.data()[i];
  }
  return den > 0 ? static_cast<double>(std::sqrt(num / den))
                 : static_cast<double>(std::sqrt(num));
}

inline double max_abs_diff(const Matrix<double>& a, const Matrix<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

// Naive causal attention with an explicit mask, long double throughout.
template <typename Keep>
Matrix<double> naive_attention(const Tensor2D& q, const Tensor2D& k,
                               const Tensor2D& v, Keep keep) {
  const std::size_t n = q.rows(), d = q.cols();
  Matrix<double> out(n, v.cols());
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<long double> w(n, 0.0L);
    long double mx = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) {
      if (!keep(i, j)) continue;
      long double s = 0;
      for (std::size_t c = 0; c < d; ++c) {
        s += static_cast<long double>(q(i, c)) * k(j, c);
      }
      w[j] = s * scale;
      mx = std::max(mx, w[j]);
    }
    long double z = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      if (!keep(i, j)) continue;
      w[j] = std::exp(w[j] - mx);
      z += w[j];
    }
    for (std::size_t c = 0; c < v.cols(); ++c) {
      long double acc = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        if (keep(i, j)) acc += w[j] * v(j, c);
      }
      out(i, c) = static_cast<double>(acc / z);
    }
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& leaf) {
  const char* env = std::getenv("FLEXATTN_TEST_TMP");
  std::filesystem::path base =
      env ? std::filesystem::path(env)
          : std::filesystem::temp_directory_path() / "flexattn_tests";
  std::filesystem::path dir = base / leaf;
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace flexattn::testing

#endif  // FLEXATTN_TESTS_TEST_UTIL_HPP_
