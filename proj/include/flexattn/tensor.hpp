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

// Dense substrate shared by every attention stage: a row-major matrix,
// validated probability vectors and the handful of reductions the selectors
// need (stable softmax, block pooling, descending argsort, prefix mass).

#ifndef FLEXATTN_TENSOR_HPP_
#define FLEXATTN_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flexattn {

// Row-major matrix with an explicit shape.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("matrix data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " +
                                  std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool all_finite() const {
    for (const T& x : data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  // Copy of rows [first, first + count).
  Matrix slice_rows(std::size_t first, std::size_t count) const {
    if (first + count > rows_) throw std::out_of_range("row slice out of range");
    return Matrix(count, cols_,
                  std::vector<T>(data_.begin() + first * cols_,
                                 data_.begin() + (first + count) * cols_));
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Activations (Q, K, V) are stored in single precision; score maps, pooled
// values and attention outputs are kept in double.
using Tensor2D = Matrix<float>;
using ScoreMatrix = Matrix<double>;

// Nonnegative entries summing to one (within 1e-6).
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-6;

  ProbVector() = default;
  // Validates; throws std::invalid_argument on negative entries or bad sum.
  explicit ProbVector(std::vector<double> probs);

  // Divides by the total. Throws if the total is not positive.
  static ProbVector normalized(std::vector<double> weights);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const { return probs_; }
  auto begin() const { return probs_.begin(); }
  auto end() const { return probs_.end(); }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> probs_;
};

// Softmax with max subtraction and long-double accumulation. `keep[i] ==
// false` masks position i to probability exactly zero.
ProbVector stable_softmax(std::span<const double> logits,
                          std::optional<std::span<const bool>> keep = {});

enum class Axis { kRows, kCols };
enum class PoolMode { kAvg, kSum };

// Pools `block` consecutive entries along `axis`. The final block may be
// ragged; averages divide by its actual length.
template <typename T>
ScoreMatrix block_pool(const Matrix<T>& m, std::size_t block, Axis axis,
                       PoolMode mode) {
  if (block == 0) throw std::invalid_argument("pool block must be >= 1");
  const std::size_t extent = axis == Axis::kRows ? m.rows() : m.cols();
  const std::size_t pooled = (extent + block - 1) / block;
  const std::size_t out_rows = axis == Axis::kRows ? pooled : m.rows();
  const std::size_t out_cols = axis == Axis::kRows ? m.cols() : pooled;
  ScoreMatrix out(out_rows, out_cols);
  if (axis == Axis::kRows) {
    std::vector<long double> acc(m.cols());
    for (std::size_t b = 0; b < pooled; ++b) {
      const std::size_t first = b * block;
      const std::size_t last = std::min(extent, first + block);
      std::fill(acc.begin(), acc.end(), 0.0L);
      for (std::size_t r = first; r < last; ++r) {
        const auto src = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) acc[c] += src[c];
      }
      const long double scale =
          mode == PoolMode::kAvg ? 1.0L / static_cast<long double>(last - first)
                                 : 1.0L;
      for (std::size_t c = 0; c < m.cols(); ++c) {
        out(b, c) = static_cast<double>(acc[c] * scale);
      }
    }
  } else {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto src = m.row(r);
      for (std::size_t b = 0; b < pooled; ++b) {
        const std::size_t first = b * block;
        const std::size_t last = std::min(extent, first + block);
        long double acc = 0.0L;
        for (std::size_t c = first; c < last; ++c) acc += src[c];
        if (mode == PoolMode::kAvg) acc /= static_cast<long double>(last - first);
        out(r, b) = static_cast<double>(acc);
      }
    }
  }
  return out;
}

// Indices ordering `v` nonincreasing; ties keep the lower index first.
std::vector<std::size_t> argsort_desc(std::span<const double> v);

// Smallest K with sum(sorted_probs[0..K)) >= gamma. Falls back to the full
// length when rounding leaves the total short of gamma. gamma must lie in
// (0, 1].
std::size_t min_prefix_count(std::span<const double> sorted_probs,
                             double gamma);

}  // namespace flexattn

#endif  // FLEXATTN_TENSOR_HPP_
