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

#include <doctest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "flexattn/attention.hpp"
#include "test_util.hpp"

namespace fa = flexattn;
using fa::testing::max_abs_diff;
using fa::testing::naive_attention;
using fa::testing::random_tensor;
using fa::testing::relative_l2;

namespace {

fa::SparseIndexSet random_blocks(std::size_t n, std::size_t block,
                                 double density, std::uint64_t seed) {
  fa::Rng rng(seed, 9);
  const std::size_t nb = (n + block - 1) / block;
  std::vector<std::vector<std::size_t>> rows(nb);
  for (std::size_t qb = 0; qb < nb; ++qb) {
    rows[qb].push_back(qb);  // keeps every row non-empty
    for (std::size_t kb = 0; kb < qb; ++kb) {
      if (rng.uniform() < density) rows[qb].push_back(kb);
    }
  }
  return fa::SparseIndexSet::blocks(rows, block, n);
}

}  // namespace

TEST_CASE("expand_index_set examples") {
  using P = fa::ElementPair;
  const auto a = fa::expand_index_set(fa::SparseIndexSet::vertical_slash({0}, {}, 2, 4));
  CHECK(a == std::vector<P>{{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  const auto b = fa::expand_index_set(fa::SparseIndexSet::vertical_slash({}, {0}, 2, 3));
  CHECK(b == std::vector<P>{{0, 0}, {1, 1}, {2, 2}});
  const auto c = fa::expand_index_set(fa::SparseIndexSet::vertical_slash({0}, {0}, 2, 3));
  std::set<P> u;
  for (std::size_t i = 0; i < 3; ++i) {
    u.insert({i, 0});
    u.insert({i, i});
  }
  CHECK(c.size() == 5);
  CHECK(std::set<P>(c.begin(), c.end()) == u);
}

TEST_CASE("selected_pair_count matches expansion") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    fa::Rng rng(seed, 3);
    const std::size_t n = 1 + rng.below(90);
    const std::size_t block = 1 + rng.below(16);
    std::vector<std::size_t> vs, ss;
    for (std::size_t t = 0; t < 1 + rng.below(6); ++t) vs.push_back(rng.below(n));
    for (std::size_t t = 0; t < 1 + rng.below(6); ++t) ss.push_back(rng.below(n));
    const auto s = fa::SparseIndexSet::vertical_slash(vs, ss, block, n);
    CHECK(fa::selected_pair_count(s) == fa::expand_index_set(s).size());
    const auto b = random_blocks(n, block, 0.4, seed);
    CHECK(fa::selected_pair_count(b) == fa::expand_index_set(b).size());
    for (const auto& [i, j] : fa::expand_index_set(s)) CHECK(s.contains(i, j));
  }
  CHECK(fa::selected_pair_count(fa::SparseIndexSet::full(8, 50)) ==
        fa::causal_pair_count(50));
}

TEST_CASE("index set construction rejects bad input") {
  CHECK_THROWS_AS(fa::SparseIndexSet::vertical_slash({5}, {}, 2, 5),
                  std::invalid_argument);
  CHECK_THROWS_AS(fa::SparseIndexSet::blocks({{0}, {2}}, 2, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(fa::SparseIndexSet::blocks({{0}}, 2, 4),
                  std::invalid_argument);
}

TEST_CASE("rasterize covers every selected element") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    fa::Rng rng(seed, 4);
    const std::size_t n = 10 + rng.below(100);
    const std::size_t block = 1 + rng.below(12);
    std::vector<std::size_t> vs, ss;
    for (int t = 0; t < 4; ++t) {
      vs.push_back(rng.below(n));
      ss.push_back(rng.below(n));
    }
    const auto s = fa::SparseIndexSet::vertical_slash(vs, ss, block, n);
    const auto r = fa::rasterize(s);
    REQUIRE_FALSE(r.is_vertical_slash());
    for (const auto& [i, j] : fa::expand_index_set(s)) {
      const auto& row = r.as_blocks().key_blocks[i / block];
      CHECK(std::binary_search(row.begin(), row.end(), j / block));
    }
  }
}

TEST_CASE("dense attention with one key returns v row 0") {
  const auto q = random_tensor(1, 8, 1), k = random_tensor(1, 8, 2),
             v = random_tensor(1, 8, 3);
  const auto out = fa::dense_causal_attention(q, k, v).out;
  for (std::size_t c = 0; c < 8; ++c) CHECK(out(0, c) == static_cast<double>(v(0, c)));
}

TEST_CASE("identical keys give the mean of visible values") {
  const std::size_t n = 12, d = 4;
  const auto q = random_tensor(n, d, 1);
  fa::Tensor2D k(n, d, 0.7f);
  const auto v = random_tensor(n, d, 3);
  const auto out = fa::dense_causal_attention(q, k, v).out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j <= i; ++j) mean += v(j, c);
      mean /= static_cast<double>(i + 1);
      CHECK(out(i, c) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("dense attention matches the naive loop oracle") {
  const auto q = random_tensor(64, 16, 10), k = random_tensor(64, 16, 11),
             v = random_tensor(64, 16, 12);
  const auto out = fa::dense_causal_attention(q, k, v).out;
  const auto ref = naive_attention(q, k, v, [](auto, auto) { return true; });
  CHECK(max_abs_diff(out, ref) <= 1e-6);
}

TEST_CASE("masked attention with complete S equals dense") {
  const auto q = random_tensor(70, 8, 20), k = random_tensor(70, 8, 21),
             v = random_tensor(70, 8, 22);
  const auto dense = fa::dense_causal_attention(q, k, v).out;
  const auto full = fa::sparse_attention_masked(q, k, v, fa::SparseIndexSet::full(16, 70)).out;
  CHECK(max_abs_diff(dense, full) <= 1e-6);
}

TEST_CASE("diagonal slash returns each row's own value") {
  const auto q = random_tensor(20, 8, 1), k = random_tensor(20, 8, 2),
             v = random_tensor(20, 8, 3);
  const auto s = fa::SparseIndexSet::vertical_slash({}, {0}, 4, 20);
  const auto out = fa::sparse_attention_masked(q, k, v, s).out;
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t c = 0; c < 8; ++c) CHECK(out(i, c) == static_cast<double>(v(i, c)));
  }
}

TEST_CASE("masked attention matches the explicit-mask oracle") {
  const std::size_t n = 48;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto q = random_tensor(n, 8, seed), k = random_tensor(n, 8, seed + 100),
               v = random_tensor(n, 8, seed + 200);
    fa::Rng rng(seed, 5);
    std::vector<std::size_t> vs = {0}, ss = {0};
    for (int t = 0; t < 3; ++t) {
      vs.push_back(rng.below(n));
      ss.push_back(rng.below(n));
    }
    const auto s = fa::SparseIndexSet::vertical_slash(vs, ss, 8, n);
    const auto out = fa::sparse_attention_masked(q, k, v, s).out;
    const auto ref = naive_attention(q, k, v, [&](std::size_t i, std::size_t j) {
      return s.contains(i, j);
    });
    CHECK(max_abs_diff(out, ref) <= 1e-6);

    const auto b = random_blocks(n, 8, 0.3, seed);
    const auto outb = fa::sparse_attention_masked(q, k, v, b).out;
    const auto refb = naive_attention(q, k, v, [&](std::size_t i, std::size_t j) {
      return b.contains(i, j);
    });
    CHECK(max_abs_diff(outb, refb) <= 1e-6);
  }
}

TEST_CASE("masked attention reports an empty row") {
  const auto q = random_tensor(8, 4, 1), k = random_tensor(8, 4, 2),
             v = random_tensor(8, 4, 3);
  // Vertical 5 only: rows 0..4 have no key.
  const auto s = fa::SparseIndexSet::vertical_slash({5}, {}, 4, 8);
  CHECK_THROWS_AS(fa::sparse_attention_masked(q, k, v, s), fa::EmptyRowError);
}

TEST_CASE("streaming kernel equals masked path") {
  SUBCASE("full set matches dense") {
    const auto q = random_tensor(300, 16, 1), k = random_tensor(300, 16, 2),
               v = random_tensor(300, 16, 3);
    const auto s = fa::SparseIndexSet::full(64, 300);
    const auto dense = fa::dense_causal_attention(q, k, v).out;
    CHECK(relative_l2(fa::block_sparse_attention_stream(q, k, v, s).out, dense) <= 1e-5);
  }
  SUBCASE("diagonal blocks only") {
    const auto q = random_tensor(256, 16, 4), k = random_tensor(256, 16, 5),
               v = random_tensor(256, 16, 6);
    std::vector<std::vector<std::size_t>> rows(4);
    for (std::size_t qb = 0; qb < 4; ++qb) rows[qb] = {qb};
    const auto s = fa::SparseIndexSet::blocks(rows, 64, 256);
    CHECK(max_abs_diff(fa::block_sparse_attention_stream(q, k, v, s).out,
                       fa::sparse_attention_masked(q, k, v, s).out) <= 1e-5);
  }
  SUBCASE("random 30% BlockSet, n=1024, block=128") {
    const auto q = random_tensor(1024, 32, 7), k = random_tensor(1024, 32, 8),
               v = random_tensor(1024, 32, 9);
    const auto s = random_blocks(1024, 128, 0.3, 7);
    CHECK(max_abs_diff(fa::block_sparse_attention_stream(q, k, v, s).out,
                       fa::sparse_attention_masked(q, k, v, s).out) <= 1e-5);
  }
  SUBCASE("vertical-slash set with ragged tail") {
    const auto q = random_tensor(203, 8, 10), k = random_tensor(203, 8, 11),
               v = random_tensor(203, 8, 12);
    const auto s = fa::SparseIndexSet::vertical_slash({0, 17, 150}, {0, 3, 90}, 32, 203);
    CHECK(max_abs_diff(fa::block_sparse_attention_stream(q, k, v, s).out,
                       fa::sparse_attention_masked(q, k, v, s).out) <= 1e-5);
  }
}

TEST_CASE("error bound holds and enlarging S shrinks uncovered mass") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 96;
    const auto q = random_tensor(n, 8, seed, 2.0), k = random_tensor(n, 8, seed + 1, 2.0),
               v = random_tensor(n, 8, seed + 2);
    const auto small = fa::SparseIndexSet::vertical_slash({0}, {0, 1}, 16, n);
    const auto large = fa::SparseIndexSet::vertical_slash({0, 5, 40}, {0, 1, 2, 7}, 16, n);
    const auto out = fa::sparse_attention_masked(q, k, v, small).out;
    const auto rep = fa::check_error_bound(q, k, v, small, out);
    CHECK(rep.violations == 0);
    CHECK(rep.max_bound_ratio <= 1.0 + 1e-9);
    const auto us = fa::uncovered_mass(q, k, small);
    const auto ul = fa::uncovered_mass(q, k, large);
    for (std::size_t i = 0; i < n; ++i) CHECK(ul[i] <= us[i] + 1e-15);
  }
}

TEST_CASE("error bound independent recomputation") {
  const std::size_t n = 40;
  const auto q = random_tensor(n, 4, 3, 2.0), k = random_tensor(n, 4, 4, 2.0),
             v = random_tensor(n, 4, 5);
  const auto s = fa::SparseIndexSet::vertical_slash({2}, {0}, 8, n);
  const auto dense = naive_attention(q, k, v, [](auto, auto) { return true; });
  const auto sparse = naive_attention(q, k, v, [&](std::size_t i, std::size_t j) {
    return s.contains(i, j);
  });
  const auto um = fa::uncovered_mass(q, k, s);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      double vsum = 0;
      for (std::size_t j = 0; j <= i; ++j) vsum += std::abs(v(j, c));
      CHECK(std::abs(dense(i, c) - sparse(i, c)) <= um[i] * vsum + 1e-12);
    }
  }
}
