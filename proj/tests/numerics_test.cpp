// Copyright 2026 The UniNL Toolkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "test_support.hpp"
#include "uninl/numerics.hpp"

using namespace uninl;
using uninl::testing::random_matrix;

TEST(Matmul, IdentityLeavesMatrixUnchanged)
{
  Rng rng(1);
  const auto m = random_matrix(3, 4, rng);
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matmul, OneByOne)
{
  EXPECT_EQ(matmul(Matrix(1, 1, 2.0), Matrix(1, 1, 3.0))(0, 0), 6.0);
}

TEST(Matmul, MatchesTripleLoop)
{
  Rng rng(2);
  const auto a = random_matrix(5, 4, rng);
  const auto b = random_matrix(4, 3, rng);
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t p = 0; p < 4; ++p) {
        ref += a.storage()[i * 4 + p] * b.storage()[p * 3 + j];
      }
      EXPECT_NEAR(c(i, j), ref, 1e-12);
    }
  }
}

TEST(Matmul, RejectsShapeMismatch)
{
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST(Matrix, RejectsWrongDataLength)
{
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(L2Normalize, ThreeFour)
{
  const auto n = l2_normalize(std::vector<double>{3, 4});
  EXPECT_TRUE(n.normalized);
  EXPECT_DOUBLE_EQ(n.values[0], 0.6);
  EXPECT_DOUBLE_EQ(n.values[1], 0.8);
}

TEST(L2Normalize, ZeroVectorIsFlagged)
{
  const auto n = l2_normalize(std::vector<double>{0, 0});
  EXPECT_FALSE(n.normalized);
  EXPECT_EQ(n.values, (std::vector<double>{0, 0}));
}

TEST(L2Normalize, UnitVectorIsFixed)
{
  const auto n = l2_normalize(std::vector<double>{1, 0, 0});
  EXPECT_EQ(n.values, (std::vector<double>{1, 0, 0}));
}

TEST(L2Normalize, IdempotentOnRandomVectors)
{
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(7);
    for (auto & x : v) {
      x = rng.uniform(-5, 5);
    }
    const auto once = l2_normalize(v);
    const auto twice = l2_normalize(once.values);
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_NEAR(twice.values[i], once.values[i], 1e-15);
    }
  }
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences)
{
  Rng rng(4);
  std::vector<double> v(5), g(5);
  for (std::size_t i = 0; i < 5; ++i) {
    v[i] = rng.uniform(-1, 1);
    g[i] = rng.uniform(-1, 1);
  }
  const auto fwd = l2_normalize(v);
  const auto grad = l2_normalize_backward(fwd, g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 5; ++i) {
    auto up = v, down = v;
    up[i] += h;
    down[i] -= h;
    const double fd = (dot(l2_normalize(up).values, g) - dot(l2_normalize(down).values, g)) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-8);
  }
}

TEST(Euclidean, BasicCases)
{
  const std::vector<double> u{1.5, -2}, zero{0, 0}, p{3, 4};
  EXPECT_EQ(euclidean(u, u), 0.0);
  EXPECT_DOUBLE_EQ(euclidean(zero, p), 5.0);
  EXPECT_THROW(euclidean(std::vector<double>{1}, p), DimensionError);
}

TEST(Euclidean, MatchesScalarLoop)
{
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> u(9), v(9);
    double acc = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
      u[i] = rng.uniform(-3, 3);
      v[i] = rng.uniform(-3, 3);
      acc += (u[i] - v[i]) * (u[i] - v[i]);
    }
    EXPECT_NEAR(euclidean(u, v), std::sqrt(acc), 1e-12);
  }
}

TEST(Euclidean, SymmetryAndTriangleInequality)
{
  Rng rng(6);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> a(4), b(4), c(4);
    for (std::size_t i = 0; i < 4; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      c[i] = rng.normal();
    }
    EXPECT_NEAR(euclidean(a, b), euclidean(b, a), 1e-9);
    EXPECT_LE(euclidean(a, c), euclidean(a, b) + euclidean(b, c) + 1e-9);
  }
}

TEST(Rng, IdenticalSeedsGiveIdenticalStreams)
{
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, KnownFirstOutputs)
{
  // xoshiro256** seeded by SplitMix64; pinned so platform drift is caught.
  Rng rng(0);
  std::uint64_t sm = 0;
  std::uint64_t s[4];
  for (auto & w : s) {
    w = splitmix64(sm);
  }
  const auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  for (int i = 0; i < 10; ++i) {
    const std::uint64_t expect = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    EXPECT_EQ(rng.next_u64(), expect);
  }
}

TEST(Rng, UniformIndexStaysInRangeAndCoversIt)
{
  Rng rng(7);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.uniform_index(13);
    ASSERT_LT(v, 13u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 13u);
  EXPECT_EQ(rng.uniform_index(1), 0u);
}

#if defined(__SIZEOF_INT128__)
TEST(Rng, UniformIndexMatchesWideMultiply)
{
  Rng a(8), b(8);
  for (const std::uint64_t n : {3ULL, 10ULL, 1000003ULL, 0x8000000000000001ULL}) {
    for (int i = 0; i < 200; ++i) {
      const std::uint64_t got = a.uniform_index(n);
      __extension__ using u128 = unsigned __int128;
      u128 m = static_cast<u128>(b.next_u64()) * n;
      auto low = static_cast<std::uint64_t>(m);
      if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
          m = static_cast<u128>(b.next_u64()) * n;
          low = static_cast<std::uint64_t>(m);
        }
      }
      ASSERT_EQ(got, static_cast<std::uint64_t>(m >> 64));
    }
  }
}
#endif

TEST(Rng, NormalMomentsArePlausible)
{
  Rng rng(9);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, UniformLiesInHalfOpenInterval)
{
  Rng rng(10);
  for (int i = 0; i < 10000; ++i) {
    const double v = rng.uniform();
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Rng, ShuffleIsAPermutation)
{
  Rng rng(11);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(std::span<int>(v));
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(DeriveSeed, SaltsSeparateStreams)
{
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(5, 9), derive_seed(5, 9));
}

TEST(Cholesky, SolvesRandomSpdSystems)
{
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto b = random_matrix(6, 6, rng);
    Matrix a(6, 6);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        for (std::size_t p = 0; p < 6; ++p) {
          a(i, j) += b(i, p) * b(j, p);
        }
      }
      a(i, i) += 0.5;
    }
    std::vector<double> rhs(6);
    for (auto & v : rhs) {
      v = rng.normal();
    }
    const Cholesky<double> chol(a);
    const auto x = chol.solve(rhs);
    for (std::size_t i = 0; i < 6; ++i) {
      double ax = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        ax += a(i, j) * x[j];
      }
      EXPECT_NEAR(ax, rhs[i], 1e-10);
    }
  }
}

TEST(Cholesky, RejectsIndefiniteMatrix)
{
  Matrix a(2, 2, std::vector<double>{1, 2, 2, 1});
  EXPECT_THROW(Cholesky<double>{a}, FactorizationError);
}

TEST(AllFinite, DetectsNanAndInf)
{
  const std::vector<double> ok{1, 2}, bad{1, std::nan("")}, inf{HUGE_VAL};
  EXPECT_TRUE(all_finite(std::span<const double>(ok)));
  EXPECT_FALSE(all_finite(std::span<const double>(bad)));
  EXPECT_FALSE(all_finite(std::span<const double>(inf)));
}
