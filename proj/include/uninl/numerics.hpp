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

// Dense kernels and deterministic randomness shared by every module.

#ifndef UNINL__NUMERICS_HPP_
#define UNINL__NUMERICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace uninl
{

class DimensionError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense matrix.
template <typename T>
class BasicMatrix
{
public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
  : rows_(rows), cols_(cols), data_(rows * cols, fill)
  {
  }
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
  : rows_(rows), cols_(cols), data_(std::move(data))
  {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length does not match rows x cols");
    }
  }

  static BasicMatrix identity(std::size_t n)
  {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      m(i, i) = T{1};
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T & operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T & operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  const std::vector<T> & storage() const noexcept { return data_; }

  template <typename U>
  BasicMatrix<U> cast() const
  {
    return BasicMatrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicMatrix &, const BasicMatrix &) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using Vector = std::vector<double>;

template <typename T>
bool all_finite(std::span<const T> values)
{
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T> & a, const BasicMatrix<T> & b)
{
  if (a.cols() != b.rows()) {
    throw DimensionError(
      "matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
      std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const T aip = a(i, p);
      const auto b_row = b.row(p);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        out_row[j] += aip * b_row[j];
      }
    }
  }
  return out;
}

template <typename Range>
using range_value_t = std::remove_cvref_t<decltype(*std::data(std::declval<const Range &>()))>;

template <typename U, typename V>
auto dot(const U & u, const V & v)
{
  if (std::size(u) != std::size(v)) {
    throw DimensionError("dot: dimension mismatch");
  }
  range_value_t<U> acc{0};
  for (std::size_t i = 0; i < std::size(u); ++i) {
    acc += u[i] * v[i];
  }
  return acc;
}

template <typename U, typename V>
auto squared_euclidean(const U & u, const V & v)
{
  if (std::size(u) != std::size(v)) {
    throw DimensionError(
      "euclidean: dimension mismatch (" + std::to_string(std::size(u)) + " vs " +
      std::to_string(std::size(v)) + ")");
  }
  range_value_t<U> acc{0};
  for (std::size_t i = 0; i < std::size(u); ++i) {
    const auto d = u[i] - v[i];
    acc += d * d;
  }
  return acc;
}

template <typename U, typename V>
auto euclidean(const U & u, const V & v)
{
  using std::sqrt;
  return sqrt(squared_euclidean(u, v));
}

template <typename U>
auto l2_norm(const U & v)
{
  using std::sqrt;
  range_value_t<U> acc{0};
  for (const auto x : v) {
    acc += x * x;
  }
  return sqrt(acc);
}

inline constexpr double kNormEpsilon = 1e-12;

template <typename T>
struct Normalized
{
  std::vector<T> values;
  T norm{0};
  /// False when the input norm was at or below kNormEpsilon; `values` is then the input.
  bool normalized = false;
};

template <typename U, typename T = range_value_t<U>>
Normalized<T> l2_normalize(const U & v)
{
  Normalized<T> out{std::vector<T>(std::begin(v), std::end(v)), l2_norm(v), false};
  if (out.norm > T(kNormEpsilon)) {
    for (T & x : out.values) {
      x /= out.norm;
    }
    out.normalized = true;
  }
  return out;
}

/// Backpropagates through y = v / |v|: returns (g - y (y.g)) / |v|.
template <typename T, typename G>
std::vector<T> l2_normalize_backward(const Normalized<T> & fwd, const G & grad_out)
{
  std::vector<T> g(std::begin(grad_out), std::end(grad_out));
  if (!fwd.normalized) {
    return g;
  }
  const T yg = dot(fwd.values, grad_out);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (g[i] - fwd.values[i] * yg) / fwd.norm;
  }
  return g;
}

/// SplitMix64 step; used for seeding and for deriving independent sub-seeds.
constexpr std::uint64_t splitmix64(std::uint64_t & state) noexcept
{
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept
{
  std::uint64_t s = seed ^ (salt * 0xD1B54A32D192ED03ULL);
  splitmix64(s);
  return splitmix64(s);
}

/// xoshiro256** seeded through SplitMix64. Every sampler below is implemented
/// here rather than through <random> distributions, whose output differs
/// between standard library implementations.
class Rng
{
public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed)
  {
    std::uint64_t sm = seed;
    for (auto & word : state_) {
      word = splitmix64(sm);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept
  {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) (Lemire's multiply-and-reject).
  std::uint64_t uniform_index(std::uint64_t n) noexcept
  {
    if (n <= 1) {
      return 0;
    }
    std::uint64_t hi = 0;
    std::uint64_t lo = mul_wide(next_u64(), n, hi);
    if (lo < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        lo = mul_wide(next_u64(), n, hi);
      }
    }
    return hi;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
      u1 = uniform();
    }
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  template <typename Elem>
  void shuffle(std::span<Elem> items) noexcept
  {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

private:
  /// Full 128-bit product of a and b: returns the low word, stores the high word.
  static constexpr std::uint64_t mul_wide(std::uint64_t a, std::uint64_t b, std::uint64_t & hi) noexcept
  {
    const std::uint64_t a_lo = a & 0xFFFFFFFFULL, a_hi = a >> 32;
    const std::uint64_t b_lo = b & 0xFFFFFFFFULL, b_hi = b >> 32;
    const std::uint64_t ll = a_lo * b_lo;
    const std::uint64_t lh = a_lo * b_hi;
    const std::uint64_t hl = a_hi * b_lo;
    const std::uint64_t hh = a_hi * b_hi;
    const std::uint64_t mid = (ll >> 32) + (lh & 0xFFFFFFFFULL) + (hl & 0xFFFFFFFFULL);
    hi = hh + (lh >> 32) + (hl >> 32) + (mid >> 32);
    return (mid << 32) | (ll & 0xFFFFFFFFULL);
  }

  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
  {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

class FactorizationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Cholesky factor L of a symmetric positive-definite matrix (A = L L^T).
template <typename T>
class Cholesky
{
public:
  explicit Cholesky(const BasicMatrix<T> & a) : lower_(a.rows(), a.cols())
  {
    if (a.rows() != a.cols()) {
      throw DimensionError("cholesky: matrix is not square");
    }
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
      T diag = a(j, j);
      for (std::size_t p = 0; p < j; ++p) {
        diag -= lower_(j, p) * lower_(j, p);
      }
      if (!(diag > T{0})) {
        throw FactorizationError(
          "cholesky: matrix not positive definite at pivot " + std::to_string(j));
      }
      lower_(j, j) = std::sqrt(diag);
      for (std::size_t i = j + 1; i < n; ++i) {
        T s = a(i, j);
        for (std::size_t p = 0; p < j; ++p) {
          s -= lower_(i, p) * lower_(j, p);
        }
        lower_(i, j) = s / lower_(j, j);
      }
    }
  }

  const BasicMatrix<T> & lower() const noexcept { return lower_; }

  /// Solves L y = b.
  std::vector<T> solve_lower(std::span<const T> b) const
  {
    const std::size_t n = lower_.rows();
    if (b.size() != n) {
      throw DimensionError("cholesky: rhs dimension mismatch");
    }
    std::vector<T> y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < i; ++p) {
        y[i] -= lower_(i, p) * y[p];
      }
      y[i] /= lower_(i, i);
    }
    return y;
  }

  /// Solves A x = b.
  std::vector<T> solve(std::span<const T> b) const
  {
    std::vector<T> x = solve_lower(b);
    const std::size_t n = lower_.rows();
    for (std::size_t ii = n; ii-- > 0;) {
      for (std::size_t p = ii + 1; p < n; ++p) {
        x[ii] -= lower_(p, ii) * x[p];
      }
      x[ii] /= lower_(ii, ii);
    }
    return x;
  }

private:
  BasicMatrix<T> lower_;
};

}  // namespace uninl

#endif  // UNINL__NUMERICS_HPP_
