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
#include <numeric>
#include <vector>

#include "test_support.hpp"
#include "uninl/encoder.hpp"

using namespace uninl;
using namespace uninl::testing;

namespace
{

const EncoderDims kDims{6, 5, 4, 3};

std::vector<double> random_vector(std::size_t n, Rng & rng)
{
  std::vector<double> v(n);
  for (auto & x : v) {
    x = rng.uniform(-1, 1);
  }
  return v;
}

}  // namespace

TEST(Encode, ZeroParametersGiveB2)
{
  auto p = EncoderParams<double>::zeros(kDims);
  p.b2 = {0.5, -1, 2, 0};
  Rng rng(1);
  EXPECT_EQ(encode(p, random_vector(6, rng)).z, p.b2);
}

TEST(Encode, EvalModeIsPure)
{
  Rng rng(2);
  const auto p = random_params(kDims, rng);
  const auto x = random_vector(6, rng);
  EXPECT_EQ(encode(p, x).z, encode(p, x).z);
}

TEST(Encode, MatchesPerElementOracle)
{
  Rng rng(3);
  for (const auto act : {Activation::tanh, Activation::relu}) {
    const auto p = random_params(kDims, rng, act);
    const auto x = random_vector(6, rng);
    std::vector<double> h(5);
    for (std::size_t j = 0; j < 5; ++j) {
      double a = p.b1[j];
      for (std::size_t i = 0; i < 6; ++i) {
        a += p.w1.storage()[i * 5 + j] * x[i];
      }
      h[j] = act == Activation::tanh ? std::tanh(a) : std::max(a, 0.0);
    }
    const auto z = encode(p, x).z;
    for (std::size_t k = 0; k < 4; ++k) {
      double v = p.b2[k];
      for (std::size_t j = 0; j < 5; ++j) {
        v += p.w2.storage()[j * 4 + k] * h[j];
      }
      EXPECT_NEAR(z[k], v, 1e-12);
    }
  }
}

TEST(Encode, DropoutNeedsAnRngAndRejectsBadRates)
{
  Rng rng(4);
  const auto p = random_params(kDims, rng);
  const auto x = random_vector(6, rng);
  EXPECT_THROW(encode(p, x, 0.5), std::invalid_argument);
  EXPECT_THROW(encode(p, x, 0.0, &rng), std::invalid_argument);
  EXPECT_THROW(encode(p, x, 1.0, &rng), std::invalid_argument);
  EXPECT_THROW(encode(p, std::vector<double>(5), 0.0), DimensionError);
}

TEST(Encode, InvertedDropoutScalesKeptUnits)
{
  Rng rng(5);
  const auto p = random_params(kDims, rng);
  const auto x = random_vector(6, rng);
  Rng drop(6);
  const auto enc = encode(p, x, 0.5, &drop);
  for (std::size_t j = 0; j < 5; ++j) {
    const double m = enc.cache.mask[j];
    EXPECT_TRUE(m == 0.0 || m == 2.0);
    EXPECT_DOUBLE_EQ(enc.cache.dropped[j], enc.cache.hidden[j] * m);
  }
}

TEST(Classify, ZeroHeadIsUniform)
{
  auto p = EncoderParams<double>::zeros(kDims);
  const auto probs = classify(p, std::vector<double>{1, 2, 3, 4});
  for (const double v : probs) {
    EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  }
}

TEST(Softmax, LargeLogitsDoNotOverflow)
{
  const std::vector<double> logits{1000.0, 0.0};
  const auto p = softmax(std::span<const double>(logits));
  EXPECT_NEAR(p[0], 1.0, 1e-300);
  EXPECT_GE(p[1], 0.0);
  EXPECT_LT(p[1], 1e-300);
  EXPECT_TRUE(std::isfinite(p[0]));
}

TEST(Classify, SimplexAndArgmaxMatchLogits)
{
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const auto p = random_params(kDims, rng);
    const auto z = random_vector(4, rng);
    const auto logits = head_logits(p, std::span<const double>(z));
    const auto probs = classify(p, z);
    EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-12);
    for (const double v : probs) {
      EXPECT_GE(v, 0.0);
    }
    EXPECT_EQ(std::max_element(probs.begin(), probs.end()) - probs.begin(),
              std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients)
{
  Rng rng(8);
  const auto p = random_params(kDims, rng);
  const auto enc = encode(p, random_vector(6, rng));
  const std::vector<double> gz(4, 0.0), gl(3, 0.0);
  const auto g = backward(p, enc.cache, std::span<const double>(gz), std::span<const double>(gl));
  EXPECT_EQ(g, Gradients<double>::zeros_like(p));
}

TEST(Backward, B2GradientIsChainRuleOfLastLayer)
{
  Rng rng(9);
  const auto p = random_params(kDims, rng);
  const auto enc = encode(p, random_vector(6, rng));
  const auto gz = random_vector(4, rng), gl = random_vector(3, rng);
  const auto g = backward(p, enc.cache, std::span<const double>(gz), std::span<const double>(gl));
  for (std::size_t k = 0; k < 4; ++k) {
    double expect = gz[k];
    for (std::size_t c = 0; c < 3; ++c) {
      expect += p.wc(k, c) * gl[c];
    }
    EXPECT_NEAR(g.b2[k], expect, 1e-14);
  }
}

TEST(Backward, NeedsSomeUpstreamGradient)
{
  Rng rng(10);
  const auto p = random_params(kDims, rng);
  const auto enc = encode(p, random_vector(6, rng));
  EXPECT_THROW(backward(p, enc.cache, {}, {}), std::invalid_argument);
}

TEST(Backward, EachParameterMatchesCentralDifferences)
{
  // Linear functional L = a.z + b.logits of one forward pass, with dropout.
  Rng rng(11);
  const auto p = random_params(kDims, rng);
  const auto x = random_vector(6, rng);
  const auto a = random_vector(4, rng), b = random_vector(3, rng);
  Rng mask_a(12);
  const auto enc = encode(p, x, 0.3, &mask_a);
  std::vector<double> dx;
  auto grads = Gradients<double>::zeros_like(p);
  accumulate_backward(p, enc.cache, std::span<const double>(a), std::span<const double>(b), grads, &dx);

  auto p_ld = p.cast<long double>();
  const std::vector<long double> x_ld(x.begin(), x.end());
  auto loss_at_params = [&](const std::vector<long double> & flat) {
    unflatten<long double>(flat, p_ld);
    Rng mask(12);
    const auto e = encode(p_ld, x_ld, 0.3, &mask);
    const auto logits = head_logits(p_ld, std::span<const long double>(e.z));
    long double l = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      l += a[k] * e.z[k];
    }
    for (std::size_t c = 0; c < 3; ++c) {
      l += b[c] * logits[c];
    }
    return l;
  };
  const auto numeric = central_differences(flatten<long double>(p_ld), loss_at_params);
  const auto analytic = flatten<double>(grads);
  ASSERT_EQ(numeric.size(), analytic.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    EXPECT_LT(relative_error(analytic[i], static_cast<double>(numeric[i])), 1e-4) << "entry " << i;
  }

  const auto p_x = p.cast<long double>();
  auto loss_at_input = [&](const std::vector<long double> & xv) {
    Rng mask(12);
    const auto e = encode(p_x, xv, 0.3, &mask);
    const auto logits = head_logits(p_x, std::span<const long double>(e.z));
    long double l = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      l += a[k] * e.z[k];
    }
    for (std::size_t c = 0; c < 3; ++c) {
      l += b[c] * logits[c];
    }
    return l;
  };
  const auto numeric_x = central_differences(x_ld, loss_at_input);
  for (std::size_t i = 0; i < dx.size(); ++i) {
    EXPECT_LT(relative_error(dx[i], static_cast<double>(numeric_x[i])), 1e-4) << "input " << i;
  }
}

TEST(Glorot, WithinRangeWithZeroBiases)
{
  Rng rng(13);
  const auto p = EncoderParams<double>::glorot(kDims, rng);
  const double a1 = std::sqrt(6.0 / (6 + 5));
  for (const double v : p.w1.flat()) {
    EXPECT_LE(std::abs(v), a1);
  }
  EXPECT_EQ(p.b1, std::vector<double>(5, 0.0));
  EXPECT_TRUE(p.consistent());
  EXPECT_EQ(p.dims(), kDims);
}

TEST(Activation, ParseRoundTrips)
{
  EXPECT_EQ(parse_activation(to_string(Activation::relu)), Activation::relu);
  EXPECT_EQ(parse_activation("tanh"), Activation::tanh);
  EXPECT_THROW(parse_activation("gelu"), std::invalid_argument);
}
