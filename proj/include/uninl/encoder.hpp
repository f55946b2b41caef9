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

// Two-layer MLP encoder with a linear softmax head, and its exact backward pass.
//
//   hidden = act(W1^T x + b1)          W1: D_in x H
//   z      = W2^T (mask * hidden) + b2 W2: H x D_z   (inverted dropout mask)
//   logits = Wc^T z + bc               Wc: D_z x C

#ifndef UNINL__ENCODER_HPP_
#define UNINL__ENCODER_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "uninl/numerics.hpp"

namespace uninl
{

enum class Activation { tanh, relu };

inline std::string_view to_string(Activation a) noexcept
{
  return a == Activation::tanh ? "tanh" : "relu";
}

inline Activation parse_activation(std::string_view name)
{
  if (name == "tanh") {
    return Activation::tanh;
  }
  if (name == "relu") {
    return Activation::relu;
  }
  throw std::invalid_argument("unknown activation '" + std::string(name) + "' (tanh|relu)");
}

struct EncoderDims
{
  std::size_t input = 0;
  std::size_t hidden = 64;
  std::size_t repr = 32;
  std::size_t classes = 0;
  friend bool operator==(const EncoderDims &, const EncoderDims &) = default;
};

/// The six parameter blocks; shared layout of parameters, gradients and Adam moments.
template <typename T>
struct LayerBlocks
{
  BasicMatrix<T> w1;
  std::vector<T> b1;
  BasicMatrix<T> w2;
  std::vector<T> b2;
  BasicMatrix<T> wc;
  std::vector<T> bc;

  static LayerBlocks zeros(const EncoderDims & d)
  {
    return LayerBlocks{
      BasicMatrix<T>(d.input, d.hidden), std::vector<T>(d.hidden),
      BasicMatrix<T>(d.hidden, d.repr), std::vector<T>(d.repr),
      BasicMatrix<T>(d.repr, d.classes), std::vector<T>(d.classes)};
  }

  EncoderDims dims() const noexcept { return {w1.rows(), w1.cols(), w2.cols(), wc.cols()}; }

  template <typename F>
  void for_each_block(F && f)
  {
    f("W1", w1.flat());
    f("b1", std::span<T>(b1));
    f("W2", w2.flat());
    f("b2", std::span<T>(b2));
    f("Wc", wc.flat());
    f("bc", std::span<T>(bc));
  }

  template <typename F>
  void for_each_block(F && f) const
  {
    f("W1", w1.flat());
    f("b1", std::span<const T>(b1));
    f("W2", w2.flat());
    f("b2", std::span<const T>(b2));
    f("Wc", wc.flat());
    f("bc", std::span<const T>(bc));
  }

  std::size_t parameter_count() const noexcept
  {
    return w1.size() + b1.size() + w2.size() + b2.size() + wc.size() + bc.size();
  }

  bool same_shape(const LayerBlocks & o) const noexcept
  {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
           w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size() &&
           wc.rows() == o.wc.rows() && wc.cols() == o.wc.cols() && bc.size() == o.bc.size();
  }

  bool consistent() const noexcept
  {
    return b1.size() == w1.cols() && w2.rows() == w1.cols() && b2.size() == w2.cols() &&
           wc.rows() == w2.cols() && bc.size() == wc.cols();
  }

  friend bool operator==(const LayerBlocks &, const LayerBlocks &) = default;
};

template <typename T>
struct EncoderParams : LayerBlocks<T>
{
  Activation activation = Activation::tanh;

  static EncoderParams zeros(const EncoderDims & d, Activation act = Activation::tanh)
  {
    return EncoderParams{LayerBlocks<T>::zeros(d), act};
  }

  /// Glorot-uniform weights, zero biases.
  static EncoderParams glorot(const EncoderDims & d, Rng & rng, Activation act = Activation::tanh)
  {
    auto p = zeros(d, act);
    auto fill = [&rng](BasicMatrix<T> & m) {
      const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (auto & v : m.flat()) {
        v = static_cast<T>(rng.uniform(-a, a));
      }
    };
    fill(p.w1);
    fill(p.w2);
    fill(p.wc);
    return p;
  }

  template <typename U>
  EncoderParams<U> cast() const
  {
    return EncoderParams<U>{
      {this->w1.template cast<U>(), {this->b1.begin(), this->b1.end()},
       this->w2.template cast<U>(), {this->b2.begin(), this->b2.end()},
       this->wc.template cast<U>(), {this->bc.begin(), this->bc.end()}},
      activation};
  }

  friend bool operator==(const EncoderParams &, const EncoderParams &) = default;
};

template <typename T>
struct Gradients : LayerBlocks<T>
{
  static Gradients zeros_like(const LayerBlocks<T> & p) { return Gradients{LayerBlocks<T>::zeros(p.dims())}; }

  Gradients & operator+=(const Gradients & o)
  {
    auto src = o.flat_blocks();
    std::size_t b = 0;
    this->for_each_block([&](std::string_view, std::span<T> dst) {
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[b][i];
      }
      ++b;
    });
    return *this;
  }

  std::vector<std::span<const T>> flat_blocks() const
  {
    std::vector<std::span<const T>> out;
    this->for_each_block([&](std::string_view, std::span<const T> s) { out.push_back(s); });
    return out;
  }
};

template <typename T>
struct ForwardCache
{
  std::vector<T> input;
  std::vector<T> pre_activation;
  std::vector<T> hidden;
  std::vector<T> mask;  // empty in eval mode
  std::vector<T> dropped;
  std::vector<T> z;
};

template <typename T>
struct Encoded
{
  std::vector<T> z;
  ForwardCache<T> cache;
};

namespace detail
{

template <typename T>
T activate(Activation a, T x) noexcept
{
  using std::tanh;
  return a == Activation::tanh ? tanh(x) : (x > T{0} ? x : T{0});
}

template <typename T>
T activate_derivative(Activation a, T pre, T post) noexcept
{
  return a == Activation::tanh ? T{1} - post * post : (pre > T{0} ? T{1} : T{0});
}

}  // namespace detail

/// Forward pass. Training mode (dropout_rate > 0) requires an Rng; eval mode forbids one.
template <typename T>
Encoded<T> encode(
  const EncoderParams<T> & params, std::span<const std::type_identity_t<T>> x, double dropout_rate = 0.0,
  Rng * rng = nullptr)
{
  const auto d = params.dims();
  if (x.size() != d.input) {
    throw DimensionError(
      "encode: input has dimension " + std::to_string(x.size()) + ", encoder expects " +
      std::to_string(d.input));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("encode: dropout rate must lie in [0, 1)");
  }
  if ((dropout_rate > 0.0) != (rng != nullptr)) {
    throw std::invalid_argument("encode: an Rng is required exactly when dropout is active");
  }
  Encoded<T> out;
  auto & c = out.cache;
  c.input.assign(x.begin(), x.end());
  c.pre_activation = params.b1;
  for (std::size_t i = 0; i < d.input; ++i) {
    const T xi = x[i];
    const auto w_row = params.w1.row(i);
    for (std::size_t j = 0; j < d.hidden; ++j) {
      c.pre_activation[j] += w_row[j] * xi;
    }
  }
  c.hidden.resize(d.hidden);
  for (std::size_t j = 0; j < d.hidden; ++j) {
    c.hidden[j] = detail::activate(params.activation, c.pre_activation[j]);
  }
  c.dropped = c.hidden;
  if (rng != nullptr) {
    const T keep_scale = T(1.0 / (1.0 - dropout_rate));
    c.mask.resize(d.hidden);
    for (std::size_t j = 0; j < d.hidden; ++j) {
      c.mask[j] = rng->uniform() >= dropout_rate ? keep_scale : T{0};
      c.dropped[j] *= c.mask[j];
    }
  }
  c.z = params.b2;
  for (std::size_t j = 0; j < d.hidden; ++j) {
    const T hj = c.dropped[j];
    const auto w_row = params.w2.row(j);
    for (std::size_t k = 0; k < d.repr; ++k) {
      c.z[k] += w_row[k] * hj;
    }
  }
  out.z = c.z;
  return out;
}

template <typename T>
Encoded<T> encode(
  const EncoderParams<T> & params, const std::vector<T> & x, double dropout_rate = 0.0,
  Rng * rng = nullptr)
{
  return encode(params, std::span<const T>(x), dropout_rate, rng);
}

template <typename T>
std::vector<T> head_logits(const EncoderParams<T> & params, std::span<const std::type_identity_t<T>> z)
{
  const auto d = params.dims();
  if (z.size() != d.repr) {
    throw DimensionError("classify: representation dimension mismatch");
  }
  std::vector<T> logits = params.bc;
  for (std::size_t k = 0; k < d.repr; ++k) {
    const auto w_row = params.wc.row(k);
    for (std::size_t c = 0; c < d.classes; ++c) {
      logits[c] += w_row[c] * z[k];
    }
  }
  return logits;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits)
{
  using std::exp;
  std::vector<T> p(logits.begin(), logits.end());
  if (p.empty()) {
    return p;
  }
  const T mx = *std::max_element(p.begin(), p.end());
  T sum{0};
  for (auto & v : p) {
    v = exp(v - mx);
    sum += v;
  }
  for (auto & v : p) {
    v /= sum;
  }
  return p;
}

/// Class probabilities softmax(Wc^T z + bc).
template <typename T>
std::vector<T> classify(const EncoderParams<T> & params, std::span<const std::type_identity_t<T>> z)
{
  const auto logits = head_logits(params, z);
  return softmax(std::span<const T>(logits));
}

template <typename T>
std::vector<T> classify(const EncoderParams<T> & params, const std::vector<T> & z)
{
  return classify(params, std::span<const T>(z));
}

/// Adds the gradients of L into `grads` given upstream dL/dz and dL/dlogits
/// (either may be empty, not both). When `input_grad` is non-null it receives dL/dx.
template <typename T>
void accumulate_backward(
  const EncoderParams<T> & params, const ForwardCache<T> & cache, std::span<const std::type_identity_t<T>> dl_dz,
  std::span<const std::type_identity_t<T>> dl_dlogits, Gradients<T> & grads, std::vector<T> * input_grad = nullptr)
{
  const auto d = params.dims();
  if (cache.input.size() != d.input || cache.hidden.size() != d.hidden ||
      cache.z.size() != d.repr || (!cache.mask.empty() && cache.mask.size() != d.hidden)) {
    throw DimensionError("backward: forward cache does not match the parameters");
  }
  if (dl_dz.empty() && dl_dlogits.empty()) {
    throw std::invalid_argument("backward: need dL/dz or dL/dlogits");
  }
  if ((!dl_dz.empty() && dl_dz.size() != d.repr) ||
      (!dl_dlogits.empty() && dl_dlogits.size() != d.classes)) {
    throw DimensionError("backward: upstream gradient dimension mismatch");
  }
  if (!grads.same_shape(params)) {
    throw DimensionError("backward: gradient buffer shape mismatch");
  }

  std::vector<T> g_z(d.repr, T{0});
  if (!dl_dz.empty()) {
    g_z.assign(dl_dz.begin(), dl_dz.end());
  }
  if (!dl_dlogits.empty()) {
    for (std::size_t k = 0; k < d.repr; ++k) {
      const auto w_row = params.wc.row(k);
      auto gw_row = grads.wc.row(k);
      T acc{0};
      for (std::size_t c = 0; c < d.classes; ++c) {
        acc += w_row[c] * dl_dlogits[c];
        gw_row[c] += cache.z[k] * dl_dlogits[c];
      }
      g_z[k] += acc;
    }
    for (std::size_t c = 0; c < d.classes; ++c) {
      grads.bc[c] += dl_dlogits[c];
    }
  }

  std::vector<T> g_pre(d.hidden, T{0});
  for (std::size_t j = 0; j < d.hidden; ++j) {
    const auto w_row = params.w2.row(j);
    auto gw_row = grads.w2.row(j);
    T acc{0};
    for (std::size_t k = 0; k < d.repr; ++k) {
      acc += w_row[k] * g_z[k];
      gw_row[k] += cache.dropped[j] * g_z[k];
    }
    if (!cache.mask.empty()) {
      acc *= cache.mask[j];
    }
    g_pre[j] = acc * detail::activate_derivative(
                       params.activation, cache.pre_activation[j], cache.hidden[j]);
  }
  for (std::size_t k = 0; k < d.repr; ++k) {
    grads.b2[k] += g_z[k];
  }
  for (std::size_t i = 0; i < d.input; ++i) {
    auto gw_row = grads.w1.row(i);
    const T xi = cache.input[i];
    for (std::size_t j = 0; j < d.hidden; ++j) {
      gw_row[j] += xi * g_pre[j];
    }
  }
  for (std::size_t j = 0; j < d.hidden; ++j) {
    grads.b1[j] += g_pre[j];
  }
  if (input_grad != nullptr) {
    input_grad->assign(d.input, T{0});
    for (std::size_t i = 0; i < d.input; ++i) {
      const auto w_row = params.w1.row(i);
      T acc{0};
      for (std::size_t j = 0; j < d.hidden; ++j) {
        acc += w_row[j] * g_pre[j];
      }
      (*input_grad)[i] = acc;
    }
  }
}

template <typename T>
Gradients<T> backward(
  const EncoderParams<T> & params, const ForwardCache<T> & cache, std::span<const std::type_identity_t<T>> dl_dz,
  std::span<const std::type_identity_t<T>> dl_dlogits)
{
  auto grads = Gradients<T>::zeros_like(params);
  accumulate_backward(params, cache, dl_dz, dl_dlogits, grads);
  return grads;
}

}  // namespace uninl

#endif  // UNINL__ENCODER_HPP_
