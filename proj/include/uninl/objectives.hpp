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

// Training objectives: cross-entropy, supervised contrastive (SCL) and the
// K-nearest-neighbor contrastive loss (KNCL), plus FGSM-style augmented views.
//
// Contrastive losses take a batch of representations as matrix rows and
// return dL/dz for every row. Callers normalize rows first and backpropagate
// the returned gradient through the normalization.

#ifndef UNINL__OBJECTIVES_HPP_
#define UNINL__OBJECTIVES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "uninl/encoder.hpp"
#include "uninl/numerics.hpp"

namespace uninl
{

class ObjectiveError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct CrossEntropyResult
{
  T loss{0};
  BasicMatrix<T> dl_dlogits;  // one row per example
};

/// Mean negative log-likelihood over rows of `probs`; dL/dlogits = (p - onehot) / N.
template <typename T>
CrossEntropyResult<T> ce_loss(const BasicMatrix<T> & probs, std::span<const std::size_t> labels)
{
  using std::log;
  const std::size_t n = probs.rows();
  if (labels.size() != n || n == 0) {
    throw DimensionError("ce_loss: need one label per probability row");
  }
  CrossEntropyResult<T> out{T{0}, BasicMatrix<T>(n, probs.cols())};
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    if (y >= probs.cols()) {
      throw ObjectiveError("ce_loss: label out of range");
    }
    const T py = probs(i, y);
    if (!(py > T{0})) {
      throw ObjectiveError(
        "ce_loss: probability of the true class is not positive (row " + std::to_string(i) + ")");
    }
    out.loss -= log(py);
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      out.dl_dlogits(i, c) = (probs(i, c) - (c == y ? T{1} : T{0})) * inv_n;
    }
  }
  out.loss *= inv_n;
  return out;
}

struct KnclConfig
{
  std::size_t k = 5;
  double tau = 0.1;
  bool use_augmented_views = true;
  double epsilon_adv = 0.01;
};

template <typename T>
struct ContrastiveResult
{
  T loss{0};
  /// Originals first, then augmented views when present.
  BasicMatrix<T> dl_dz;
  std::size_t n_active_anchors = 0;
};

namespace detail
{

/// Softmax-over-candidates term shared by both contrastive losses.
template <typename T>
struct AnchorTerm
{
  T loss{0};
  std::vector<T> coeff;  // dloss/ds_c for each candidate
};

template <typename T>
AnchorTerm<T> anchor_term(
  std::span<const T> logits, const std::vector<char> & positive, std::size_t n_pos)
{
  using std::exp;
  using std::log;
  AnchorTerm<T> term;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T denom{0};
  for (const T s : logits) {
    denom += exp(s - mx);
  }
  const T lse = mx + log(denom);
  T pos_mean{0};
  term.coeff.resize(logits.size());
  const T inv_pos = T{1} / static_cast<T>(n_pos);
  for (std::size_t c = 0; c < logits.size(); ++c) {
    term.coeff[c] = exp(logits[c] - lse);
    if (positive[c]) {
      pos_mean += logits[c];
      term.coeff[c] -= inv_pos;
    }
  }
  term.loss = lse - pos_mean * inv_pos;
  return term;
}

template <typename T>
const BasicMatrix<T> & view_rows(
  std::size_t idx, std::size_t n, const BasicMatrix<T> & orig, const BasicMatrix<T> * aug,
  std::size_t & row)
{
  if (idx < n) {
    row = idx;
    return orig;
  }
  row = idx - n;
  return *aug;
}

}  // namespace detail

/// Khosla "sup-out" supervised contrastive loss over every other batch member.
template <typename T>
ContrastiveResult<T> scl_loss(
  const BasicMatrix<T> & z, std::span<const std::size_t> labels, double tau)
{
  const std::size_t n = z.rows();
  if (labels.size() != n || n < 2) {
    throw ObjectiveError("scl_loss: need N >= 2 representations with one label each");
  }
  if (!(tau > 0.0)) {
    throw ObjectiveError("scl_loss: temperature must be positive");
  }
  const T inv_tau = T{1} / static_cast<T>(tau);
  ContrastiveResult<T> out{T{0}, BasicMatrix<T>(n, z.cols())};
  std::vector<detail::AnchorTerm<T>> terms(n);
  std::vector<char> active(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<T> logits;
    std::vector<char> positive;
    std::size_t n_pos = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        continue;
      }
      logits.push_back(dot(z.row(i), z.row(j)) * inv_tau);
      positive.push_back(labels[j] == labels[i] ? 1 : 0);
      n_pos += positive.back();
    }
    if (n_pos == 0) {
      continue;
    }
    terms[i] = detail::anchor_term(std::span<const T>(logits), positive, n_pos);
    active[i] = 1;
    ++out.n_active_anchors;
  }
  if (out.n_active_anchors == 0) {
    return out;
  }
  const T scale = T{1} / static_cast<T>(out.n_active_anchors);
  for (std::size_t i = 0; i < n; ++i) {
    if (!active[i]) {
      continue;
    }
    out.loss += terms[i].loss * scale;
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        continue;
      }
      const T g = terms[i].coeff[c++] * scale * inv_tau;
      for (std::size_t d = 0; d < z.cols(); ++d) {
        out.dl_dz(i, d) += g * z(j, d);
        out.dl_dz(j, d) += g * z(i, d);
      }
    }
  }
  return out;
}

/// The k nearest rows to row `anchor` (excluding itself) by Euclidean
/// distance, ties broken by lower index.
template <typename T>
std::vector<std::size_t> batch_neighbors(const BasicMatrix<T> & z, std::size_t anchor, std::size_t k)
{
  std::vector<T> dist(z.rows());
  std::vector<std::size_t> order;
  order.reserve(z.rows() - 1);
  for (std::size_t j = 0; j < z.rows(); ++j) {
    if (j != anchor) {
      dist[j] = squared_euclidean(z.row(anchor), z.row(j));
      order.push_back(j);
    }
  }
  std::partial_sort(
    order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
    [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
  order.resize(k);
  return order;
}

/// K-nearest-neighbor contrastive loss. For each original-view anchor the
/// candidate set is its k nearest original-view batch members; with augmented
/// views it also holds those neighbors' augmented views and the anchor's own
/// augmented view (2k + 1 candidates). Same-label candidates are positives.
/// Anchors without positives are skipped and excluded from the mean.
template <typename T>
ContrastiveResult<T> kncl_loss(
  const BasicMatrix<T> & z_orig, const BasicMatrix<T> * z_aug,
  std::span<const std::size_t> labels, const KnclConfig & cfg)
{
  const std::size_t n = z_orig.rows();
  if (labels.size() != n || n < 2) {
    throw ObjectiveError("kncl_loss: need N >= 2 representations with one label each");
  }
  if (cfg.k == 0 || cfg.k >= n) {
    throw ObjectiveError(
      "kncl_loss: KNN set size k=" + std::to_string(cfg.k) + " must satisfy 1 <= k < N=" +
      std::to_string(n));
  }
  if (!(cfg.tau > 0.0)) {
    throw ObjectiveError("kncl_loss: temperature must be positive");
  }
  if (z_aug != nullptr && (z_aug->rows() != n || z_aug->cols() != z_orig.cols())) {
    throw DimensionError("kncl_loss: augmented views must match the original batch shape");
  }
  const std::size_t dim = z_orig.cols();
  const T inv_tau = T{1} / static_cast<T>(cfg.tau);
  const std::size_t total_rows = z_aug != nullptr ? 2 * n : n;

  ContrastiveResult<T> out{T{0}, BasicMatrix<T>(total_rows, dim)};
  std::vector<std::vector<std::size_t>> candidates(n);
  std::vector<detail::AnchorTerm<T>> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto & cand = candidates[i];
    cand = batch_neighbors(z_orig, i, cfg.k);
    if (z_aug != nullptr) {
      for (std::size_t r = 0; r < cfg.k; ++r) {
        cand.push_back(n + cand[r]);
      }
      cand.push_back(n + i);
    }
    std::vector<T> logits(cand.size());
    std::vector<char> positive(cand.size());
    std::size_t n_pos = 0;
    for (std::size_t c = 0; c < cand.size(); ++c) {
      std::size_t row = 0;
      const auto & src = detail::view_rows(cand[c], n, z_orig, z_aug, row);
      logits[c] = dot(z_orig.row(i), src.row(row)) * inv_tau;
      positive[c] = labels[cand[c] % n] == labels[i] ? 1 : 0;
      n_pos += positive[c];
    }
    if (n_pos == 0) {
      cand.clear();
      continue;
    }
    terms[i] = detail::anchor_term(std::span<const T>(logits), positive, n_pos);
    ++out.n_active_anchors;
  }
  if (out.n_active_anchors == 0) {
    return out;
  }
  const T scale = T{1} / static_cast<T>(out.n_active_anchors);
  for (std::size_t i = 0; i < n; ++i) {
    const auto & cand = candidates[i];
    if (cand.empty()) {
      continue;
    }
    out.loss += terms[i].loss * scale;
    for (std::size_t c = 0; c < cand.size(); ++c) {
      std::size_t row = 0;
      const auto & src = detail::view_rows(cand[c], n, z_orig, z_aug, row);
      const T g = terms[i].coeff[c] * scale * inv_tau;
      for (std::size_t d = 0; d < dim; ++d) {
        out.dl_dz(i, d) += g * src(row, d);
        out.dl_dz(cand[c], d) += g * z_orig(i, d);
      }
    }
  }
  return out;
}

/// x' = x + epsilon * sign(dL_CE/dx), evaluated without dropout.
template <typename T>
std::vector<T> adversarial_view(
  const EncoderParams<T> & params, std::span<const std::type_identity_t<T>> x, std::size_t label, double epsilon)
{
  if (epsilon < 0.0) {
    throw std::invalid_argument("adversarial_view: epsilon must be nonnegative");
  }
  std::vector<T> out(x.begin(), x.end());
  if (epsilon == 0.0) {
    return out;
  }
  const auto enc = encode(params, x);
  auto dlogits = classify(params, std::span<const T>(enc.z));
  if (label >= dlogits.size()) {
    throw ObjectiveError("adversarial_view: label out of range");
  }
  dlogits[label] -= T{1};
  auto scratch = Gradients<T>::zeros_like(params);
  std::vector<T> dx;
  accumulate_backward(params, enc.cache, {}, std::span<const T>(dlogits), scratch, &dx);
  const T step = static_cast<T>(epsilon);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (dx[i] > T{0}) {
      out[i] += step;
    } else if (dx[i] < T{0}) {
      out[i] -= step;
    }
  }
  return out;
}

}  // namespace uninl

#endif  // UNINL__OBJECTIVES_HPP_
