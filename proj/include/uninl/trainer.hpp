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

// Adam, batching, and training-strategy orchestration.

#ifndef UNINL__TRAINER_HPP_
#define UNINL__TRAINER_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "uninl/data.hpp"
#include "uninl/encoder.hpp"
#include "uninl/numerics.hpp"
#include "uninl/objectives.hpp"

namespace uninl
{

class TrainingError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState
{
  LayerBlocks<T> m;
  LayerBlocks<T> v;
  std::uint64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const LayerBlocks<T> & params, double lr)
  {
    AdamState s;
    s.m = LayerBlocks<T>::zeros(params.dims());
    s.v = LayerBlocks<T>::zeros(params.dims());
    s.lr = lr;
    return s;
  }
};

/// One bias-corrected Adam update. Throws before touching anything if a
/// gradient entry is non-finite.
template <typename T>
void adam_step(AdamState<T> & state, EncoderParams<T> & params, const Gradients<T> & grads)
{
  if (!grads.same_shape(params) || !state.m.same_shape(params) || !state.v.same_shape(params)) {
    throw DimensionError("adam_step: shape mismatch between parameters, gradients and moments");
  }
  grads.for_each_block([](std::string_view name, std::span<const T> g) {
    if (!all_finite(g)) {
      throw TrainingError("adam_step: non-finite gradient in parameter block " + std::string(name));
    }
  });
  ++state.t;
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T correction1 = T{1} - static_cast<T>(std::pow(state.beta1, static_cast<double>(state.t)));
  const T correction2 = T{1} - static_cast<T>(std::pow(state.beta2, static_cast<double>(state.t)));
  const T lr = static_cast<T>(state.lr);
  const T eps = static_cast<T>(state.eps);

  std::vector<std::span<T>> p_blocks, m_blocks, v_blocks;
  std::vector<std::span<const T>> g_blocks = grads.flat_blocks();
  params.for_each_block([&](std::string_view, std::span<T> s) { p_blocks.push_back(s); });
  state.m.for_each_block([&](std::string_view, std::span<T> s) { m_blocks.push_back(s); });
  state.v.for_each_block([&](std::string_view, std::span<T> s) { v_blocks.push_back(s); });
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    for (std::size_t i = 0; i < p_blocks[b].size(); ++i) {
      const T g = g_blocks[b][i];
      T & m = m_blocks[b][i];
      T & v = v_blocks[b][i];
      m = b1 * m + (T{1} - b1) * g;
      v = b2 * v + (T{1} - b2) * g * g;
      const T m_hat = m / correction1;
      const T v_hat = v / correction2;
      p_blocks[b][i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Batching

enum class BatchPolicy { keep_remainder, drop_remainder };

/// Seeded shuffle salted by epoch, then contiguous chunks. Contrastive phases
/// drop the short final chunk so every batch has exactly batch_size members.
inline std::vector<std::vector<std::size_t>> make_batches(
  std::size_t n, std::size_t batch_size, std::size_t epoch, std::uint64_t seed,
  BatchPolicy policy)
{
  if (batch_size < 2) {
    throw TrainingError("make_batches: batch size must be at least 2");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0xBA7C0000ULL + epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < batch_size && policy == BatchPolicy::drop_remainder) {
      break;
    }
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Per-batch objective

enum class Objective { ce, scl, kncl, ce_plus_kncl };

inline bool uses_contrastive(Objective o) noexcept { return o != Objective::ce; }
inline bool uses_ce(Objective o) noexcept { return o == Objective::ce || o == Objective::ce_plus_kncl; }

inline std::string_view to_string(Objective o) noexcept
{
  switch (o) {
    case Objective::ce: return "ce";
    case Objective::scl: return "scl";
    case Objective::kncl: return "kncl";
    case Objective::ce_plus_kncl: return "ce+kncl";
  }
  return "?";
}

template <typename T>
struct StepResult
{
  T loss{0};
  T ce_part{0};
  T contrastive_part{0};
  std::size_t active_anchors = 0;
  Gradients<T> grads;
};

/// Loss and exact parameter gradients for one batch. Contrastive terms act on
/// L2-normalized representations; the gradient flows back through the
/// normalization. `augmented`, when given, holds one augmented input per row.
template <typename T>
StepResult<T> objective_step(
  const EncoderParams<T> & params, const BasicMatrix<T> & inputs,
  const BasicMatrix<T> * augmented, std::span<const std::size_t> labels, Objective objective,
  const KnclConfig & cfg, double dropout = 0.0, Rng * rng = nullptr)
{
  const std::size_t n = inputs.rows();
  if (labels.size() != n || n == 0) {
    throw TrainingError("objective_step: need one label per input row");
  }
  const bool with_aug = augmented != nullptr && uses_contrastive(objective);
  if (with_aug && (augmented->rows() != n || augmented->cols() != inputs.cols())) {
    throw DimensionError("objective_step: augmented inputs must match the batch shape");
  }
  const std::size_t views = with_aug ? 2 : 1;
  const std::size_t dz = params.dims().repr;

  std::vector<ForwardCache<T>> caches;
  caches.reserve(n * views);
  BasicMatrix<T> z_raw(n * views, dz);
  for (std::size_t v = 0; v < views; ++v) {
    const auto & src = v == 0 ? inputs : *augmented;
    for (std::size_t i = 0; i < n; ++i) {
      auto enc = encode(params, src.row(i), dropout, rng);
      std::copy(enc.z.begin(), enc.z.end(), z_raw.row(v * n + i).begin());
      caches.push_back(std::move(enc.cache));
    }
  }

  StepResult<T> out{T{0}, T{0}, T{0}, 0, Gradients<T>::zeros_like(params)};
  BasicMatrix<T> dl_dz_raw(n * views, dz);
  BasicMatrix<T> dl_dlogits;

  if (uses_ce(objective)) {
    BasicMatrix<T> probs(n, params.dims().classes);
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = classify(params, z_raw.row(i));
      std::copy(p.begin(), p.end(), probs.row(i).begin());
    }
    auto ce = ce_loss(probs, labels);
    out.ce_part = ce.loss;
    dl_dlogits = std::move(ce.dl_dlogits);
  }

  if (uses_contrastive(objective)) {
    std::vector<Normalized<T>> norms;
    norms.reserve(n * views);
    BasicMatrix<T> z_unit(n * views, dz);
    for (std::size_t r = 0; r < n * views; ++r) {
      norms.push_back(l2_normalize(std::span<const T>(z_raw.row(r))));
      std::copy(norms.back().values.begin(), norms.back().values.end(), z_unit.row(r).begin());
    }
    ContrastiveResult<T> cr;
    if (objective == Objective::scl) {
      std::vector<std::size_t> all_labels(labels.begin(), labels.end());
      if (with_aug) {
        all_labels.insert(all_labels.end(), labels.begin(), labels.end());
      }
      cr = scl_loss(z_unit, std::span<const std::size_t>(all_labels), cfg.tau);
    } else {
      BasicMatrix<T> orig(n, dz);
      std::copy(z_unit.flat().begin(), z_unit.flat().begin() + static_cast<std::ptrdiff_t>(n * dz),
                orig.flat().begin());
      BasicMatrix<T> aug;
      if (with_aug) {
        aug = BasicMatrix<T>(n, dz);
        std::copy(z_unit.flat().begin() + static_cast<std::ptrdiff_t>(n * dz), z_unit.flat().end(),
                  aug.flat().begin());
      }
      cr = kncl_loss(orig, with_aug ? &aug : nullptr, labels, cfg);
    }
    out.contrastive_part = cr.loss;
    out.active_anchors = cr.n_active_anchors;
    for (std::size_t r = 0; r < n * views; ++r) {
      const auto g = l2_normalize_backward(norms[r], std::span<const T>(cr.dl_dz.row(r)));
      std::copy(g.begin(), g.end(), dl_dz_raw.row(r).begin());
    }
  }

  for (std::size_t r = 0; r < n * views; ++r) {
    const bool has_logits = uses_ce(objective) && r < n;
    const std::span<const T> g_z =
      uses_contrastive(objective) ? std::span<const T>(dl_dz_raw.row(r)) : std::span<const T>{};
    const std::span<const T> g_logits =
      has_logits ? std::span<const T>(dl_dlogits.row(r)) : std::span<const T>{};
    if (g_z.empty() && g_logits.empty()) {
      continue;
    }
    accumulate_backward(params, caches[r], g_z, g_logits, out.grads);
  }
  out.loss = out.ce_part + out.contrastive_part;
  return out;
}

/// FGSM augmented view of every row.
template <typename T>
BasicMatrix<T> adversarial_views(
  const EncoderParams<T> & params, const BasicMatrix<T> & inputs,
  std::span<const std::size_t> labels, double epsilon)
{
  BasicMatrix<T> out(inputs.rows(), inputs.cols());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto v = adversarial_view(params, inputs.row(i), labels[i], epsilon);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strategies

enum class Strategy { kncl_then_ce, only_ce, only_kncl, ce_then_kncl, multitask };

inline std::string_view to_string(Strategy s) noexcept
{
  switch (s) {
    case Strategy::kncl_then_ce: return "kncl_then_ce";
    case Strategy::only_ce: return "only_ce";
    case Strategy::only_kncl: return "only_kncl";
    case Strategy::ce_then_kncl: return "ce_then_kncl";
    case Strategy::multitask: return "multitask";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name)
{
  for (auto s : {Strategy::kncl_then_ce, Strategy::only_ce, Strategy::only_kncl,
                 Strategy::ce_then_kncl, Strategy::multitask}) {
    if (to_string(s) == name) {
      return s;
    }
  }
  throw std::invalid_argument(
    "unknown strategy '" + std::string(name) +
    "' (kncl_then_ce|only_ce|only_kncl|ce_then_kncl|multitask)");
}

/// Whether the strategy ever optimizes the classifier head with cross-entropy.
inline bool trains_head(Strategy s) noexcept { return s != Strategy::only_kncl; }

struct PhaseSpec
{
  Objective objective;
  std::size_t epochs;
};

struct TrainPlan
{
  Strategy strategy = Strategy::kncl_then_ce;
  std::size_t epochs_phase1 = 100;
  std::size_t epochs_phase2 = 10;
  std::size_t batch_size = 128;
  KnclConfig kncl{};
  double lr = 1e-3;
  double dropout = 0.5;
  std::size_t hidden = 64;
  std::size_t repr = 32;
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;
  /// A cross-entropy phase that follows a contrastive phase updates only the
  /// classifier head (Wc, bc) and leaves the pre-trained encoder fixed.
  bool freeze_encoder_in_finetune = false;

  /// Defaults for a strategy. Every strategy gets the same 110-epoch budget.
  static TrainPlan defaults(Strategy s)
  {
    TrainPlan p;
    p.strategy = s;
    switch (s) {
      case Strategy::kncl_then_ce:
        p.epochs_phase1 = 100;
        p.epochs_phase2 = 10;
        break;
      case Strategy::ce_then_kncl:
        p.epochs_phase1 = 10;
        p.epochs_phase2 = 100;
        break;
      case Strategy::only_ce:
      case Strategy::only_kncl:
      case Strategy::multitask:
        p.epochs_phase1 = 110;
        p.epochs_phase2 = 0;
        break;
    }
    return p;
  }

  std::vector<PhaseSpec> phases() const
  {
    switch (strategy) {
      case Strategy::kncl_then_ce:
        return {{Objective::kncl, epochs_phase1}, {Objective::ce, epochs_phase2}};
      case Strategy::ce_then_kncl:
        return {{Objective::ce, epochs_phase1}, {Objective::kncl, epochs_phase2}};
      case Strategy::only_ce:
        return {{Objective::ce, epochs_phase1}};
      case Strategy::only_kncl:
        return {{Objective::kncl, epochs_phase1}};
      case Strategy::multitask:
        return {{Objective::ce_plus_kncl, epochs_phase1}};
    }
    return {};
  }

  void validate() const
  {
    const bool two_phase = strategy == Strategy::kncl_then_ce || strategy == Strategy::ce_then_kncl;
    if (!two_phase && epochs_phase2 != 0) {
      throw TrainingError(
        "strategy " + std::string(to_string(strategy)) + " has a single phase; epochs_phase2 must be 0");
    }
    if (batch_size < 2) {
      throw TrainingError("batch size must be at least 2");
    }
    if (!(lr >= 0.0) || !(dropout >= 0.0 && dropout < 1.0)) {
      throw TrainingError("learning rate must be >= 0 and dropout in [0, 1)");
    }
    if (!(kncl.tau > 0.0) || kncl.epsilon_adv < 0.0) {
      throw TrainingError("KNCL temperature must be positive and epsilon_adv nonnegative");
    }
    if (hidden == 0 || repr == 0) {
      throw TrainingError("encoder sizes must be positive");
    }
    if (strategy != Strategy::only_ce && (kncl.k == 0 || kncl.k >= batch_size)) {
      throw TrainingError(
        "KNCL requires 1 <= k < N: k=" + std::to_string(kncl.k) +
        ", batch size N=" + std::to_string(batch_size));
    }
  }
};

struct EpochRecord
{
  std::size_t epoch = 0;  // 1-based, counted across phases
  std::size_t phase = 0;  // 1-based
  Objective objective = Objective::ce;
  double train_loss = 0.0;
  /// Mean CE on IND validation examples; NaN when the head is not being trained.
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport
{
  std::vector<EpochRecord> curve;
  EncoderParams<double> params;
  bool head_trained = false;
  double wall_time_seconds = 0.0;
};

inline FeatureSet ind_subset(const FeatureSet & set)
{
  FeatureSet out{Matrix(0, set.inputs.cols()), {}, set.num_classes};
  std::vector<double> rows;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set.is_ood(i)) {
      rows.insert(rows.end(), set.inputs.row(i).begin(), set.inputs.row(i).end());
      out.labels.push_back(set.labels[i]);
    }
  }
  out.inputs = Matrix(out.labels.size(), set.inputs.cols(), std::move(rows));
  return out;
}

inline double mean_ce(const EncoderParams<double> & params, const FeatureSet & set)
{
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto enc = encode(params, set.inputs.row(i));
    const auto p = classify(params, std::span<const double>(enc.z));
    total -= std::log(std::max(p[set.labels[i]], 1e-300));
  }
  return set.size() == 0 ? std::numeric_limits<double>::quiet_NaN()
                         : total / static_cast<double>(set.size());
}

/// Runs every phase of the plan. Adam state resets at phase boundaries; the
/// shuffle of epoch e depends only on (seed, e).
inline TrainReport train(const TrainPlan & plan, const FeatureSet & train_set, const FeatureSet & val_set)
{
  plan.validate();
  if (train_set.size() == 0) {
    throw TrainingError("training data is empty");
  }
  if (train_set.count_ood() != 0) {
    throw TrainingError("training data must not contain OOD examples");
  }
  if (train_set.num_classes == 0) {
    throw TrainingError("training data has no IND classes");
  }
  const auto phases = plan.phases();
  for (const auto & ph : phases) {
    if (ph.epochs > 0 && uses_contrastive(ph.objective) && plan.batch_size > train_set.size()) {
      throw TrainingError(
        "batch size " + std::to_string(plan.batch_size) + " exceeds the training set size " +
        std::to_string(train_set.size()) + " for a contrastive phase");
    }
  }
  const auto started = std::chrono::steady_clock::now();
  const EncoderDims dims{train_set.inputs.cols(), plan.hidden, plan.repr, train_set.num_classes};
  Rng init_rng(derive_seed(plan.seed, 0x1417));
  Rng dropout_rng(derive_seed(plan.seed, 0xD209));
  TrainReport report;
  report.params = EncoderParams<double>::glorot(dims, init_rng, plan.activation);
  const FeatureSet val_ind = ind_subset(val_set);
  Rng * rng = plan.dropout > 0.0 ? &dropout_rng : nullptr;

  std::size_t epoch_counter = 0;
  for (std::size_t phase_idx = 0; phase_idx < phases.size(); ++phase_idx) {
    const auto & ph = phases[phase_idx];
    if (ph.epochs == 0) {
      continue;
    }
    report.head_trained = report.head_trained || uses_ce(ph.objective);
    auto adam = AdamState<double>::for_params(report.params, plan.lr);
    const bool contrastive = uses_contrastive(ph.objective);
    const bool freeze_encoder = plan.freeze_encoder_in_finetune && phase_idx > 0 &&
                                ph.objective == Objective::ce &&
                                uses_contrastive(phases[phase_idx - 1].objective);
    const auto policy = contrastive ? BatchPolicy::drop_remainder : BatchPolicy::keep_remainder;
    for (std::size_t e = 0; e < ph.epochs; ++e) {
      ++epoch_counter;
      const auto batches =
        make_batches(train_set.size(), plan.batch_size, epoch_counter, plan.seed, policy);
      double loss_sum = 0.0;
      for (const auto & batch : batches) {
        Matrix inputs(batch.size(), dims.input);
        std::vector<std::size_t> labels(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const auto src = train_set.inputs.row(batch[b]);
          std::copy(src.begin(), src.end(), inputs.row(b).begin());
          labels[b] = train_set.labels[batch[b]];
        }
        Matrix augmented;
        const bool with_aug = contrastive && plan.kncl.use_augmented_views;
        if (with_aug) {
          augmented = adversarial_views(
            report.params, inputs, std::span<const std::size_t>(labels), plan.kncl.epsilon_adv);
        }
        auto step = objective_step(
          report.params, inputs, with_aug ? &augmented : nullptr,
          std::span<const std::size_t>(labels), ph.objective, plan.kncl, plan.dropout, rng);
        if (freeze_encoder) {
          for (auto * block : {&step.grads.b1, &step.grads.b2}) {
            std::fill(block->begin(), block->end(), 0.0);
          }
          for (auto * block : {&step.grads.w1, &step.grads.w2}) {
            std::fill(block->flat().begin(), block->flat().end(), 0.0);
          }
        }
        adam_step(adam, report.params, step.grads);
        loss_sum += step.loss;
      }
      EpochRecord rec;
      rec.epoch = epoch_counter;
      rec.phase = phase_idx + 1;
      rec.objective = ph.objective;
      rec.train_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
      if (uses_ce(ph.objective) && val_ind.size() > 0) {
        rec.val_loss = mean_ce(report.params, val_ind);
      }
      if (!std::isfinite(rec.train_loss)) {
        throw TrainingError("training loss became non-finite at epoch " + std::to_string(rec.epoch));
      }
      report.curve.push_back(rec);
    }
  }
  report.wall_time_seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

inline void write_loss_csv(const TrainReport & report, std::ostream & out)
{
  out << "epoch,phase,objective,train_loss,val_loss\n";
  char buf[64];
  for (const auto & r : report.curve) {
    out << r.epoch << ',' << r.phase << ',' << to_string(r.objective) << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.train_loss);
    out << buf << ',';
    if (std::isfinite(r.val_loss)) {
      std::snprintf(buf, sizeof buf, "%.17g", r.val_loss);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace uninl

#endif  // UNINL__TRAINER_HPP_
