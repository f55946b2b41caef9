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

// OOD scoring: exact KNN index, KNN / MSP / LOF / GDA scorers, the
// "IND iff score < lambda" decision rule and lambda calibration on
// validation IND macro-F1. Every scorer is oriented so that a higher score
// means more likely OOD.

#ifndef UNINL__DETECTION_HPP_
#define UNINL__DETECTION_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uninl/data.hpp"
#include "uninl/encoder.hpp"
#include "uninl/numerics.hpp"

namespace uninl
{

class DetectionError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct Score
{
  double value = 0.0;
  friend auto operator<=>(const Score &, const Score &) = default;
};

// ---------------------------------------------------------------------------
// KNN index

struct KnnIndex
{
  Matrix embeddings;  // unit rows
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  /// Training rows dropped because their representation was the zero vector.
  std::vector<std::size_t> excluded;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return embeddings.cols(); }
};

/// Eval-mode representation of one input, L2-normalized.
inline Normalized<double> embed(const EncoderParams<double> & params, std::span<const double> x)
{
  const auto enc = encode(params, x);
  return l2_normalize(std::span<const double>(enc.z));
}

inline KnnIndex build_index(const EncoderParams<double> & params, const FeatureSet & train)
{
  KnnIndex index;
  index.num_classes = params.dims().classes;
  std::vector<double> rows;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.labels[i] >= index.num_classes) {
      throw DetectionError("build_index: training row " + std::to_string(i) + " is not IND");
    }
    const auto z = embed(params, train.inputs.row(i));
    if (!z.normalized) {
      index.excluded.push_back(i);
      continue;
    }
    rows.insert(rows.end(), z.values.begin(), z.values.end());
    index.labels.push_back(train.labels[i]);
  }
  index.embeddings = Matrix(index.labels.size(), params.dims().repr, std::move(rows));
  return index;
}

struct Neighbor
{
  double distance;
  std::size_t row;
};

/// Exact k nearest index rows: full distance scan, then partial selection
/// ordered by (distance, row).
inline std::vector<Neighbor> nearest(
  const Matrix & points, std::span<const double> z, std::size_t k, std::size_t skip_row = SIZE_MAX)
{
  std::vector<Neighbor> all;
  all.reserve(points.rows());
  for (std::size_t r = 0; r < points.rows(); ++r) {
    if (r != skip_row) {
      all.push_back({euclidean(points.row(r), z), r});
    }
  }
  if (k > all.size()) {
    throw DetectionError(
      "requested " + std::to_string(k) + " neighbors but only " + std::to_string(all.size()) +
      " candidates exist");
  }
  std::partial_sort(
    all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
    [](const Neighbor & a, const Neighbor & b) {
      return a.distance < b.distance || (a.distance == b.distance && a.row < b.row);
    });
  all.resize(k);
  return all;
}

/// Mean Euclidean distance from z to its k nearest index rows.
inline Score knn_score(const KnnIndex & index, std::span<const double> z, std::size_t k)
{
  if (k == 0 || k > index.size()) {
    throw DetectionError(
      "knn_score: k=" + std::to_string(k) + " must lie in [1, M=" + std::to_string(index.size()) + "]");
  }
  double sum = 0.0;
  for (const auto & nb : nearest(index.embeddings, z, k)) {
    sum += nb.distance;
  }
  return {sum / static_cast<double>(k)};
}

/// Majority label of the k nearest rows; ties go to the lower class index.
inline std::size_t knn_vote(const KnnIndex & index, std::span<const double> z, std::size_t k)
{
  std::vector<std::size_t> votes(index.num_classes, 0);
  for (const auto & nb : nearest(index.embeddings, z, std::min(k, index.size()))) {
    ++votes[index.labels[nb.row]];
  }
  return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

inline Score msp_score(std::span<const double> probs)
{
  if (probs.empty()) {
    throw DetectionError("msp_score: empty probability vector");
  }
  return {1.0 - *std::max_element(probs.begin(), probs.end())};
}

// ---------------------------------------------------------------------------
// LOF

inline constexpr double kReachFloor = 1e-12;

/// Per-row k-distances and local reachability densities of the index.
struct LofModel
{
  std::size_t k = 0;
  std::vector<double> k_distance;
  std::vector<double> lrd;
};

inline LofModel fit_lof(const KnnIndex & index, std::size_t k)
{
  const std::size_t m = index.size();
  if (k == 0 || k >= m) {
    throw DetectionError(
      "lof: k=" + std::to_string(k) + " must satisfy 1 <= k < M=" + std::to_string(m));
  }
  LofModel model{k, std::vector<double>(m), std::vector<double>(m)};
  std::vector<std::vector<Neighbor>> hoods(m);
  for (std::size_t r = 0; r < m; ++r) {
    hoods[r] = nearest(index.embeddings, index.embeddings.row(r), k, r);
    model.k_distance[r] = hoods[r].back().distance;
  }
  for (std::size_t r = 0; r < m; ++r) {
    double reach = 0.0;
    for (const auto & nb : hoods[r]) {
      reach += std::max({model.k_distance[nb.row], nb.distance, kReachFloor});
    }
    model.lrd[r] = static_cast<double>(k) / reach;
  }
  return model;
}

/// LOF of a query that is not itself a member of the index.
inline Score lof_score(const KnnIndex & index, const LofModel & model, std::span<const double> z)
{
  const auto hood = nearest(index.embeddings, z, model.k);
  double reach = 0.0;
  double neighbor_lrd = 0.0;
  for (const auto & nb : hood) {
    reach += std::max({model.k_distance[nb.row], nb.distance, kReachFloor});
    neighbor_lrd += model.lrd[nb.row];
  }
  const double k = static_cast<double>(model.k);
  const double query_lrd = k / reach;
  return {(neighbor_lrd / k) / query_lrd};
}

inline Score lof_score(const KnnIndex & index, std::span<const double> z, std::size_t k)
{
  return lof_score(index, fit_lof(index, k), z);
}

// ---------------------------------------------------------------------------
// GDA

struct GdaModel
{
  Matrix means;       // C x D
  Matrix covariance;  // regularized, D x D
  Cholesky<double> factor;
};

/// Class means plus pooled within-class covariance (divided by M - C),
/// regularized by 1e-6 * trace / D on the diagonal.
inline GdaModel fit_gda(const KnnIndex & index)
{
  const std::size_t c = index.num_classes;
  const std::size_t d = index.dim();
  const std::size_t m = index.size();
  std::vector<std::size_t> counts(c, 0);
  Matrix means(c, d);
  for (std::size_t r = 0; r < m; ++r) {
    const auto cls = index.labels[r];
    ++counts[cls];
    for (std::size_t j = 0; j < d; ++j) {
      means(cls, j) += index.embeddings(r, j);
    }
  }
  for (std::size_t cls = 0; cls < c; ++cls) {
    if (counts[cls] < 2) {
      throw DetectionError(
        "fit_gda: class " + std::to_string(cls) + " has " + std::to_string(counts[cls]) +
        " points; at least 2 are required");
    }
    for (std::size_t j = 0; j < d; ++j) {
      means(cls, j) /= static_cast<double>(counts[cls]);
    }
  }
  Matrix cov(d, d);
  std::vector<double> centered(d);
  for (std::size_t r = 0; r < m; ++r) {
    const auto cls = index.labels[r];
    for (std::size_t j = 0; j < d; ++j) {
      centered[j] = index.embeddings(r, j) - means(cls, j);
    }
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        cov(a, b) += centered[a] * centered[b];
      }
    }
  }
  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      cov(a, b) /= static_cast<double>(m - c);
    }
    trace += cov(a, a);
  }
  const double reg = 1e-6 * trace / static_cast<double>(d);
  for (std::size_t a = 0; a < d; ++a) {
    cov(a, a) += reg;
  }
  try {
    Cholesky<double> factor(cov);
    return GdaModel{std::move(means), std::move(cov), std::move(factor)};
  } catch (const FactorizationError & e) {
    throw DetectionError(std::string("fit_gda: covariance factorization failed: ") + e.what());
  }
}

/// Minimum Mahalanobis distance to a class mean, through the Cholesky factor.
inline Score gda_score(const GdaModel & model, std::span<const double> z)
{
  const std::size_t d = model.means.cols();
  if (z.size() != d) {
    throw DimensionError("gda_score: dimension mismatch");
  }
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> diff(d);
  for (std::size_t c = 0; c < model.means.rows(); ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      diff[j] = z[j] - model.means(c, j);
    }
    const auto y = model.factor.solve_lower(diff);
    best = std::min(best, dot(std::span<const double>(y), std::span<const double>(y)));
  }
  return {std::sqrt(best)};
}

// ---------------------------------------------------------------------------
// Threshold calibration

struct ValidationScore
{
  Score score;
  bool is_ood = false;
  std::size_t true_class = 0;       // ignored for OOD examples
  std::size_t predicted_class = 0;  // the IND class assigned when accepted
};

struct Threshold
{
  double lambda = 0.0;
  /// Validation IND macro-F1 achieved at lambda.
  double val_ind_f1 = 0.0;
  friend bool operator==(const Threshold &, const Threshold &) = default;
};

namespace detail
{

inline double macro_f1_from_counts(
  const std::vector<std::size_t> & tp, const std::vector<std::size_t> & fp,
  const std::vector<std::size_t> & support)
{
  double total = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c]) +
                         static_cast<double>(support[c] - tp[c]);
    total += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  return tp.empty() ? 0.0 : total / static_cast<double>(tp.size());
}

}  // namespace detail

/// IND macro-F1 over C classes when examples with score < lambda are accepted.
/// A rejected IND example is a false negative for its class; an accepted OOD
/// example is a false positive for the class it was assigned.
inline double ind_macro_f1(
  std::span<const ValidationScore> scores, double lambda, std::size_t num_classes)
{
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), support(num_classes, 0);
  for (const auto & s : scores) {
    if (!s.is_ood) {
      ++support[s.true_class];
    }
    if (!(s.score.value < lambda)) {
      continue;
    }
    if (!s.is_ood && s.predicted_class == s.true_class) {
      ++tp[s.true_class];
    } else {
      ++fp[s.predicted_class];
    }
  }
  return detail::macro_f1_from_counts(tp, fp, support);
}

/// Candidate thresholds: below-min sentinel, midpoints of consecutive unique
/// scores, above-max sentinel (ascending).
inline std::vector<double> calibration_grid(std::span<const ValidationScore> scores)
{
  std::vector<double> values;
  values.reserve(scores.size());
  for (const auto & s : scores) {
    values.push_back(s.score.value);
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> grid;
  grid.reserve(values.size() + 1);
  grid.push_back(values.front() - 1.0);
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    grid.push_back(0.5 * (values[i] + values[i + 1]));
  }
  grid.push_back(values.back() + 1.0);
  return grid;
}

/// Picks the grid threshold with the highest IND macro-F1; ties go to the
/// smaller lambda. Sweeps the grid in ascending order with running counts.
inline Threshold calibrate(std::span<const ValidationScore> scores, std::size_t num_classes)
{
  if (scores.empty()) {
    throw DetectionError("calibrate: empty validation set");
  }
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), support(num_classes, 0);
  std::size_t n_ind = 0;
  for (const auto & s : scores) {
    if (s.predicted_class >= num_classes || (!s.is_ood && s.true_class >= num_classes)) {
      throw DetectionError("calibrate: class index out of range");
    }
    if (!s.is_ood) {
      ++support[s.true_class];
      ++n_ind;
    }
  }
  if (n_ind == 0) {
    throw DetectionError("calibrate: validation set has no IND examples");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].score.value < scores[b].score.value;
  });
  const auto grid = calibration_grid(scores);
  Threshold best{grid.front(), -1.0};
  std::size_t next = 0;
  for (const double lambda : grid) {
    while (next < order.size() && scores[order[next]].score.value < lambda) {
      const auto & s = scores[order[next]];
      if (!s.is_ood && s.predicted_class == s.true_class) {
        ++tp[s.true_class];
      } else {
        ++fp[s.predicted_class];
      }
      ++next;
    }
    const double f1 = detail::macro_f1_from_counts(tp, fp, support);
    if (f1 > best.val_ind_f1) {
      best = {lambda, f1};
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Pipeline

enum class ScorerKind { knn, msp, lof, gda };

inline std::string_view to_string(ScorerKind s) noexcept
{
  switch (s) {
    case ScorerKind::knn: return "knn";
    case ScorerKind::msp: return "msp";
    case ScorerKind::lof: return "lof";
    case ScorerKind::gda: return "gda";
  }
  return "?";
}

inline ScorerKind parse_scorer(std::string_view name)
{
  for (auto s : {ScorerKind::knn, ScorerKind::msp, ScorerKind::lof, ScorerKind::gda}) {
    if (to_string(s) == name) {
      return s;
    }
  }
  throw std::invalid_argument("unknown scorer '" + std::string(name) + "' (knn|msp|lof|gda)");
}

/// How an accepted query is assigned an IND class.
enum class ClassRule { automatic, head, knn_vote };

inline std::string_view to_string(ClassRule r) noexcept
{
  switch (r) {
    case ClassRule::automatic: return "auto";
    case ClassRule::head: return "head";
    case ClassRule::knn_vote: return "knn";
  }
  return "?";
}

inline ClassRule parse_class_rule(std::string_view name)
{
  for (auto r : {ClassRule::automatic, ClassRule::head, ClassRule::knn_vote}) {
    if (to_string(r) == name) {
      return r;
    }
  }
  throw std::invalid_argument("unknown classification rule '" + std::string(name) + "' (auto|head|knn)");
}

struct ScorerConfig
{
  ScorerKind kind = ScorerKind::knn;
  std::size_t k_score = 5;
  std::size_t lof_k = 20;
  ClassRule class_rule = ClassRule::automatic;
};

struct DetectionPipeline
{
  EncoderParams<double> params;
  FeaturizerConfig featurizer;
  std::vector<std::string> labels;
  std::string ood_marker{kDefaultOodMarker};
  bool head_trained = false;
  KnnIndex index;
  ScorerConfig scorer;
  std::optional<LofModel> lof;
  std::optional<GdaModel> gda;
  std::optional<Threshold> threshold;

  std::size_t num_classes() const noexcept { return params.dims().classes; }
};

class RefusedError : public DetectionError
{
public:
  using DetectionError::DetectionError;
};

inline void check_class_rule(const DetectionPipeline & p)
{
  if (p.scorer.class_rule == ClassRule::head && !p.head_trained) {
    throw RefusedError(
      "the classifier head was never trained with cross-entropy (only_kncl strategy); "
      "softmax classification is unavailable, use the KNN vote instead");
  }
  if (p.scorer.kind == ScorerKind::msp && !p.head_trained) {
    throw RefusedError("MSP scoring needs a classifier head trained with cross-entropy");
  }
}

/// Fits the scorer-specific state (LOF densities, GDA Gaussians) for the index.
inline void fit_scorer(DetectionPipeline & p)
{
  p.lof.reset();
  p.gda.reset();
  if (p.scorer.kind == ScorerKind::knn && p.scorer.k_score > p.index.size()) {
    throw DetectionError(
      "k_score=" + std::to_string(p.scorer.k_score) + " exceeds the index size " +
      std::to_string(p.index.size()));
  }
  if (p.scorer.kind == ScorerKind::lof) {
    p.lof = fit_lof(p.index, p.scorer.lof_k);
  }
  if (p.scorer.kind == ScorerKind::gda) {
    p.gda = fit_gda(p.index);
  }
  check_class_rule(p);
}

inline DetectionPipeline make_pipeline(
  EncoderParams<double> params, bool head_trained, FeaturizerConfig featurizer,
  std::vector<std::string> labels, std::string ood_marker, const FeatureSet & train,
  const ScorerConfig & scorer)
{
  DetectionPipeline p;
  p.index = build_index(params, train);
  p.params = std::move(params);
  p.head_trained = head_trained;
  p.featurizer = featurizer;
  p.labels = std::move(labels);
  p.ood_marker = std::move(ood_marker);
  p.scorer = scorer;
  fit_scorer(p);
  return p;
}

struct Decision
{
  Score score;
  bool ood = false;
  std::size_t predicted_class = 0;  // meaningful when !ood
};

struct Assessment
{
  Score score;
  std::size_t predicted_class = 0;
};

/// Score and IND class assignment for one input, independent of lambda.
inline Assessment assess(const DetectionPipeline & p, std::span<const double> x)
{
  const auto enc = encode(p.params, x);
  const auto unit = l2_normalize(std::span<const double>(enc.z));
  const auto z = std::span<const double>(unit.values);
  Assessment a;
  std::vector<double> probs;
  const bool use_head = p.scorer.class_rule == ClassRule::head ||
                        (p.scorer.class_rule == ClassRule::automatic && p.head_trained);
  if (use_head || p.scorer.kind == ScorerKind::msp) {
    check_class_rule(p);
    probs = classify(p.params, std::span<const double>(enc.z));
  }
  switch (p.scorer.kind) {
    case ScorerKind::knn:
      a.score = knn_score(p.index, z, p.scorer.k_score);
      break;
    case ScorerKind::msp:
      a.score = msp_score(probs);
      break;
    case ScorerKind::lof:
      a.score = lof_score(p.index, *p.lof, z);
      break;
    case ScorerKind::gda:
      a.score = gda_score(*p.gda, z);
      break;
  }
  a.predicted_class = use_head
    ? static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin())
    : knn_vote(p.index, z, p.scorer.k_score);
  return a;
}

inline std::vector<double> query_features(const DetectionPipeline & p, std::string_view text)
{
  return featurize(text, p.featurizer.width, p.featurizer.seed).values;
}

/// OOD iff score >= lambda.
inline Decision decide(const DetectionPipeline & p, std::span<const double> x)
{
  if (!p.threshold) {
    throw DetectionError("decide: pipeline has not been calibrated");
  }
  const auto a = assess(p, x);
  return {a.score, !(a.score.value < p.threshold->lambda), a.predicted_class};
}

inline Decision decide(const DetectionPipeline & p, std::string_view text)
{
  const auto x = query_features(p, text);
  return decide(p, std::span<const double>(x));
}

inline std::vector<ValidationScore> validation_scores(const DetectionPipeline & p, const FeatureSet & val)
{
  std::vector<ValidationScore> out;
  out.reserve(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto a = assess(p, val.inputs.row(i));
    out.push_back({a.score, val.is_ood(i), val.is_ood(i) ? 0 : val.labels[i], a.predicted_class});
  }
  return out;
}

enum class CalibrationMode { with_ood, ind_only };

/// Fits lambda on validation scores; `ind_only` ignores validation OOD examples.
inline Threshold calibrate_pipeline(
  DetectionPipeline & p, const FeatureSet & val, CalibrationMode mode = CalibrationMode::with_ood)
{
  auto scores = validation_scores(p, val);
  if (mode == CalibrationMode::ind_only) {
    std::erase_if(scores, [](const ValidationScore & s) { return s.is_ood; });
  }
  p.threshold = calibrate(std::span<const ValidationScore>(scores), p.num_classes());
  return *p.threshold;
}

/// `score<TAB>decision<TAB>class_or_OOD`
inline std::string format_decision(const DetectionPipeline & p, const Decision & d)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", d.score.value);
  std::string line(buf);
  line += d.ood ? "\tOOD\tOOD" : "\tIND\t" + p.labels.at(d.predicted_class);
  return line;
}

}  // namespace uninl

#endif  // UNINL__DETECTION_HPP_
