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

// Metrics over the (C+1)-way confusion, score histograms, OOD-to-IND
// similarity profiles, and the multi-seed experiment / sweep harness.

#ifndef UNINL__EVAL_HPP_
#define UNINL__EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "uninl/data.hpp"
#include "uninl/detection.hpp"
#include "uninl/trainer.hpp"

namespace uninl
{

class EvalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// confusion(true, predicted); index C is OOD.
struct EvalReport
{
  double ind_acc = 0.0;
  double ind_macro_f1 = 0.0;
  double ood_recall = 0.0;
  double ood_f1 = 0.0;
  BasicMatrix<std::size_t> confusion;
  /// IND classes absent from both truth and predictions (F1 counted as 0).
  std::vector<std::size_t> absent_classes;
};

inline double class_f1(const BasicMatrix<std::size_t> & conf, std::size_t c)
{
  std::size_t tp = conf(c, c), row = 0, col = 0;
  for (std::size_t j = 0; j < conf.cols(); ++j) {
    row += conf(c, j);
    col += conf(j, c);
  }
  const double denom = static_cast<double>(row + col);
  return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
}

inline EvalReport metrics_from_confusion(const BasicMatrix<std::size_t> & conf)
{
  if (conf.rows() != conf.cols() || conf.rows() < 2) {
    throw EvalError("confusion matrix must be square with at least one IND class plus OOD");
  }
  const std::size_t c = conf.rows() - 1;
  EvalReport r;
  r.confusion = conf;
  std::size_t ind_total = 0, ind_correct = 0;
  double f1_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j <= c; ++j) {
      row += conf(k, j);
      col += conf(j, k);
    }
    ind_total += row;
    ind_correct += conf(k, k);
    if (row == 0 && col == 0) {
      r.absent_classes.push_back(k);
    }
    f1_sum += class_f1(conf, k);
  }
  std::size_t ood_total = 0;
  for (std::size_t j = 0; j <= c; ++j) {
    ood_total += conf(c, j);
  }
  r.ind_acc = ind_total > 0 ? static_cast<double>(ind_correct) / static_cast<double>(ind_total) : 0.0;
  r.ind_macro_f1 = f1_sum / static_cast<double>(c);
  r.ood_recall =
    ood_total > 0 ? static_cast<double>(conf(c, c)) / static_cast<double>(ood_total) : 0.0;
  r.ood_f1 = class_f1(conf, c);
  return r;
}

inline BasicMatrix<std::size_t> confusion_from(
  std::span<const std::size_t> truth, std::span<const std::size_t> predicted, std::size_t num_classes)
{
  BasicMatrix<std::size_t> conf(num_classes + 1, num_classes + 1);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++conf(truth[i], predicted[i]);
  }
  return conf;
}

/// Predicted label per example: an IND class index, or C for OOD.
inline std::vector<std::size_t> predict_labels(const DetectionPipeline & p, const FeatureSet & data)
{
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto d = decide(p, data.inputs.row(i));
    out.push_back(d.ood ? p.num_classes() : d.predicted_class);
  }
  return out;
}

inline EvalReport evaluate(const DetectionPipeline & p, const FeatureSet & test)
{
  if (test.size() == 0) {
    throw EvalError("evaluate: empty test data");
  }
  check_class_rule(p);
  const auto predicted = predict_labels(p, test);
  return metrics_from_confusion(confusion_from(
    std::span<const std::size_t>(test.labels), std::span<const std::size_t>(predicted),
    p.num_classes()));
}

inline void write_confusion_csv(const EvalReport & r, const std::vector<std::string> & labels, std::ostream & out)
{
  out << "true\\predicted";
  for (const auto & l : labels) {
    out << ',' << l;
  }
  out << ",OOD\n";
  for (std::size_t i = 0; i < r.confusion.rows(); ++i) {
    out << (i < labels.size() ? labels[i] : std::string("OOD"));
    for (std::size_t j = 0; j < r.confusion.cols(); ++j) {
      out << ',' << r.confusion(i, j);
    }
    out << '\n';
  }
}

inline std::string format_real(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Histograms

struct HistogramSpec
{
  std::size_t n_bins = 50;
  /// Explicit range; automatic (joint min/max) when unset.
  std::optional<std::pair<double, double>> range;
};

struct Histogram
{
  std::vector<double> edges;  // n_bins + 1, shared by both groups
  std::vector<std::size_t> count_ind;
  std::vector<std::size_t> count_ood;
};

/// Values outside an explicit range are clamped into the edge bins.
inline Histogram histogram(
  std::span<const double> ind, std::span<const double> ood, const HistogramSpec & spec)
{
  if (spec.n_bins == 0) {
    throw EvalError("histogram: n_bins must be positive");
  }
  if (ind.empty() && ood.empty()) {
    throw EvalError("histogram: no scores");
  }
  double lo = 0.0, hi = 0.0;
  if (spec.range) {
    std::tie(lo, hi) = *spec.range;
    if (!(lo < hi)) {
      throw EvalError("histogram: range requires lo < hi");
    }
  } else {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (const auto group : {ind, ood}) {
      for (const double v : group) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!(lo < hi)) {
      hi = lo + 1.0;
    }
  }
  Histogram h;
  h.edges.resize(spec.n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(spec.n_bins);
  for (std::size_t b = 0; b <= spec.n_bins; ++b) {
    h.edges[b] = lo + width * static_cast<double>(b);
  }
  h.edges.back() = hi;
  auto bin_of = [&](double v) {
    const double pos = std::floor((v - lo) / width);
    if (!(pos > 0.0)) {
      return std::size_t{0};
    }
    return std::min(static_cast<std::size_t>(pos), spec.n_bins - 1);
  };
  h.count_ind.assign(spec.n_bins, 0);
  h.count_ood.assign(spec.n_bins, 0);
  for (const double v : ind) {
    ++h.count_ind[bin_of(v)];
  }
  for (const double v : ood) {
    ++h.count_ood[bin_of(v)];
  }
  return h;
}

/// Sum over bins of min(p_ind, p_ood) with each group normalized to 1.
/// Accumulated as integers, sum of min(c_ind * n_ood, c_ood * n_ind), and
/// divided once, so equal overlaps compare equal.
inline double overlap_coefficient(const Histogram & h)
{
  std::uint64_t n_ind = 0, n_ood = 0;
  for (std::size_t b = 0; b < h.count_ind.size(); ++b) {
    n_ind += h.count_ind[b];
    n_ood += h.count_ood[b];
  }
  if (n_ind == 0 || n_ood == 0) {
    return 0.0;
  }
  std::uint64_t shared = 0;
  for (std::size_t b = 0; b < h.count_ind.size(); ++b) {
    shared += std::min(h.count_ind[b] * n_ood, h.count_ood[b] * n_ind);
  }
  return static_cast<double>(shared) / (static_cast<double>(n_ind) * static_cast<double>(n_ood));
}

inline Histogram score_histograms(const DetectionPipeline & p, const FeatureSet & data, const HistogramSpec & spec)
{
  if (data.size() == 0) {
    throw EvalError("score_histograms: empty data");
  }
  std::vector<double> ind, ood;
  for (const auto & v : validation_scores(p, data)) {
    (v.is_ood ? ood : ind).push_back(v.score.value);
  }
  return histogram(std::span<const double>(ind), std::span<const double>(ood), spec);
}

inline void write_histogram_csv(const Histogram & h, std::ostream & out)
{
  out << "bin_lo,bin_hi,count_ind,count_ood\n";
  for (std::size_t b = 0; b < h.count_ind.size(); ++b) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,", h.edges[b], h.edges[b + 1]);
    out << buf << h.count_ind[b] << ',' << h.count_ood[b] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Similarity profile

/// Mean cosine similarity of each OOD example to its k nearest index rows.
inline std::vector<double> similarity_profile(
  const DetectionPipeline & p, const FeatureSet & data, std::size_t k)
{
  if (k == 0 || k > p.index.size()) {
    throw EvalError("similarity_profile: k must lie in [1, M]");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data.is_ood(i)) {
      continue;
    }
    const auto unit = embed(p.params, data.inputs.row(i));
    const auto z = std::span<const double>(unit.values);
    double sum = 0.0;
    for (const auto & nb : nearest(p.index.embeddings, z, k)) {
      sum += dot(z, p.index.embeddings.row(nb.row));
    }
    out.push_back(sum / static_cast<double>(k));
  }
  return out;
}

inline void write_similarity_csv(const std::vector<double> & profile, std::ostream & out)
{
  out << "example_index,mean_cosine\n";
  for (std::size_t i = 0; i < profile.size(); ++i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", profile[i]);
    out << i << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentData
{
  FeatureSet train;
  FeatureSet val;
  FeatureSet test;
  std::vector<std::string> labels;
  std::string ood_marker{kDefaultOodMarker};
  FeaturizerConfig featurizer;
};

inline ExperimentData make_experiment_data(const Splits & s, const FeaturizerConfig & f)
{
  return {make_feature_set(s.train, f), make_feature_set(s.val, f), make_feature_set(s.test, f),
          s.train.ind_labels, s.train.ood_marker, f};
}

inline DetectionPipeline calibrated_pipeline(
  const TrainReport & trained, const ExperimentData & data, const ScorerConfig & scorer)
{
  auto p = make_pipeline(
    trained.params, trained.head_trained, data.featurizer, data.labels, data.ood_marker, data.train,
    scorer);
  calibrate_pipeline(p, data.val);
  return p;
}

struct SweepAxis
{
  std::string name;  // kncl_k | knn_k | batch_size
  std::vector<std::size_t> values;
};

inline const std::vector<std::string> & sweep_axis_names()
{
  static const std::vector<std::string> names{"kncl_k", "knn_k", "batch_size"};
  return names;
}

inline void validate_axis(const SweepAxis & axis)
{
  const auto & names = sweep_axis_names();
  if (std::find(names.begin(), names.end(), axis.name) == names.end()) {
    throw EvalError("invalid sweep axis '" + axis.name + "'; valid axes: kncl_k, knn_k, batch_size");
  }
  if (axis.values.empty()) {
    throw EvalError("sweep axis '" + axis.name + "' has no values");
  }
}

struct SweepGrid
{
  SweepAxis axis;
  std::optional<SweepAxis> axis2;
  std::vector<std::uint64_t> seeds;
};

struct SweepCell
{
  std::size_t value = 0;
  std::optional<std::size_t> value2;
  std::uint64_t seed = 0;
  EvalReport report;
};

struct SweepResult
{
  SweepGrid grid;
  std::vector<SweepCell> cells;  // ordered by (value, value2, seed)
};

using DataForSeed = std::function<ExperimentData(std::uint64_t)>;

namespace detail
{

inline void apply_axis(const std::string & name, std::size_t value, TrainPlan & plan, ScorerConfig & scorer)
{
  if (name == "kncl_k") {
    plan.kncl.k = value;
  } else if (name == "batch_size") {
    plan.batch_size = value;
  } else {
    scorer.k_score = value;
  }
}

}  // namespace detail

/// Full Cartesian product of the grid. A knn_k-only grid trains once per seed
/// and re-calibrates per value; any training axis retrains per cell.
inline SweepResult sweep(
  const TrainPlan & base_plan, const ScorerConfig & base_scorer, const SweepGrid & grid,
  const DataForSeed & data_for_seed)
{
  validate_axis(grid.axis);
  if (grid.axis2) {
    validate_axis(*grid.axis2);
    if (grid.axis2->name == grid.axis.name) {
      throw EvalError("sweep axes must differ");
    }
  }
  if (grid.seeds.empty()) {
    throw EvalError("sweep needs at least one seed");
  }
  const bool retrain = grid.axis.name != "knn_k" || (grid.axis2 && grid.axis2->name != "knn_k");
  const std::vector<std::size_t> second =
    grid.axis2 ? grid.axis2->values : std::vector<std::size_t>{0};

  SweepResult result{grid, {}};
  for (const auto v1 : grid.axis.values) {
    for (const auto v2 : second) {
      for (const auto seed : grid.seeds) {
        result.cells.push_back({v1, grid.axis2 ? std::optional<std::size_t>(v2) : std::nullopt, seed, {}});
      }
    }
  }
  std::vector<ExperimentData> data;
  std::vector<TrainReport> shared_models;
  for (const auto seed : grid.seeds) {
    data.push_back(data_for_seed(seed));
    if (!retrain) {
      TrainPlan plan = base_plan;
      plan.seed = seed;
      shared_models.push_back(train(plan, data.back().train, data.back().val));
    }
  }
  for (auto & cell : result.cells) {
    const auto seed_pos = static_cast<std::size_t>(
      std::find(grid.seeds.begin(), grid.seeds.end(), cell.seed) - grid.seeds.begin());
    TrainPlan plan = base_plan;
    plan.seed = cell.seed;
    ScorerConfig scorer = base_scorer;
    detail::apply_axis(grid.axis.name, cell.value, plan, scorer);
    if (grid.axis2) {
      detail::apply_axis(grid.axis2->name, *cell.value2, plan, scorer);
    }
    const auto & d = data[seed_pos];
    if (retrain) {
      const auto trained = train(plan, d.train, d.val);
      cell.report = evaluate(calibrated_pipeline(trained, d, scorer), d.test);
    } else {
      cell.report = evaluate(calibrated_pipeline(shared_models[seed_pos], d, scorer), d.test);
    }
  }
  return result;
}

struct MetricSummary
{
  double mean[4]{};
  double stddev[4]{};
};

/// Population mean and standard deviation of (ind_acc, ind_f1, ood_recall, ood_f1).
inline MetricSummary summarize(const std::vector<EvalReport> & reports)
{
  MetricSummary s;
  if (reports.empty()) {
    return s;
  }
  const double n = static_cast<double>(reports.size());
  for (const auto & r : reports) {
    const double v[4] = {r.ind_acc, r.ind_macro_f1, r.ood_recall, r.ood_f1};
    for (int m = 0; m < 4; ++m) {
      s.mean[m] += v[m] / n;
    }
  }
  for (const auto & r : reports) {
    const double v[4] = {r.ind_acc, r.ind_macro_f1, r.ood_recall, r.ood_f1};
    for (int m = 0; m < 4; ++m) {
      s.stddev[m] += (v[m] - s.mean[m]) * (v[m] - s.mean[m]) / n;
    }
  }
  for (double & sd : s.stddev) {
    sd = std::sqrt(sd);
  }
  return s;
}

/// Per-seed rows, then one summary row per cell (seed column "mean", with
/// the standard deviations in the trailing *_std columns).
inline void write_sweep_csv(const SweepResult & r, std::ostream & out)
{
  const bool two = r.grid.axis2.has_value();
  out << "axis,";
  if (two) {
    out << "axis2,";
  }
  out << "seed,ind_acc,ind_f1,ood_recall,ood_f1,ind_acc_std,ind_f1_std,ood_recall_std,ood_f1_std\n";
  auto cell_key = [&](const SweepCell & c) {
    std::string k = std::to_string(c.value) + ',';
    if (two) {
      k += std::to_string(*c.value2) + ',';
    }
    return k;
  };
  for (const auto & c : r.cells) {
    out << cell_key(c) << c.seed << ',' << format_real(c.report.ind_acc) << ','
        << format_real(c.report.ind_macro_f1) << ',' << format_real(c.report.ood_recall) << ','
        << format_real(c.report.ood_f1) << ",,,,\n";
  }
  for (std::size_t start = 0; start < r.cells.size(); start += r.grid.seeds.size()) {
    std::vector<EvalReport> group;
    for (std::size_t i = start; i < start + r.grid.seeds.size(); ++i) {
      group.push_back(r.cells[i].report);
    }
    const auto s = summarize(group);
    out << cell_key(r.cells[start]) << "mean";
    for (double m : s.mean) {
      out << ',' << format_real(m);
    }
    for (double sd : s.stddev) {
      out << ',' << format_real(sd);
    }
    out << '\n';
  }
}

}  // namespace uninl

#endif  // UNINL__EVAL_HPP_
