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

// JSON containers for checkpoints (trained encoder) and pipeline bundles
// (checkpoint + KNN index + scorer + threshold). Doubles are written in
// shortest round-trip form, so load(save(x)) reproduces x bit for bit.

#ifndef UNINL__SERIALIZATION_HPP_
#define UNINL__SERIALIZATION_HPP_

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uninl/detection.hpp"
#include "uninl/encoder.hpp"
#include "uninl/trainer.hpp"

namespace uninl
{

class FormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kBundleVersion = 1;

struct Checkpoint
{
  EncoderParams<double> params;
  FeaturizerConfig featurizer;
  std::vector<std::string> labels;
  std::string ood_marker{kDefaultOodMarker};
  Strategy strategy = Strategy::kncl_then_ce;
  bool head_trained = false;

  friend bool operator==(const Checkpoint &, const Checkpoint &) = default;
};

namespace detail
{

using Json = nlohmann::ordered_json;

template <typename JsonT>
const JsonT & require(const JsonT & j, const char * key)
{
  if (!j.is_object() || !j.contains(key)) {
    throw FormatError(std::string("missing field \"") + key + "\"");
  }
  return j.at(key);
}

inline Json matrix_json(const Matrix & m)
{
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.storage()}};
}

template <typename JsonT>
Matrix matrix_from(const JsonT & j)
{
  auto data = require(j, "data").template get<std::vector<double>>();
  const auto rows = require(j, "rows").template get<std::size_t>();
  const auto cols = require(j, "cols").template get<std::size_t>();
  if (data.size() != rows * cols) {
    throw FormatError("matrix data length does not match its shape");
  }
  if (!all_finite(std::span<const double>(data))) {
    throw FormatError("matrix contains non-finite entries");
  }
  return Matrix(rows, cols, std::move(data));
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_json(const Checkpoint & c)
{
  using detail::matrix_json;
  const auto & p = c.params;
  return {
    {"format", "uninl-checkpoint"},
    {"version", kCheckpointVersion},
    {"activation", std::string(to_string(p.activation))},
    {"featurizer", {{"width", c.featurizer.width}, {"seed", c.featurizer.seed}}},
    {"labels", c.labels},
    {"ood_marker", c.ood_marker},
    {"strategy", std::string(to_string(c.strategy))},
    {"head_trained", c.head_trained},
    {"W1", matrix_json(p.w1)},
    {"b1", p.b1},
    {"W2", matrix_json(p.w2)},
    {"b2", p.b2},
    {"Wc", matrix_json(p.wc)},
    {"bc", p.bc}};
}

template <typename JsonT>
Checkpoint checkpoint_from_json(const JsonT & j)
{
  using detail::matrix_from;
  using detail::require;
  if (require(j, "format").template get<std::string>() != "uninl-checkpoint") {
    throw FormatError("not a checkpoint");
  }
  if (require(j, "version").template get<int>() != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version");
  }
  Checkpoint c;
  c.params.activation = parse_activation(require(j, "activation").template get<std::string>());
  const auto & f = require(j, "featurizer");
  c.featurizer.width = require(f, "width").template get<std::size_t>();
  c.featurizer.seed = require(f, "seed").template get<std::uint64_t>();
  c.labels = require(j, "labels").template get<std::vector<std::string>>();
  c.ood_marker = require(j, "ood_marker").template get<std::string>();
  c.strategy = parse_strategy(require(j, "strategy").template get<std::string>());
  c.head_trained = require(j, "head_trained").template get<bool>();
  c.params.w1 = matrix_from(require(j, "W1"));
  c.params.b1 = require(j, "b1").template get<std::vector<double>>();
  c.params.w2 = matrix_from(require(j, "W2"));
  c.params.b2 = require(j, "b2").template get<std::vector<double>>();
  c.params.wc = matrix_from(require(j, "Wc"));
  c.params.bc = require(j, "bc").template get<std::vector<double>>();
  if (!c.params.consistent()) {
    throw FormatError("checkpoint parameter shapes are inconsistent");
  }
  if (c.params.dims().classes != c.labels.size()) {
    throw FormatError("checkpoint head width does not match its label vocabulary");
  }
  return c;
}

inline nlohmann::ordered_json bundle_json(const DetectionPipeline & p, Strategy strategy)
{
  if (!p.threshold) {
    throw FormatError("cannot write an uncalibrated pipeline bundle");
  }
  const Checkpoint c{p.params, p.featurizer, p.labels, p.ood_marker, strategy, p.head_trained};
  return {
    {"format", "uninl-bundle"},
    {"version", kBundleVersion},
    {"checkpoint", checkpoint_json(c)},
    {"index",
     {{"embeddings", detail::matrix_json(p.index.embeddings)},
      {"labels", p.index.labels},
      {"excluded", p.index.excluded}}},
    {"scorer",
     {{"kind", std::string(to_string(p.scorer.kind))},
      {"k_score", p.scorer.k_score},
      {"lof_k", p.scorer.lof_k},
      {"class_rule", std::string(to_string(p.scorer.class_rule))}}},
    {"threshold", {{"lambda", p.threshold->lambda}, {"val_ind_f1", p.threshold->val_ind_f1}}}};
}

struct Bundle
{
  DetectionPipeline pipeline;
  Strategy strategy = Strategy::kncl_then_ce;
};

template <typename JsonT>
Bundle bundle_from_json(const JsonT & j)
{
  using detail::require;
  if (require(j, "format").template get<std::string>() != "uninl-bundle") {
    throw FormatError("not a pipeline bundle");
  }
  if (require(j, "version").template get<int>() != kBundleVersion) {
    throw FormatError("unsupported bundle version");
  }
  Bundle b;
  auto c = checkpoint_from_json(require(j, "checkpoint"));
  b.strategy = c.strategy;
  auto & p = b.pipeline;
  p.params = std::move(c.params);
  p.featurizer = c.featurizer;
  p.labels = std::move(c.labels);
  p.ood_marker = std::move(c.ood_marker);
  p.head_trained = c.head_trained;
  const auto & idx = require(j, "index");
  p.index.embeddings = detail::matrix_from(require(idx, "embeddings"));
  p.index.labels = require(idx, "labels").template get<std::vector<std::size_t>>();
  p.index.excluded = require(idx, "excluded").template get<std::vector<std::size_t>>();
  p.index.num_classes = p.num_classes();
  if (p.index.labels.size() != p.index.embeddings.rows()) {
    throw FormatError("index labels do not match its rows");
  }
  const auto & s = require(j, "scorer");
  p.scorer.kind = parse_scorer(require(s, "kind").template get<std::string>());
  p.scorer.k_score = require(s, "k_score").template get<std::size_t>();
  p.scorer.lof_k = require(s, "lof_k").template get<std::size_t>();
  p.scorer.class_rule = parse_class_rule(require(s, "class_rule").template get<std::string>());
  const auto & t = require(j, "threshold");
  p.threshold = Threshold{
    require(t, "lambda").template get<double>(), require(t, "val_ind_f1").template get<double>()};
  fit_scorer(p);
  return b;
}

inline nlohmann::ordered_json read_json_file(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open '" + path + "'");
  }
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception & e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Writes via a sibling temporary file and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path & path, const std::string & content)
{
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw FormatError("cannot write '" + tmp.string() + "'");
    }
    out << content;
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw FormatError("write failed for '" + tmp.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const Checkpoint & c, const std::filesystem::path & path)
{
  write_file_atomic(path, checkpoint_json(c).dump(1) + "\n");
}

inline Checkpoint load_checkpoint(const std::string & path)
{
  return checkpoint_from_json(read_json_file(path));
}

inline void save_bundle(const DetectionPipeline & p, Strategy strategy, const std::filesystem::path & path)
{
  write_file_atomic(path, bundle_json(p, strategy).dump(1) + "\n");
}

inline Bundle load_bundle(const std::string & path) { return bundle_from_json(read_json_file(path)); }

}  // namespace uninl

#endif  // UNINL__SERIALIZATION_HPP_
