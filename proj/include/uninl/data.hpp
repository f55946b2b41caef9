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

// Datasets: JSON Lines ingestion, hashed bag-of-words featurization,
// stratified splitting and the synthetic Gaussian-cluster benchmark.

#ifndef UNINL__DATA_HPP_
#define UNINL__DATA_HPP_

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "uninl/numerics.hpp"

namespace uninl
{

class DataError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kDefaultOodMarker = "oos";

/// One labeled example. Text examples are featurized on demand; synthetic
/// examples carry their feature vector directly and have empty text.
struct Example
{
  std::string text;
  std::vector<double> features;
  std::string label;

  bool has_features() const noexcept { return !features.empty(); }
  friend bool operator==(const Example &, const Example &) = default;
};

struct Dataset
{
  std::vector<Example> examples;
  std::vector<std::string> ind_labels;  // sorted, unique
  std::string ood_marker{kDefaultOodMarker};

  std::size_t num_classes() const noexcept { return ind_labels.size(); }
  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }

  bool is_ood(const Example & ex) const noexcept { return ex.label == ood_marker; }

  /// Class index in [0, C) for IND labels; C (the OOD slot) for the marker.
  std::size_t class_index(const std::string & label) const
  {
    if (label == ood_marker) {
      return num_classes();
    }
    const auto it = std::lower_bound(ind_labels.begin(), ind_labels.end(), label);
    if (it == ind_labels.end() || *it != label) {
      throw DataError("label '" + label + "' is neither an IND label nor the OOD marker");
    }
    return static_cast<std::size_t>(it - ind_labels.begin());
  }

  std::vector<std::size_t> class_indices() const
  {
    std::vector<std::size_t> out;
    out.reserve(examples.size());
    for (const auto & ex : examples) {
      out.push_back(class_index(ex.label));
    }
    return out;
  }

  std::size_t count_ood() const noexcept
  {
    return static_cast<std::size_t>(std::count_if(
      examples.begin(), examples.end(), [this](const Example & e) { return is_ood(e); }));
  }

  friend bool operator==(const Dataset &, const Dataset &) = default;
};

inline std::string_view trim(std::string_view s) noexcept
{
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(first, last - first + 1);
}

/// Throws DataError when any Dataset or Example invariant is violated.
inline void validate(const Dataset & ds)
{
  if (ds.ind_labels.empty()) {
    throw DataError("dataset has zero IND labels");
  }
  if (!std::is_sorted(ds.ind_labels.begin(), ds.ind_labels.end()) ||
      std::adjacent_find(ds.ind_labels.begin(), ds.ind_labels.end()) != ds.ind_labels.end()) {
    throw DataError("IND labels must be sorted and duplicate-free");
  }
  if (std::binary_search(ds.ind_labels.begin(), ds.ind_labels.end(), ds.ood_marker)) {
    throw DataError("OOD marker '" + ds.ood_marker + "' is also an IND label");
  }
  std::optional<std::size_t> feature_dim;
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto & ex = ds.examples[i];
    if (ex.label.empty()) {
      throw DataError("example " + std::to_string(i) + " has an empty label");
    }
    ds.class_index(ex.label);
    if (ex.has_features()) {
      if (feature_dim && *feature_dim != ex.features.size()) {
        throw DataError("example " + std::to_string(i) + " has inconsistent feature width");
      }
      feature_dim = ex.features.size();
      if (!all_finite(std::span<const double>(ex.features))) {
        throw DataError("example " + std::to_string(i) + " has non-finite features");
      }
    } else if (trim(ex.text).empty()) {
      throw DataError("example " + std::to_string(i) + " has empty text");
    }
  }
}

/// Builds a Dataset whose IND vocabulary is every distinct non-marker label.
inline Dataset make_dataset(std::vector<Example> examples, std::string ood_marker)
{
  std::set<std::string> labels;
  for (const auto & ex : examples) {
    if (ex.label != ood_marker) {
      labels.insert(ex.label);
    }
  }
  Dataset ds{std::move(examples), {labels.begin(), labels.end()}, std::move(ood_marker)};
  validate(ds);
  return ds;
}

/// Reads JSON Lines with string fields "text" and "label". Lines may instead
/// carry a numeric "features" array (pre-featurized, as written by `synth`).
inline Dataset load_jsonl(const std::string & path, std::string ood_marker = std::string(kDefaultOodMarker))
{
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open dataset file '" + path + "'");
  }
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    const auto where = path + ":" + std::to_string(line_no) + ": ";
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error & e) {
      throw DataError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object() || !obj.contains("label") || !obj["label"].is_string()) {
      throw DataError(where + "expected an object with a string field \"label\"");
    }
    Example ex;
    ex.label = obj["label"].get<std::string>();
    if (ex.label.empty()) {
      throw DataError(where + "empty label");
    }
    if (obj.contains("features")) {
      const auto & f = obj["features"];
      if (!f.is_array() || f.empty()) {
        throw DataError(where + "\"features\" must be a non-empty numeric array");
      }
      for (const auto & v : f) {
        if (!v.is_number()) {
          throw DataError(where + "\"features\" must be a non-empty numeric array");
        }
        ex.features.push_back(v.get<double>());
      }
      if (obj.contains("text") && obj["text"].is_string()) {
        ex.text = obj["text"].get<std::string>();
      }
    } else {
      if (!obj.contains("text") || !obj["text"].is_string()) {
        throw DataError(where + "expected a string field \"text\"");
      }
      ex.text = obj["text"].get<std::string>();
      if (trim(ex.text).empty()) {
        throw DataError(where + "empty text");
      }
    }
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) {
    throw DataError("dataset file '" + path + "' is empty");
  }
  try {
    return make_dataset(std::move(examples), std::move(ood_marker));
  } catch (const DataError & e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void write_jsonl(const Dataset & ds, std::ostream & out)
{
  for (const auto & ex : ds.examples) {
    nlohmann::ordered_json obj;
    if (!ex.text.empty() || !ex.has_features()) {
      obj["text"] = ex.text;
    }
    if (ex.has_features()) {
      obj["features"] = ex.features;
    }
    obj["label"] = ex.label;
    out << obj.dump() << '\n';
  }
}

inline void write_jsonl(const Dataset & ds, const std::string & path)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write dataset file '" + path + "'");
  }
  write_jsonl(ds, out);
  if (!out) {
    throw DataError("write failed for '" + path + "'");
  }
}

// ---------------------------------------------------------------------------
// Featurization

struct FeaturizerConfig
{
  std::size_t width = 256;
  std::uint64_t seed = 0;
  friend bool operator==(const FeaturizerConfig &, const FeaturizerConfig &) = default;
};

struct FeatureVector
{
  std::vector<double> values;
  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const FeatureVector &, const FeatureVector &) = default;
};

/// Lowercased ASCII-alphanumeric runs; bytes >= 0x80 count as token characters
/// so UTF-8 words stay intact.
inline std::vector<std::string> tokenize(std::string_view text)
{
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto byte = static_cast<unsigned char>(ch);
    if (byte >= 0x80 || std::isalnum(byte)) {
      current.push_back(static_cast<char>(byte < 0x80 ? std::tolower(byte) : byte));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

/// Seeded 64-bit FNV-1a. Byte-oriented, so identical on every platform.
inline std::uint64_t token_hash(std::string_view token, std::uint64_t seed) noexcept
{
  std::uint64_t s = seed;
  std::uint64_t h = 0xCBF29CE484222325ULL ^ splitmix64(s);
  for (const char ch : token) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline FeatureVector featurize(std::string_view text, std::size_t width, std::uint64_t seed)
{
  if (width == 0) {
    throw std::invalid_argument("featurize: width must be positive");
  }
  std::vector<double> counts(width, 0.0);
  for (const auto & tok : tokenize(text)) {
    counts[token_hash(tok, seed) % width] += 1.0;
  }
  auto norm = l2_normalize(counts);
  return FeatureVector{std::move(norm.values)};
}

/// One row per example: carried features, or the hashed text features.
inline Matrix feature_matrix(const Dataset & ds, const FeaturizerConfig & cfg)
{
  if (ds.empty()) {
    return Matrix(0, cfg.width);
  }
  const std::size_t dim =
    ds.examples.front().has_features() ? ds.examples.front().features.size() : cfg.width;
  Matrix out(ds.size(), dim);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto & ex = ds.examples[i];
    const std::vector<double> row =
      ex.has_features() ? ex.features : featurize(ex.text, cfg.width, cfg.seed).values;
    if (row.size() != dim) {
      throw DataError("example " + std::to_string(i) + " featurizes to the wrong width");
    }
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

/// Input width for a dataset: the carried feature width, else the featurizer width.
inline std::size_t input_width(const Dataset & ds, const FeaturizerConfig & cfg)
{
  for (const auto & ex : ds.examples) {
    if (ex.has_features()) {
      return ex.features.size();
    }
  }
  return cfg.width;
}

/// Featurized examples with class indices (the OOD marker maps to index C).
struct FeatureSet
{
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool is_ood(std::size_t i) const noexcept { return labels[i] == num_classes; }
  std::size_t count_ood() const noexcept
  {
    return static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), num_classes));
  }
};

inline FeatureSet make_feature_set(const Dataset & ds, const FeaturizerConfig & cfg)
{
  return FeatureSet{feature_matrix(ds, cfg), ds.class_indices(), ds.num_classes()};
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions
{
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Splits
{
  Dataset train;
  Dataset val;
  Dataset test;
};

namespace detail
{

// Floor allocation, then largest remainder (ties to the lower split index),
// then every active split is lifted to at least one example.
inline std::vector<std::size_t> allocate_counts(
  std::size_t n, const std::vector<double> & fractions, const std::string & label)
{
  const std::size_t parts = fractions.size();
  if (n < parts) {
    throw DataError(
      "label '" + label + "' has " + std::to_string(n) + " examples but " +
      std::to_string(parts) + " splits require it");
  }
  std::vector<std::size_t> counts(parts);
  std::vector<double> remainder(parts);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const double exact = static_cast<double>(n) * fractions[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    counts[i] = std::min(counts[i], n);
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned > n) {
    const auto big = std::max_element(counts.begin(), counts.end());
    --*big;
    --assigned;
  }
  std::vector<std::size_t> order(parts);
  for (std::size_t i = 0; i < parts; ++i) {
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainder[a] > remainder[b];
  });
  for (std::size_t r = 0; assigned < n; ++r) {
    ++counts[order[r % parts]];
    ++assigned;
  }
  for (std::size_t i = 0; i < parts; ++i) {
    if (counts[i] == 0) {
      const auto donor = std::max_element(counts.begin(), counts.end());
      --*donor;
      counts[i] = 1;
    }
  }
  return counts;
}

}  // namespace detail

/// Stratified split. IND labels are spread over train/val/test; the OOD marker
/// is spread over val/test only (training never sees OOD examples). Each
/// output keeps the input's example order.
inline Splits split(const Dataset & ds, const SplitFractions & fr, std::uint64_t seed)
{
  const double sum = fr.train + fr.val + fr.test;
  if (!(fr.train > 0 && fr.val > 0 && fr.test > 0) || std::abs(sum - 1.0) > 1e-9) {
    throw DataError("split fractions must be positive and sum to 1");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[ds.class_index(ds.examples[i].label)].push_back(i);
  }
  std::vector<int> assignment(ds.size(), -1);
  Rng rng(seed);
  for (auto & [cls, members] : by_class) {
    const bool ood = cls == ds.num_classes();
    rng.shuffle(std::span<std::size_t>(members));
    std::vector<double> fractions;
    std::vector<int> targets;
    if (ood) {
      fractions = {fr.val / (fr.val + fr.test), fr.test / (fr.val + fr.test)};
      targets = {1, 2};
    } else {
      fractions = {fr.train, fr.val, fr.test};
      targets = {0, 1, 2};
    }
    const auto label = ood ? ds.ood_marker : ds.ind_labels[cls];
    const auto counts = detail::allocate_counts(members.size(), fractions, label);
    std::size_t pos = 0;
    for (std::size_t part = 0; part < counts.size(); ++part) {
      for (std::size_t c = 0; c < counts[part]; ++c) {
        assignment[members[pos++]] = targets[part];
      }
    }
  }
  Splits out{
    Dataset{{}, ds.ind_labels, ds.ood_marker}, Dataset{{}, ds.ind_labels, ds.ood_marker},
    Dataset{{}, ds.ind_labels, ds.ood_marker}};
  std::array<Dataset *, 3> parts{&out.train, &out.val, &out.test};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    parts[static_cast<std::size_t>(assignment[i])]->examples.push_back(ds.examples[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct SyntheticSpec
{
  std::size_t n_ind_clusters = 5;
  std::size_t n_ood_clusters = 2;
  std::size_t dim = 16;
  std::size_t samples_per_cluster = 100;
  double cluster_spread = 0.3;
  double center_scale = 0.6;
  std::uint64_t seed = 0;
  SplitFractions fractions{0.6, 0.2, 0.2};
  std::string ood_marker{kDefaultOodMarker};
};

inline void validate(const SyntheticSpec & spec)
{
  if (spec.n_ind_clusters < 2) {
    throw DataError("synthetic benchmark needs at least 2 IND clusters");
  }
  if (spec.dim == 0 || spec.samples_per_cluster == 0) {
    throw DataError("synthetic dim and samples_per_cluster must be positive");
  }
  if (!(spec.cluster_spread > 0.0) || !(spec.center_scale > 0.0)) {
    throw DataError("synthetic cluster_spread and center_scale must be positive");
  }
}

inline std::string synthetic_label(std::size_t cluster)
{
  std::string digits = std::to_string(cluster);
  if (digits.size() < 3) {
    digits.insert(0, 3 - digits.size(), '0');
  }
  return "ind_" + digits;
}

namespace detail
{

inline Matrix draw_centers(const SyntheticSpec & spec, Rng & rng)
{
  Matrix centers(spec.n_ind_clusters + spec.n_ood_clusters, spec.dim);
  for (auto & c : centers.flat()) {
    c = rng.uniform(-spec.center_scale, spec.center_scale);
  }
  return centers;
}

}  // namespace detail

/// Cluster centers of the benchmark, IND clusters first.
inline Matrix synthetic_centers(const SyntheticSpec & spec)
{
  validate(spec);
  Rng rng(spec.seed);
  return detail::draw_centers(spec, rng);
}

/// Centers are uniform in [-scale, scale]^dim; points are isotropic Gaussians
/// around them. IND clusters [0, n_ind) get labels ind_000..; the remaining
/// clusters all get the OOD marker.
inline Splits generate_synthetic(const SyntheticSpec & spec)
{
  validate(spec);
  Rng rng(spec.seed);
  const std::size_t clusters = spec.n_ind_clusters + spec.n_ood_clusters;
  const Matrix centers = detail::draw_centers(spec, rng);
  std::vector<Example> examples;
  examples.reserve(clusters * spec.samples_per_cluster);
  for (std::size_t c = 0; c < clusters; ++c) {
    const std::string label = c < spec.n_ind_clusters ? synthetic_label(c) : spec.ood_marker;
    for (std::size_t s = 0; s < spec.samples_per_cluster; ++s) {
      Example ex;
      ex.label = label;
      ex.features.resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d) {
        ex.features[d] = rng.normal(centers(c, d), spec.cluster_spread);
      }
      examples.push_back(std::move(ex));
    }
  }
  const Dataset full = make_dataset(std::move(examples), spec.ood_marker);
  return split(full, spec.fractions, derive_seed(spec.seed, 0x5111));
}

}  // namespace uninl

#endif  // UNINL__DATA_HPP_
