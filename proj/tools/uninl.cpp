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

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "uninl/uninl.hpp"

namespace fs = std::filesystem;
using namespace uninl;

namespace
{

constexpr const char * kOutputDirEnv = "UNINL_OUTPUT_DIR";

class UsageError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

std::string default_output_dir()
{
  const char * env = std::getenv(kOutputDirEnv);
  return env != nullptr && *env != '\0' ? std::string(env) : std::string("uninl-out");
}

/// Output files of one command, held in memory until every one is ready.
class Outputs
{
public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  void add(const std::string & name, std::string content) { files_.emplace_back(name, std::move(content)); }

  void commit() const
  {
    fs::create_directories(dir_);
    std::vector<fs::path> written;
    try {
      for (const auto & [name, content] : files_) {
        write_file_atomic(dir_ / name, content);
        written.push_back(dir_ / name);
      }
    } catch (...) {
      for (const auto & p : written) {
        std::error_code ec;
        fs::remove(p, ec);
      }
      throw;
    }
    for (const auto & p : written) {
      std::cerr << "wrote " << p.string() << '\n';
    }
  }

private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

// ---------------------------------------------------------------------------
// Config files: `key = value` lines, `#` comments. Keys are long option names
// of the subcommand; values given on the command line take precedence.

void apply_config(CLI::App & sub, const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw UsageError("cannot open config file '" + path + "'");
  }
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto body = std::string(trim(std::string_view(line).substr(0, hash)));
    if (body.empty()) {
      continue;
    }
    const auto where = path + ":" + std::to_string(line_no) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw UsageError(where + "expected key = value");
    }
    const std::string key(trim(std::string_view(body).substr(0, eq)));
    std::string value(trim(std::string_view(body).substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    CLI::Option * opt = key == "config" ? nullptr : sub.get_option_no_throw("--" + key);
    if (opt == nullptr) {
      throw UsageError(where + "unknown key '" + key + "' for command '" + sub.get_name() + "'");
    }
    if (seen.count(key) != 0) {
      throw UsageError(where + "duplicate key '" + key + "'");
    }
    seen[key] = line_no;
    if (opt->count() != 0) {
      continue;
    }
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error & e) {
      throw UsageError(where + e.what());
    }
  }
}

std::vector<std::size_t> parse_size_list(const std::string & text, const std::string & what)
{
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t(trim(item));
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(t, &pos);
    } catch (const std::exception &) {
      pos = 0;
    }
    if (t.empty() || pos != t.size() || t.front() == '-') {
      throw UsageError(what + ": '" + t + "' is not a non-negative integer");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) {
    throw UsageError(what + " must list at least one value");
  }
  return out;
}

std::vector<double> parse_real_list(const std::string & text)
{
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t(trim(item));
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &pos);
    } catch (const std::exception &) {
      pos = 0;
    }
    if (t.empty() || pos != t.size()) {
      throw UsageError("'" + t + "' is not a number");
    }
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct CommonOptions
{
  std::string config;
  std::string out = default_output_dir();
};

void add_common(CLI::App & sub, CommonOptions & o)
{
  sub.add_option("--config", o.config, "key = value file; command-line flags override it");
  sub.add_option("--out", o.out, std::string("output directory (default from $") + kOutputDirEnv + ")")
    ->capture_default_str();
}

struct SynthOptions
{
  SyntheticSpec spec;
};

void add_synth_options(CLI::App & sub, SynthOptions & o)
{
  auto & s = o.spec;
  sub.add_option("--ind", s.n_ind_clusters, "number of IND clusters (>= 2)")
    ->capture_default_str()->check(CLI::Range(std::size_t{2}, std::size_t{1000000}));
  sub.add_option("--ood", s.n_ood_clusters, "number of OOD clusters")->capture_default_str();
  sub.add_option("--dim", s.dim, "feature dimension")
    ->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--per-cluster", s.samples_per_cluster, "points per cluster")
    ->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--spread", s.cluster_spread, "per-axis standard deviation")
    ->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--center-scale", s.center_scale, "centers uniform in [-scale, scale]^dim")
    ->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--train-frac", s.fractions.train, "IND training fraction")->capture_default_str();
  sub.add_option("--val-frac", s.fractions.val, "validation fraction")->capture_default_str();
  sub.add_option("--test-frac", s.fractions.test, "test fraction")->capture_default_str();
}

struct DataOptions
{
  std::string ood_marker{kDefaultOodMarker};
  FeaturizerConfig featurizer;
};

void add_data_options(CLI::App & sub, DataOptions & o)
{
  sub.add_option("--ood-marker", o.ood_marker, "label that marks OOD examples")->capture_default_str();
  sub.add_option("--feature-width", o.featurizer.width, "hashed text feature width")
    ->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--feature-seed", o.featurizer.seed, "hashed text feature seed")->capture_default_str();
}

struct TrainOptions
{
  std::string strategy{"kncl_then_ce"};
  std::optional<std::size_t> epochs1;
  std::optional<std::size_t> epochs2;
  TrainPlan plan;
  std::string activation{"tanh"};
};

void add_train_options(CLI::App & sub, TrainOptions & o)
{
  auto & p = o.plan;
  sub.add_option("--strategy", o.strategy, "kncl_then_ce|only_ce|only_kncl|ce_then_kncl|multitask")
    ->capture_default_str();
  sub.add_option("--epochs1", o.epochs1, "phase-1 epochs (default: per strategy, 100 or 110)");
  sub.add_option("--epochs2", o.epochs2, "phase-2 epochs (default: per strategy, 10, 100 or 0)");
  sub.add_option("--batch-size", p.batch_size, "batch size")->capture_default_str();
  sub.add_option("--kncl-k", p.kncl.k, "KNN set size of the contrastive objective")->capture_default_str();
  sub.add_option("--tau", p.kncl.tau, "contrastive temperature")->capture_default_str();
  sub.add_option("--augment", p.kncl.use_augmented_views, "adversarial augmented views (true|false)")
    ->capture_default_str();
  sub.add_option("--epsilon-adv", p.kncl.epsilon_adv, "augmentation step size")->capture_default_str();
  sub.add_option("--lr", p.lr, "Adam learning rate")->capture_default_str();
  sub.add_option("--dropout", p.dropout, "dropout rate")->capture_default_str();
  sub.add_option("--hidden", p.hidden, "hidden width")->capture_default_str();
  sub.add_option("--repr", p.repr, "representation width")->capture_default_str();
  sub.add_option("--activation", o.activation, "tanh|relu")->capture_default_str();
  sub.add_option("--freeze-encoder", p.freeze_encoder_in_finetune,
                 "cross-entropy fine-tuning after contrastive training updates only the head")
    ->capture_default_str();
  sub.add_option("--seed", p.seed, "training seed")->capture_default_str();
}

TrainPlan resolve_plan(const TrainOptions & o)
{
  TrainPlan plan = o.plan;
  Strategy s{};
  try {
    s = parse_strategy(o.strategy);
    plan.activation = parse_activation(o.activation);
  } catch (const std::invalid_argument & e) {
    throw UsageError(e.what());
  }
  const auto d = TrainPlan::defaults(s);
  plan.strategy = s;
  plan.epochs_phase1 = o.epochs1.value_or(d.epochs_phase1);
  plan.epochs_phase2 = o.epochs2.value_or(d.epochs_phase2);
  try {
    plan.validate();
  } catch (const TrainingError & e) {
    throw UsageError(e.what());
  }
  return plan;
}

struct ScorerOptions
{
  std::string kind{"knn"};
  ScorerConfig cfg;
  std::string class_rule{"auto"};
};

void add_scorer_options(CLI::App & sub, ScorerOptions & o)
{
  sub.add_option("--scorer", o.kind, "knn|msp|lof|gda")->capture_default_str();
  sub.add_option("--k-score", o.cfg.k_score, "neighbors for the KNN score and vote")->capture_default_str();
  sub.add_option("--lof-k", o.cfg.lof_k, "neighbors for LOF")->capture_default_str();
  sub.add_option("--classify", o.class_rule, "IND class rule: auto|head|knn")->capture_default_str();
}

ScorerConfig resolve_scorer(const ScorerOptions & o)
{
  ScorerConfig cfg = o.cfg;
  try {
    cfg.kind = parse_scorer(o.kind);
    cfg.class_rule = parse_class_rule(o.class_rule);
  } catch (const std::invalid_argument & e) {
    throw UsageError(e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Data helpers

/// Re-expresses a dataset against a fixed IND vocabulary.
Dataset with_vocabulary(Dataset ds, const std::vector<std::string> & labels, const std::string & marker, const std::string & path)
{
  if (ds.ood_marker != marker) {
    throw DataError(path + ": OOD marker mismatch");
  }
  for (const auto & l : ds.ind_labels) {
    if (!std::binary_search(labels.begin(), labels.end(), l)) {
      throw DataError(path + ": label '" + l + "' does not occur in the training vocabulary");
    }
  }
  ds.ind_labels = labels;
  return ds;
}

Dataset load_training(const std::string & path, const std::string & marker)
{
  Dataset ds = load_jsonl(path, marker);
  const auto n_ood = ds.count_ood();
  if (n_ood != 0) {
    std::erase_if(ds.examples, [&](const Example & e) { return ds.is_ood(e); });
    std::cerr << "note: dropped " << n_ood << " OOD examples from the training data\n";
  }
  return ds;
}

FeatureSet load_features(
  const std::string & path, const std::vector<std::string> & labels, const std::string & marker,
  const FeaturizerConfig & featurizer)
{
  return make_feature_set(with_vocabulary(load_jsonl(path, marker), labels, marker, path), featurizer);
}

void check_width(const FeatureSet & set, const EncoderParams<double> & params, const std::string & path)
{
  if (set.size() != 0 && set.inputs.cols() != params.dims().input) {
    throw DataError(
      path + ": inputs have width " + std::to_string(set.inputs.cols()) + " but the model expects " +
      std::to_string(params.dims().input));
  }
}

std::string dataset_text(const Dataset & ds)
{
  std::ostringstream out;
  write_jsonl(ds, out);
  return out.str();
}

std::string metrics_csv(const EvalReport & r)
{
  return "ind_acc,ind_f1,ood_recall,ood_f1\n" + format_real(r.ind_acc) + ',' + format_real(r.ind_macro_f1) +
         ',' + format_real(r.ood_recall) + ',' + format_real(r.ood_f1) + '\n';
}

// ---------------------------------------------------------------------------
// Commands

int run_synth(const CommonOptions & common, const SynthOptions & o, std::uint64_t seed, const std::string & marker)
{
  SyntheticSpec spec = o.spec;
  spec.seed = seed;
  spec.ood_marker = marker;
  Splits s;
  try {
    s = generate_synthetic(spec);
  } catch (const DataError & e) {
    throw UsageError(e.what());
  }
  Outputs out(common.out);
  nlohmann::ordered_json manifest{
    {"format", "uninl-synthetic"},
    {"version", 1},
    {"n_ind_clusters", spec.n_ind_clusters},
    {"n_ood_clusters", spec.n_ood_clusters},
    {"dim", spec.dim},
    {"samples_per_cluster", spec.samples_per_cluster},
    {"cluster_spread", spec.cluster_spread},
    {"center_scale", spec.center_scale},
    {"seed", spec.seed},
    {"fractions", {spec.fractions.train, spec.fractions.val, spec.fractions.test}},
    {"ood_marker", spec.ood_marker},
    {"labels", s.train.ind_labels},
    {"files", nlohmann::ordered_json::array()}};
  for (const auto & [name, ds] : {std::pair{"train.jsonl", &s.train}, {"val.jsonl", &s.val}, {"test.jsonl", &s.test}}) {
    out.add(name, dataset_text(*ds));
    manifest["files"].push_back({{"name", name}, {"examples", ds->size()}, {"ood", ds->count_ood()}});
  }
  out.add("manifest.json", manifest.dump(1) + "\n");
  out.commit();
  return 0;
}

int run_train(
  const CommonOptions & common, const TrainOptions & to, const DataOptions & dopt,
  const std::string & data_path, const std::string & val_path)
{
  const TrainPlan plan = resolve_plan(to);
  const Dataset train_ds = load_training(data_path, dopt.ood_marker);
  const FeatureSet train_set = make_feature_set(train_ds, dopt.featurizer);
  FeatureSet val_set{Matrix(0, train_set.inputs.cols()), {}, train_set.num_classes};
  if (!val_path.empty()) {
    val_set = load_features(val_path, train_ds.ind_labels, dopt.ood_marker, dopt.featurizer);
  }
  const auto report = train(plan, train_set, val_set);
  const Checkpoint ckpt{
    report.params, dopt.featurizer, train_ds.ind_labels, dopt.ood_marker, plan.strategy,
    report.head_trained};
  std::ostringstream curve;
  write_loss_csv(report, curve);
  Outputs out(common.out);
  out.add("checkpoint.json", checkpoint_json(ckpt).dump(1) + "\n");
  out.add("loss_curve.csv", curve.str());
  out.commit();
  if (!report.curve.empty()) {
    std::cout << "strategy " << to_string(plan.strategy) << ": " << report.curve.size()
              << " epochs, final train loss " << format_real(report.curve.back().train_loss) << '\n';
  }
  return 0;
}

int run_calibrate(
  const CommonOptions & common, const ScorerOptions & so, const std::string & checkpoint_path,
  const std::string & data_path, const std::string & val_path, bool ind_only)
{
  const ScorerConfig scorer = resolve_scorer(so);
  const Checkpoint c = load_checkpoint(checkpoint_path);
  Dataset train_ds = load_training(data_path, c.ood_marker);
  const FeatureSet train_set = make_feature_set(
    with_vocabulary(std::move(train_ds), c.labels, c.ood_marker, data_path), c.featurizer);
  const FeatureSet val_set = load_features(val_path, c.labels, c.ood_marker, c.featurizer);
  check_width(train_set, c.params, data_path);
  check_width(val_set, c.params, val_path);
  auto p = make_pipeline(c.params, c.head_trained, c.featurizer, c.labels, c.ood_marker, train_set, scorer);
  for (const auto row : p.index.excluded) {
    std::cerr << "warning: training example " << row << " encodes to the zero vector; left out of the index\n";
  }
  const auto t =
    calibrate_pipeline(p, val_set, ind_only ? CalibrationMode::ind_only : CalibrationMode::with_ood);
  Outputs out(common.out);
  out.add("bundle.json", bundle_json(p, c.strategy).dump(1) + "\n");
  out.commit();
  std::cout << "scorer " << to_string(scorer.kind) << ": lambda " << format_real(t.lambda)
            << ", validation IND macro-F1 " << format_real(t.val_ind_f1) << '\n';
  return 0;
}

int run_eval(
  const CommonOptions & common, const std::string & bundle_path, const std::string & test_path,
  const std::optional<std::string> & class_rule, std::size_t histogram_bins, std::size_t similarity_k)
{
  auto b = load_bundle(bundle_path);
  auto & p = b.pipeline;
  if (class_rule) {
    try {
      p.scorer.class_rule = parse_class_rule(*class_rule);
    } catch (const std::invalid_argument & e) {
      throw UsageError(e.what());
    }
  }
  check_class_rule(p);
  const FeatureSet test = load_features(test_path, p.labels, p.ood_marker, p.featurizer);
  check_width(test, p.params, test_path);
  const auto r = evaluate(p, test);
  Outputs out(common.out);
  out.add("metrics.csv", metrics_csv(r));
  std::ostringstream conf;
  write_confusion_csv(r, p.labels, conf);
  out.add("confusion.csv", conf.str());
  if (histogram_bins > 0) {
    std::ostringstream h;
    write_histogram_csv(score_histograms(p, test, HistogramSpec{histogram_bins, std::nullopt}), h);
    out.add("histogram.csv", h.str());
  }
  if (similarity_k > 0) {
    std::ostringstream s;
    write_similarity_csv(similarity_profile(p, test, similarity_k), s);
    out.add("similarity.csv", s.str());
  }
  out.commit();
  std::cout << "ind_acc " << format_real(r.ind_acc) << '\n'
            << "ind_macro_f1 " << format_real(r.ind_macro_f1) << '\n'
            << "ood_recall " << format_real(r.ood_recall) << '\n'
            << "ood_f1 " << format_real(r.ood_f1) << '\n';
  for (const auto c : r.absent_classes) {
    std::cerr << "warning: class '" << p.labels[c] << "' is absent from the test data and predictions\n";
  }
  return 0;
}

struct SweepOptions
{
  std::string axis;
  std::string values;
  std::string axis2;
  std::string values2;
  std::size_t seeds = 5;
  std::string data;
  std::string val;
  std::string test;
};

int run_sweep(
  const CommonOptions & common, const SweepOptions & so, const TrainOptions & to, const ScorerOptions & sc,
  const DataOptions & dopt, const SynthOptions & synth)
{
  SweepGrid grid;
  grid.axis = {so.axis, parse_size_list(so.values, "--values")};
  if (!so.axis2.empty()) {
    grid.axis2 = SweepAxis{so.axis2, parse_size_list(so.values2, "--values2")};
  } else if (!so.values2.empty()) {
    throw UsageError("--values2 needs --axis2");
  }
  try {
    validate_axis(grid.axis);
    if (grid.axis2) {
      validate_axis(*grid.axis2);
    }
  } catch (const EvalError & e) {
    throw UsageError(e.what());
  }
  if (so.seeds == 0) {
    throw UsageError("--seeds must be positive");
  }
  for (std::uint64_t s = 1; s <= so.seeds; ++s) {
    grid.seeds.push_back(s);
  }
  const TrainPlan plan = resolve_plan(to);
  const ScorerConfig scorer = resolve_scorer(sc);
  const bool files = !so.data.empty() || !so.val.empty() || !so.test.empty();
  if (files && (so.data.empty() || so.val.empty() || so.test.empty())) {
    throw UsageError("sweep over files needs --data, --val and --test together");
  }
  std::optional<ExperimentData> fixed;
  if (files) {
    const Dataset train_ds = load_training(so.data, dopt.ood_marker);
    fixed = ExperimentData{
      make_feature_set(train_ds, dopt.featurizer),
      load_features(so.val, train_ds.ind_labels, dopt.ood_marker, dopt.featurizer),
      load_features(so.test, train_ds.ind_labels, dopt.ood_marker, dopt.featurizer),
      train_ds.ind_labels, dopt.ood_marker, dopt.featurizer};
  }
  SyntheticSpec spec = synth.spec;
  spec.ood_marker = dopt.ood_marker;
  if (!files) {
    try {
      validate(spec);
    } catch (const DataError & e) {
      throw UsageError(e.what());
    }
  }
  const DataForSeed data_for_seed = [&](std::uint64_t seed) {
    if (fixed) {
      return *fixed;
    }
    SyntheticSpec s = spec;
    s.seed = seed;
    return make_experiment_data(generate_synthetic(s), dopt.featurizer);
  };
  const auto result = sweep(plan, scorer, grid, data_for_seed);
  std::ostringstream csv;
  write_sweep_csv(result, csv);
  Outputs out(common.out);
  out.add("sweep.csv", csv.str());
  out.commit();
  std::cout << result.cells.size() << " cells evaluated\n";
  return 0;
}

int run_score(const std::string & bundle_path, const std::vector<std::string> & texts, const std::vector<std::string> & features)
{
  const auto b = load_bundle(bundle_path);
  const auto & p = b.pipeline;
  check_class_rule(p);
  auto emit_features = [&](const std::vector<double> & x) {
    if (x.size() != p.params.dims().input) {
      throw DataError(
        "query has " + std::to_string(x.size()) + " features but the model expects " +
        std::to_string(p.params.dims().input));
    }
    std::cout << format_decision(p, decide(p, std::span<const double>(x))) << '\n';
  };
  auto emit_text = [&](std::string_view t) {
    if (p.featurizer.width != p.params.dims().input) {
      throw DataError(
        "the model takes " + std::to_string(p.params.dims().input) +
        "-dimensional feature vectors and cannot score raw text; pass --features instead");
    }
    std::cout << format_decision(p, decide(p, t)) << '\n';
  };
  for (const auto & t : texts) {
    emit_text(t);
  }
  for (const auto & f : features) {
    emit_features(parse_real_list(f));
  }
  if (texts.empty() && features.empty()) {
    std::string line;
    while (std::getline(std::cin, line)) {
      const auto t = trim(line);
      if (t.empty()) {
        continue;
      }
      if (t.front() == '[') {
        emit_features(nlohmann::json::parse(t).get<std::vector<double>>());
      } else {
        emit_text(t);
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Out-of-domain intent detection with nearest-neighbor contrastive training."};
  app.require_subcommand(1);
  app.fallthrough(false);

  CommonOptions common;
  SynthOptions synth;
  DataOptions dopt;
  TrainOptions topt;
  ScorerOptions sopt;
  SweepOptions sweep_opt;
  std::uint64_t synth_seed = 0;
  std::string data_path, val_path, test_path, checkpoint_path, bundle_path;
  std::optional<std::string> eval_rule;
  std::size_t histogram_bins = 0, similarity_k = 0;
  bool ind_only = false;
  std::vector<std::string> texts, features;

  auto * synth_cmd = app.add_subcommand("synth", "generate a synthetic Gaussian-cluster benchmark");
  add_common(*synth_cmd, common);
  add_synth_options(*synth_cmd, synth);
  synth_cmd->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--ood-marker", dopt.ood_marker, "label for OOD examples")->capture_default_str();

  auto * train_cmd = app.add_subcommand("train", "train an encoder and write a checkpoint");
  add_common(*train_cmd, common);
  add_train_options(*train_cmd, topt);
  add_data_options(*train_cmd, dopt);
  train_cmd->add_option("--data", data_path, "training JSONL")->required();
  train_cmd->add_option("--val", val_path, "validation JSONL (validation loss column)");

  auto * cal_cmd = app.add_subcommand("calibrate", "build the detector and choose its threshold");
  add_common(*cal_cmd, common);
  add_scorer_options(*cal_cmd, sopt);
  cal_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint from train")->required();
  cal_cmd->add_option("--data", data_path, "training JSONL (index rows)")->required();
  cal_cmd->add_option("--val", val_path, "validation JSONL")->required();
  cal_cmd->add_option("--ind-only", ind_only, "ignore validation OOD examples when choosing lambda")
    ->capture_default_str();

  auto * eval_cmd = app.add_subcommand("eval", "evaluate a calibrated bundle on test data");
  add_common(*eval_cmd, common);
  eval_cmd->add_option("--bundle", bundle_path, "bundle from calibrate")->required();
  eval_cmd->add_option("--test", test_path, "test JSONL")->required();
  eval_cmd->add_option("--classify", eval_rule, "override the IND class rule: auto|head|knn");
  eval_cmd->add_option("--histogram", histogram_bins, "write a score histogram with this many bins (0: off)")
    ->capture_default_str();
  eval_cmd->add_option("--similarity-k", similarity_k, "write the OOD-to-IND similarity profile (0: off)")
    ->capture_default_str();

  auto * sweep_cmd = app.add_subcommand("sweep", "grid over kncl_k, knn_k or batch_size across seeds");
  add_common(*sweep_cmd, common);
  add_train_options(*sweep_cmd, topt);
  add_scorer_options(*sweep_cmd, sopt);
  add_data_options(*sweep_cmd, dopt);
  add_synth_options(*sweep_cmd, synth);
  sweep_cmd->add_option("--axis", sweep_opt.axis, "kncl_k|knn_k|batch_size")->required();
  sweep_cmd->add_option("--values", sweep_opt.values, "comma-separated axis values")->required();
  sweep_cmd->add_option("--axis2", sweep_opt.axis2, "optional second axis");
  sweep_cmd->add_option("--values2", sweep_opt.values2, "comma-separated second-axis values");
  sweep_cmd->add_option("--seeds", sweep_opt.seeds, "run seeds 1..N")->capture_default_str();
  sweep_cmd->add_option("--data", sweep_opt.data, "training JSONL (default: synthetic data per seed)");
  sweep_cmd->add_option("--val", sweep_opt.val, "validation JSONL");
  sweep_cmd->add_option("--test", sweep_opt.test, "test JSONL");

  auto * score_cmd = app.add_subcommand("score", "score queries; reads stdin lines when none are given");
  score_cmd->add_option("--config", common.config, "key = value file; command-line flags override it");
  score_cmd->add_option("--bundle", bundle_path, "bundle from calibrate")->required();
  score_cmd->add_option("--text", texts, "query text (repeatable)");
  score_cmd->add_option("--features", features, "comma-separated feature vector (repeatable)");

  std::vector<const CLI::Option *> needed;
  for (auto * sub : app.get_subcommands({})) {
    for (auto * opt : sub->get_options()) {
      if (opt->get_required()) {
        // Checked after the config file is applied, which may supply the value.
        opt->required(false);
        opt->description(opt->get_description() + " (required)");
        needed.push_back(opt);
      }
    }
  }

  try {
    app.parse(argc, argv);
    CLI::App * sub = app.get_subcommands().front();
    if (!common.config.empty()) {
      apply_config(*sub, common.config);
    }
    for (const auto * opt : sub->get_options()) {
      if (opt->count() == 0 && std::find(needed.begin(), needed.end(), opt) != needed.end()) {
        throw UsageError(opt->get_name() + " is required");
      }
    }
    if (sub == synth_cmd) {
      return run_synth(common, synth, synth_seed, dopt.ood_marker);
    }
    if (sub == train_cmd) {
      return run_train(common, topt, dopt, data_path, val_path);
    }
    if (sub == cal_cmd) {
      return run_calibrate(common, sopt, checkpoint_path, data_path, val_path, ind_only);
    }
    if (sub == eval_cmd) {
      return run_eval(common, bundle_path, test_path, eval_rule, histogram_bins, similarity_k);
    }
    if (sub == sweep_cmd) {
      return run_sweep(common, sweep_opt, topt, sopt, dopt, synth);
    }
    return run_score(bundle_path, texts, features);
  } catch (const CLI::ParseError & e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const UsageError & e) {
    std::cerr << "uninl: usage error: " << e.what() << '\n';
    return 2;
  } catch (const RefusedError & e) {
    std::cerr << "uninl: refused: " << e.what() << '\n';
    return 1;
  } catch (const std::exception & e) {
    std::cerr << "uninl: error: " << e.what() << '\n';
    return 1;
  }
}
