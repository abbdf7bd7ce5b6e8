// Copyright 2026 The pcpoison Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Victim training and evaluation.

#ifndef PCPOISON_HARNESS_HPP_
#define PCPOISON_HARNESS_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcpoison/attacks.hpp"
#include "pcpoison/core.hpp"
#include "pcpoison/model.hpp"
#include "pcpoison/training.hpp"

namespace pcpoison {

// "<git describe>" of the build, or "unknown".
std::string_view version_string();

struct TrainConfig {
  std::string arch = "ref-small";
  int epochs = 200;
  int batch_size = 32;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  PlateauSchedule schedule;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] std::string to_text() const;
  // Reads the `victim_*` keys of a config file; other keys are ignored.
  static TrainConfig parse(std::string_view text);
};

struct EpochCurve {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;  // NaN without a test set
  double lr = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::optional<double> f1;  // binary tasks only, class 1 positive
  std::vector<int> predictions;
  std::vector<EpochCurve> curves;
  std::optional<DistanceReport> distance;
  HausdorffVariant hausdorff_variant = HausdorffVariant::kTwoSidedSquared;
  std::string method = "clean";
  std::string train_provenance;
  std::string surrogate_arch;
  std::string victim_arch;
  std::string config_echo;
  std::uint64_t seed = 0;

  [[nodiscard]] std::string to_json() const;
  // epoch,train_loss,train_acc,val_acc,test_acc,lr
  [[nodiscard]] std::string curves_csv() const;
  static EvalReport from_json(std::string_view text);
};

// x_i + delta_i (stored as float32), labels unchanged, provenance
// "poisoned(<method>)".
LabeledDataset materialize(const LabeledDataset& clean, const PerturbationSet& deltas,
                           std::string_view method);

// Accuracy, per-class accuracy, F1 and predictions of `model` on `test`.
EvalReport evaluate(const PointNetClassifier& model, const LabeledDataset& test);

struct TrainResult {
  PointNetClassifier model;
  EvalReport report;
};

// Called after every epoch with the model as it stands.
using CurveFn = std::function<void(const EpochCurve&, const PointNetClassifier&)>;

// Trains a fresh `config.arch` victim with cross-entropy. Batching and the
// validation split depend on the seed and on sample contents, not on the
// order of `train`. With `test`, the report carries its final evaluation
// and per-epoch test accuracy.
TrainResult train_victim(const LabeledDataset& train, const TrainConfig& config,
                         const LabeledDataset* test = nullptr, const CurveFn& progress = {});

// Poison `train` with a surrogate of attack.arch, train a victim of
// victim.arch on it and evaluate on `test`.
struct TransferResult {
  PoisonRun poison;
  TrainResult victim;
};
TransferResult transfer_eval(const LabeledDataset& train, const LabeledDataset& test,
                             const AttackConfig& attack, const TrainConfig& victim);

// Keeps round(ratio * N) samples from `poisoned` (chosen by seed) and the
// rest from `clean`.
LabeledDataset mix_clean(const LabeledDataset& poisoned, const LabeledDataset& clean, double ratio,
                         std::uint64_t seed);

// Content hash of one sample (coordinates and label).
std::uint64_t sample_hash(const PointCloud& cloud, int label);

}  // namespace pcpoison

#endif  // PCPOISON_HARNESS_HPP_
