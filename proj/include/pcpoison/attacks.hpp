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

// Availability-poison generators for point-cloud classifiers.
//
// Error-minimising family (bi-level, alternating):
//   em      cross-entropy at both levels, sign steps, l-inf projection
//   reg-em  cross-entropy + beta * chamfer at both levels, raw steps
//   fc-em   model level cross-entropy + beta * chamfer; poison level
//           feature-collision + beta * chamfer, raw steps
//
// Error-maximising family (pretrained surrogate, single pass):
//   ap / ap-t          cross-entropy, sign steps, l-inf projection
//   reg-ap / reg-ap-t  cross-entropy -/+ beta * chamfer, raw steps
//   fd-ap / fd-ap-t    cross-entropy + zeta * feature-collision -/+ beta * chamfer
//
// Targeted variants ("-t") descend on the loss of the label tau(y).

#ifndef PCPOISON_ATTACKS_HPP_
#define PCPOISON_ATTACKS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcpoison/core.hpp"
#include "pcpoison/model.hpp"
#include "pcpoison/objective.hpp"
#include "pcpoison/training.hpp"

namespace pcpoison {

enum class Method { kEm, kAp, kApT, kRegEm, kRegAp, kRegApT, kFcEm, kFdAp, kFdApT };

Method parse_method(std::string_view name);
std::string_view to_string(Method method);
// "em, ap, ap-t, reg-em, reg-ap, reg-ap-t, fc-em, fd-ap, fd-ap-t"
std::string method_list();

[[nodiscard]] bool is_targeted(Method m);
[[nodiscard]] bool is_error_maximizing(Method m);
[[nodiscard]] bool is_linf_constrained(Method m);

enum class StepMode { kSignMin, kSignMax, kRawMin, kRawMax };

// How poison steps use the gradient: sign (PGD-style) or raw. kAuto picks
// sign for the l-inf constrained methods and raw for the rest.
enum class StepRule { kAuto, kSign, kRaw };

struct AdaptiveBeta {
  bool enabled = false;
  double scale = 1.1;
  double top_fraction = 0.2;
  double min_beta = 0.1;
  double max_beta = 10.0;
};

// tau(y) = (y + shift) mod C. shift = 0 is the identity map.
struct TargetMap {
  int shift = 1;
  [[nodiscard]] int operator()(int label, int num_classes) const {
    return ((label + shift) % num_classes + num_classes) % num_classes;
  }
};

struct AttackConfig {
  Method method = Method::kFcEm;
  std::string arch = "ref-small";
  int epochs = 200;          // T (bi-level) or surrogate pretraining epochs (AP family)
  int model_steps = 0;       // T_theta; 0 = one pass over the data
  int poison_steps = 0;      // T_delta; 0 = one pass over the data
  int attack_steps = 10;     // T_a
  double model_lr = 1e-3;    // alpha_theta
  double poison_lr = 0.015;  // alpha_delta (alpha_a for the AP family)
  int batch_size = 128;      // N_B
  double beta = 1.0;
  double temperature = kDefaultTemperature;
  double epsilon = 0.08;     // l-inf budget for em / ap / ap-t
  double zeta = 1.0;         // feature-collision strength for fd-ap
  AdaptiveBeta adaptive_beta;
  TargetMap target;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  PlateauSchedule schedule;
  // Logit loss used by em / reg-em at both levels ("ce" or "margin").
  LogitLoss cls_loss = LogitLoss::kCrossEntropy;
  StepRule step_rule = StepRule::kAuto;
  // Scale poison gradients by the batch size, i.e. step on each sample's
  // own loss rather than on the batch mean (on by default for the AP family).
  bool per_sample_gradient = false;
  bool full_batch = false;
  bool balanced_batches = false;
  bool exclude_self = false;
  // Surrogate pretraining stops early at this training accuracy.
  double pretrain_target_accuracy = 0.995;

  // Table-style defaults for `method`.
  static AttackConfig defaults(Method method);
  // Throws Error naming the offending field.
  void validate() const;

  // Flat `key = value` form; parse(to_text()) round-trips. Keys starting
  // with `victim_` or `data_` are left to other readers of the file.
  [[nodiscard]] std::string to_text() const;
  static AttackConfig parse(std::string_view text, std::optional<Method> method = std::nullopt);
  static AttackConfig load(const std::filesystem::path& path,
                           std::optional<Method> method = std::nullopt);
};

struct EpochRecord {
  int epoch = 0;
  double attack_loss = 0.0;   // mean poison-level objective over the epoch's last inner steps
  double model_loss = 0.0;    // mean model-level objective over the epoch's model steps
  double cls_loss = 0.0;      // mean logit loss on D_delta at the end of the epoch
  double fc_loss = 0.0;       // mean feature-collision loss over the epoch's poison batches
  DistanceReport distance;
  double beta_mean = 0.0;
};

struct PoisonRun {
  PerturbationSet deltas;
  std::vector<EpochRecord> trajectory;
  PointNetClassifier surrogate;
  AttackConfig config;
  std::vector<double> betas;  // final per-sample beta
  // Running max over the run of each sample's ||grad_delta L_fc||_2
  // (empty for methods without a feature-collision term).
  std::vector<double> fc_grad_norm_max;

  // CSV with header epoch,attack_loss,chamfer_mean,hausdorff_mean,linf_max,beta_mean
  [[nodiscard]] std::string trajectory_csv() const;
};

// Called once per epoch (bi-level) or per batch (AP family).
using ProgressFn = std::function<void(const EpochRecord&)>;

// Componentwise clamp to [-epsilon, epsilon].
Offsets project_linf(const Offsets& delta, double epsilon);

struct PgdOptions {
  int steps = 10;
  double step_size = 0.015;
  StepMode mode = StepMode::kRawMin;
  // No projection when unset.
  std::optional<double> linf_epsilon;
  // Gradient of the batch mean (as written for the bi-level methods) or of
  // each sample's own loss (the per-sample loop of the AP family).
  bool per_sample_gradient = false;
  // When set (one entry per batch entry), receives the running max of the
  // l2 norm of the sample's gradient excluding the chamfer term, scaled as
  // a per-sample gradient.
  std::vector<double>* grad_norm_max = nullptr;
};

struct PgdResult {
  double first_value = 0.0;
  double last_value = 0.0;
  ObjectiveValue last;  // evaluation at the final step (before its update)
};

// Runs `options.steps` update steps on `deltas` (one Offsets per batch
// entry, updated in place). Throws NumericalError on a non-finite gradient.
PgdResult pgd_inner(const PointNetClassifier& model, const Objective& objective,
                    const Batch& batch, std::vector<Offsets*>& deltas, const PgdOptions& options);

// Multiplies the betas of samples whose loss is in the top `top_fraction`
// by `scale` and divides the rest, then clamps. Ties at the quantile
// boundary go to the top group.
std::vector<double> adaptive_beta_step(const std::vector<double>& per_sample_fc_loss,
                                       const std::vector<double>& betas, const AdaptiveBeta& rule);

PoisonRun attack_em(const LabeledDataset& dataset, const PointNetClassifier& model,
                    const AttackConfig& config, const ProgressFn& progress = {});
PoisonRun attack_reg_em(const LabeledDataset& dataset, const PointNetClassifier& model,
                        const AttackConfig& config, const ProgressFn& progress = {});
PoisonRun attack_fc_em(const LabeledDataset& dataset, const PointNetClassifier& model,
                       const AttackConfig& config, const ProgressFn& progress = {});
PoisonRun attack_ap(const LabeledDataset& dataset, const PointNetClassifier& model,
                    const AttackConfig& config, bool targeted, const ProgressFn& progress = {});
PoisonRun attack_reg_ap(const LabeledDataset& dataset, const PointNetClassifier& model,
                        const AttackConfig& config, bool targeted,
                        const ProgressFn& progress = {});
PoisonRun attack_fd_ap(const LabeledDataset& dataset, const PointNetClassifier& model,
                       const AttackConfig& config, bool targeted, const ProgressFn& progress = {});

// Dispatches on config.method; the surrogate is initialised from
// config.arch and config.seed.
PoisonRun run_attack(const LabeledDataset& dataset, const AttackConfig& config,
                     const ProgressFn& progress = {});

// Trains `model` on `dataset` (optionally perturbed) by minimising
// cross-entropy until `epochs` passes or the training accuracy target.
// Used for surrogate pretraining.
void pretrain_surrogate(PointNetClassifier& model, const LabeledDataset& dataset,
                        const AttackConfig& config);

}  // namespace pcpoison

#endif  // PCPOISON_ATTACKS_HPP_
