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

// Empirical checks of the degeneracy and separability results.

#ifndef PCPOISON_ANALYSIS_HPP_
#define PCPOISON_ANALYSIS_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pcpoison/attacks.hpp"
#include "pcpoison/core.hpp"
#include "pcpoison/harness.hpp"
#include "pcpoison/model.hpp"

namespace pcpoison {

// ---- Perturbation lower bound --------------------------------------------

struct BoundInputs {
  double lipschitz = 0.0;  // L
  double beta = 0.0;
  double gap = 0.0;        // Delta = L2(theta*, 0) - L2(theta*, delta*)
};

// (L - sqrt(L^2 - 8 beta Delta)) / (4 beta); 0 when Delta <= 0. Throws
// when L^2 < 8 beta Delta.
double theorem2_bound(const BoundInputs& in);

struct Theorem2Check {
  double lipschitz = 0.0;
  double beta = 0.0;
  double loss_clean = 0.0;     // L2(theta*, 0)
  double loss_poisoned = 0.0;  // L2(theta*, delta*)
  double gap = 0.0;
  bool defined = false;
  double bound = 0.0;
  double max_l2 = 0.0;         // max_i ||delta_i||_2 over covered samples
  std::size_t covered = 0;     // samples whose per-point offsets stay under half the point gap
  std::size_t total = 0;
  bool pass = false;
  std::string diagnostic;
};

// Evaluates the bound at the end of an fc-em run. The loss is the
// collision loss plus beta * chamfer over the whole dataset as one batch.
Theorem2Check theorem2_check(const LabeledDataset& clean, const PoisonRun& run);

// ---- Gap inequality for matched-loss bi-level poisons --------------------

// Returns min over training of the mean logit loss on `data` for one seed.
using MinLossTrainer = std::function<double(const LabeledDataset& data, std::uint64_t seed)>;

// Trains `config.arch` from scratch on `data` minimising config.cls_loss
// (full batch when config.full_batch, else config.batch_size) for
// config.epochs epochs and returns the lowest mean loss seen.
MinLossTrainer make_min_loss_trainer(const AttackConfig& config);

struct Theorem1Report {
  bool applicable = true;
  bool converged = true;
  double beta = 0.0;
  double mean_chamfer = 0.0;
  double lhs = 0.0;                 // beta * mean chamfer
  std::vector<double> clean_restarts;
  double min_clean_loss = 0.0;      // min_theta L_cls(D)
  double min_poisoned_loss = 0.0;   // the run's final loss on D_delta
  double rhs = 0.0;
  double tolerance = 1e-3;
  bool pass = false;
  std::string diagnostic;
};

// Needs an em or reg-em run whose attack loss changed by at most 1% over
// its last epoch; otherwise reports not applicable / not converged.
Theorem1Report theorem1_gap_check(const LabeledDataset& clean, const PoisonRun& run,
                                  const MinLossTrainer& trainer, int restarts = 3);

// ---- Linear-separability construction ------------------------------------

struct SeparabilityInstance {
  std::vector<Eigen::VectorXd> x;  // points in [-1, 1]^d
  std::vector<int> y;
  LinearClassifier w;              // rows of norm sqrt(d)
};

struct Theorem3Certificate {
  double gamma = 0.0;
  double alpha_hat = 0.0;          // mean margin loss of W on the clean points
  std::vector<double> betas;
  bool separable = false;
  double mean_chamfer = 0.0;       // each sample viewed as a one-point cloud in R^d
  double bound = 0.0;              // 32 alpha_hat / (1 - gamma)^2
  bool within_bound = false;
  [[nodiscard]] bool pass() const { return separable && within_bound; }
};

// A random instance: N in [4, 20] points in [-1, 1]^d with d in [2, 8] and
// 2 to 4 classes. W comes from direct subgradient training on the margin
// loss, rows rescaled to norm sqrt(d); draws whose rows end up with cosine
// above `max_gamma` are repeated.
SeparabilityInstance random_separability_instance(std::uint64_t seed, double max_gamma = 0.9);

// delta_i = beta_i W_{y_i} with beta_i = (1 + slack) L_i / (d (1 - gamma)).
std::pair<std::vector<Eigen::VectorXd>, Theorem3Certificate> theorem3_construct(
    const SeparabilityInstance& instance, double slack = 1e-3);

// ---- Sweeps and diagnostics -----------------------------------------------

struct SweepRow {
  double beta = 0.0;
  double accuracy = 0.0;
  double chamfer = 0.0;
  double hausdorff = 0.0;
  PerturbationSet deltas;
  EvalReport report;
};

// One poison run and one victim per beta (cells run concurrently).
std::vector<SweepRow> beta_sweep(const LabeledDataset& train, const LabeledDataset& test,
                                 const AttackConfig& attack, const TrainConfig& victim,
                                 const std::vector<double>& betas);

// beta,acc,chamfer,hausdorff
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

[[nodiscard]] bool non_decreasing(const std::vector<double>& v);
[[nodiscard]] bool non_increasing(const std::vector<double>& v);

struct DivergenceProbe {
  std::vector<double> cross_entropy;   // per epoch, on fixed training batches
  std::vector<double> feature_collision;
  bool checked = false;                // false for runs shorter than two epochs
  bool ce_converged = false;           // final <= 0.1 * initial
  bool fc_stalled = false;             // final >= 0.5 * initial
  [[nodiscard]] bool pass() const { return !checked || (ce_converged && fc_stalled); }
  // epoch,cross_entropy,feature_collision
  [[nodiscard]] std::string csv() const;
};

// Clean training while logging cross-entropy and the collision loss.
DivergenceProbe fc_loss_divergence_probe(const LabeledDataset& train, const TrainConfig& config,
                                         int fc_batch_size = 128,
                                         double temperature = kDefaultTemperature);

// Mean pairwise head-row cosine per named model.
std::map<std::string, double> cosine_diagnostic(
    const std::map<std::string, const PointNetClassifier*>& models);

}  // namespace pcpoison

#endif  // PCPOISON_ANALYSIS_HPP_
