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

#ifndef PCPOISON_OBJECTIVE_HPP_
#define PCPOISON_OBJECTIVE_HPP_

#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcpoison/core.hpp"
#include "pcpoison/losses.hpp"
#include "pcpoison/model.hpp"

namespace pcpoison {

enum class LogitLoss { kNone, kCrossEntropy, kMargin };

// A weighted sum of batch-mean losses evaluated on x + delta:
//
//   logit_weight * mean_i logit_loss(f(x_i + d_i), y_i)
//     + fc_weight * feature_collision(g(x + d), y)
//     + mean_i beta_i * chamfer(x_i + d_i, x_i)
//
// Every loss the attacks and the trainer optimise is one of these.
struct Objective {
  LogitLoss logit_loss = LogitLoss::kCrossEntropy;
  double logit_weight = 1.0;
  double fc_weight = 0.0;
  FeatureCollisionOptions fc;
  // Chamfer weight; a batch may override it per sample.
  double beta = 0.0;

  static Objective cross_entropy() { return {}; }
  static Objective margin() {
    Objective o;
    o.logit_loss = LogitLoss::kMargin;
    return o;
  }
  static Objective feature_collision(double temperature = kDefaultTemperature) {
    Objective o;
    o.logit_loss = LogitLoss::kNone;
    o.logit_weight = 0.0;
    o.fc_weight = 1.0;
    o.fc.temperature = temperature;
    return o;
  }
  // `base` plus beta * chamfer.
  static Objective composite(Objective base, double beta) {
    base.beta = beta;
    return base;
  }

  [[nodiscard]] bool uses_features() const { return fc_weight != 0.0; }
  [[nodiscard]] std::string describe() const;
};

// A mini-batch view. `deltas` entries may be null (zero offset); `betas`
// when non-empty overrides Objective::beta per sample.
struct Batch {
  std::vector<const PointCloud*> clean;
  std::vector<const Offsets*> deltas;
  std::vector<int> labels;
  std::vector<double> betas;

  [[nodiscard]] std::size_t size() const { return clean.size(); }
};

Batch make_batch(const LabeledDataset& dataset, const PerturbationSet* deltas,
                 const std::vector<std::size_t>& indices);

struct ObjectiveValue {
  double total = 0.0;
  double logit_part = 0.0;    // mean logit loss, unweighted
  double fc_part = 0.0;       // feature collision loss, unweighted
  double distance_part = 0.0; // mean beta_i * chamfer_i
  std::vector<double> fc_per_sample;
  std::vector<double> chamfer_per_sample;
  Eigen::VectorXd grad_params;          // empty unless requested
  std::vector<Offsets> grad_inputs;     // empty unless requested
  // The chamfer term's share of grad_inputs (kSplitDistance only).
  std::vector<Offsets> distance_grads;
};

enum GradRequest : unsigned { kValueOnly = 0, kParams = 1, kInputs = 2, kSplitDistance = 4 };

ObjectiveValue evaluate(const PointNetClassifier& model, const Objective& objective,
                        const Batch& batch, unsigned request = kValueOnly);

// Gradient of the objective with respect to the parameters.
Eigen::VectorXd grad_params(const PointNetClassifier& model, const Objective& objective,
                            const Batch& batch);

// Gradient with respect to each sample's points (equivalently its offsets).
std::vector<Offsets> grad_input(const PointNetClassifier& model, const Objective& objective,
                                const Batch& batch);

// base(x + delta) + beta * chamfer(x + delta, x), batch mean.
double composite(const PointNetClassifier& model, const Objective& base, double beta,
                 const Batch& batch);

}  // namespace pcpoison

#endif  // PCPOISON_OBJECTIVE_HPP_
