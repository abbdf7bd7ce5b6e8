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

#ifndef PCPOISON_TRAINING_HPP_
#define PCPOISON_TRAINING_HPP_

#include <limits>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "pcpoison/model.hpp"

namespace pcpoison {

// Halves (by default) the learning rate once the monitored metric has not
// improved by a relative `threshold` for more than `patience` calls.
struct PlateauSchedule {
  double factor = 0.5;
  int patience = 10;
  double min_lr = 1e-6;
  double threshold = 1e-4;

  // Feeds one metric value; returns the (possibly reduced) learning rate.
  double step(double metric, double lr);

  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
};

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

// Gradient-descent update rule over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

  [[nodiscard]] double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  [[nodiscard]] OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  double lr_;
  long steps_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

}  // namespace pcpoison

#endif  // PCPOISON_TRAINING_HPP_
