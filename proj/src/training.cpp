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

#include "pcpoison/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pcpoison/core.hpp"

namespace pcpoison {

double PlateauSchedule::step(double metric, double lr) {
  if (metric < best * (1.0 - threshold) || !std::isfinite(best)) {
    best = metric;
    bad_epochs = 0;
    return lr;
  }
  if (++bad_epochs > patience) {
    bad_epochs = 0;
    return std::max(lr * factor, min_lr);
  }
  return lr;
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw Error("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

void Optimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (!grad.allFinite()) throw NumericalError("non-finite parameter gradient");
  if (kind_ == OptimizerKind::kSgd) {
    params -= lr_ * grad;
    return;
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (m_.size() != params.size()) {
    m_ = Eigen::VectorXd::Zero(params.size());
    v_ = Eigen::VectorXd::Zero(params.size());
  }
  ++steps_;
  m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
  v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
}

}  // namespace pcpoison
