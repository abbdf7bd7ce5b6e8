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

// Scalar losses on logits and features. Every function optionally writes
// the gradient with respect to its vector input.

#ifndef PCPOISON_LOSSES_HPP_
#define PCPOISON_LOSSES_HPP_

#include <span>
#include <vector>

#include <Eigen/Core>

namespace pcpoison {

inline constexpr double kDefaultTemperature = 0.1;

// -log softmax(logits)[label], log-sum-exp stabilised.
double cross_entropy(const Eigen::VectorXd& logits, int label,
                     Eigen::VectorXd* grad = nullptr);

// max(max_{t != y} logits[t] - logits[y], 0). The gradient is zero on the
// kink (loss exactly 0).
double margin_loss(const Eigen::VectorXd& logits, int label, Eigen::VectorXd* grad = nullptr);

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct FeatureCollisionOptions {
  double temperature = kDefaultTemperature;
  // Drop the k == j pair from both sums (off by default).
  bool exclude_self = false;
};

// Class-wise feature collision loss over a batch. `features` holds one
// feature vector per column. For sample j the term is
//   -log( sum_{k: y_k = y_j} exp(s_jk / t) / sum_k exp(s_jk / t) )
// with s the cosine similarity and k ranging over the whole batch; the
// result is the mean over j. `per_sample` (optional) receives each term and
// `grad` (optional) d(loss)/d(features).
double feature_collision_loss(const Eigen::MatrixXd& features, std::span<const int> labels,
                              const FeatureCollisionOptions& options = {},
                              Eigen::MatrixXd* grad = nullptr,
                              std::vector<double>* per_sample = nullptr);

}  // namespace pcpoison

#endif  // PCPOISON_LOSSES_HPP_
