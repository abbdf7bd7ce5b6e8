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

#include "pcpoison/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pcpoison/core.hpp"

namespace pcpoison {

namespace {

void check_label(const Eigen::VectorXd& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw Error("label " + std::to_string(label) + " outside [0, " +
                std::to_string(logits.size()) + ")");
  }
}

}  // namespace

double cross_entropy(const Eigen::VectorXd& logits, int label, Eigen::VectorXd* grad) {
  check_label(logits, label);
  const double top = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - top).exp().matrix();
  const double sum = e.sum();
  if (grad) {
    *grad = e / sum;
    (*grad)[label] -= 1.0;
  }
  return std::log(sum) + top - logits[label];
}

double margin_loss(const Eigen::VectorXd& logits, int label, Eigen::VectorXd* grad) {
  if (logits.size() < 2) throw Error("margin loss needs at least two classes");
  check_label(logits, label);
  Eigen::Index rival = -1;
  for (Eigen::Index t = 0; t < logits.size(); ++t) {
    if (t == label) continue;
    if (rival < 0 || logits[t] > logits[rival]) rival = t;
  }
  const double gap = logits[rival] - logits[label];
  if (grad) {
    grad->setZero(logits.size());
    if (gap > 0.0) {
      (*grad)[rival] = 1.0;
      (*grad)[label] = -1.0;
    }
  }
  return std::max(gap, 0.0);
}

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw Error("cosine similarity: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw Error("cosine similarity of a zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

double feature_collision_loss(const Eigen::MatrixXd& features, std::span<const int> labels,
                              const FeatureCollisionOptions& options, Eigen::MatrixXd* grad,
                              std::vector<double>* per_sample) {
  const Eigen::Index b = features.cols();
  if (b < 2) throw Error("feature collision loss needs a batch of at least two samples");
  if (static_cast<Eigen::Index>(labels.size()) != b) {
    throw Error("feature collision loss: label count does not match batch");
  }
  if (!(options.temperature > 0.0)) throw Error("temperature must be positive");
  const double inv_t = 1.0 / options.temperature;

  const Eigen::VectorXd norms = features.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < b; ++j) {
    if (!(norms[j] > 0.0)) {
      throw Error("feature collision loss: zero feature vector at batch index " +
                  std::to_string(j));
    }
  }
  Eigen::MatrixXd unit = features;
  for (Eigen::Index j = 0; j < b; ++j) unit.col(j) /= norms[j];
  const Eigen::MatrixXd sim = unit.transpose() * unit;

  // dloss/dsim, filled row by row.
  Eigen::MatrixXd dsim = Eigen::MatrixXd::Zero(b, b);
  if (per_sample) per_sample->assign(static_cast<std::size_t>(b), 0.0);
  double total = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < b; ++k) {
      if (options.exclude_self && k == j) continue;
      top = std::max(top, sim(j, k) * inv_t);
    }
    double all = 0.0;
    double same = 0.0;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(b);
    for (Eigen::Index k = 0; k < b; ++k) {
      if (options.exclude_self && k == j) continue;
      w[k] = std::exp(sim(j, k) * inv_t - top);
      all += w[k];
      if (labels[static_cast<std::size_t>(k)] == labels[static_cast<std::size_t>(j)]) same += w[k];
    }
    if (!(same > 0.0)) {
      throw Error("feature collision loss: sample " + std::to_string(j) +
                  " has no same-class partner in the batch");
    }
    const double term = std::log(all) - std::log(same);
    total += term;
    if (per_sample) (*per_sample)[static_cast<std::size_t>(j)] = term;
    if (grad) {
      for (Eigen::Index k = 0; k < b; ++k) {
        if (options.exclude_self && k == j) continue;
        const bool pos = labels[static_cast<std::size_t>(k)] == labels[static_cast<std::size_t>(j)];
        dsim(j, k) = inv_t * (w[k] / all - (pos ? w[k] / same : 0.0)) / static_cast<double>(b);
      }
    }
  }
  if (grad) {
    // sim = U^T U, so dU = U (dsim + dsim^T); then through u = g / |g|.
    const Eigen::MatrixXd dunit = unit * (dsim + dsim.transpose());
    grad->resize(features.rows(), b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const Eigen::VectorXd u = unit.col(j);
      grad->col(j) = (dunit.col(j) - u * u.dot(dunit.col(j))) / norms[j];
    }
  }
  return total / static_cast<double>(b);
}

}  // namespace pcpoison
