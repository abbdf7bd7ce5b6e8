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

#include "pcpoison/objective.hpp"

#include <algorithm>
#include <sstream>

#include "pcpoison/parallel.hpp"

namespace pcpoison {

std::string Objective::describe() const {
  std::ostringstream os;
  const char* name = logit_loss == LogitLoss::kCrossEntropy ? "ce"
                     : logit_loss == LogitLoss::kMargin     ? "margin"
                                                            : "none";
  os << logit_weight << "*" << name;
  if (fc_weight != 0.0) os << " + " << fc_weight << "*fc(t=" << fc.temperature << ")";
  if (beta != 0.0) os << " + " << beta << "*chamfer";
  return os.str();
}

Batch make_batch(const LabeledDataset& dataset, const PerturbationSet* deltas,
                 const std::vector<std::size_t>& indices) {
  Batch b;
  b.clean.reserve(indices.size());
  b.deltas.reserve(indices.size());
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= dataset.size()) throw Error("batch index out of range");
    b.clean.push_back(&dataset.clouds[i]);
    b.deltas.push_back(deltas ? &deltas->deltas[i] : nullptr);
    b.labels.push_back(dataset.labels[i]);
  }
  return b;
}

ObjectiveValue evaluate(const PointNetClassifier& model, const Objective& objective,
                        const Batch& batch, unsigned request) {
  const std::size_t n = batch.size();
  if (n == 0) throw Error("objective evaluated on an empty batch");
  if (batch.deltas.size() != n || batch.labels.size() != n) {
    throw Error("batch has mismatched clean/delta/label lengths");
  }
  if (!batch.betas.empty() && batch.betas.size() != n) {
    throw Error("batch has mismatched beta length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.deltas[i] && batch.deltas[i]->cols() != batch.clean[i]->cols()) {
      throw Error("offset shape does not match its point cloud");
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const bool want_params = (request & kParams) != 0;
  const bool want_inputs = (request & kInputs) != 0;

  std::vector<PointCloud> inputs(n);
  std::vector<PointNetClassifier::Trace> traces(n);
  parallel_for(n, [&](std::size_t i) {
    inputs[i] = batch.deltas[i] ? PointCloud(*batch.clean[i] + *batch.deltas[i]) : *batch.clean[i];
    traces[i] = model.forward_trace(inputs[i]);
  });

  ObjectiveValue out;
  std::vector<Eigen::VectorXd> dlogits(n, Eigen::VectorXd::Zero(model.num_classes()));
  if (objective.logit_loss != LogitLoss::kNone) {
    Eigen::VectorXd g;
    for (std::size_t i = 0; i < n; ++i) {
      const double l = objective.logit_loss == LogitLoss::kCrossEntropy
                           ? cross_entropy(traces[i].logits, batch.labels[i], &g)
                           : margin_loss(traces[i].logits, batch.labels[i], &g);
      out.logit_part += l;
      dlogits[i] = (objective.logit_weight * inv_n) * g;
    }
    out.logit_part *= inv_n;
  }

  Eigen::MatrixXd dfeatures;
  if (objective.uses_features()) {
    Eigen::MatrixXd features(model.feature_dim(), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) features.col(static_cast<Eigen::Index>(i)) = traces[i].features;
    out.fc_part = feature_collision_loss(features, batch.labels, objective.fc,
                                         (want_params || want_inputs) ? &dfeatures : nullptr,
                                         &out.fc_per_sample);
    if (dfeatures.size() > 0) dfeatures *= objective.fc_weight;
  }

  const bool split = want_inputs && (request & kSplitDistance) != 0;
  if (want_inputs) out.grad_inputs.resize(n);
  if (split) out.distance_grads.resize(n);
  out.chamfer_per_sample.assign(n, 0.0);
  // Parameter gradients are summed per fixed block of samples and the
  // blocks then in order, so the result does not depend on the thread count.
  const std::size_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<Eigen::VectorXd> partial(want_params ? blocks : 0);
  parallel_for(blocks, [&](std::size_t blk) {
    if (want_params) partial[blk] = Eigen::VectorXd::Zero(model.num_params());
    const std::size_t end = std::min(n, (blk + 1) * kReduceBlock);
    for (std::size_t i = blk * kReduceBlock; i < end; ++i) {
      const double beta = batch.betas.empty() ? objective.beta : batch.betas[i];
      Offsets* gx = nullptr;
      if (want_inputs) {
        out.grad_inputs[i] = Offsets::Zero(3, inputs[i].cols());
        gx = &out.grad_inputs[i];
      }
      if (batch.deltas[i]) {
        Offsets dchamfer;
        const bool need_grad = want_inputs && beta != 0.0;
        out.chamfer_per_sample[i] =
            chamfer_with_grad(inputs[i], *batch.clean[i], need_grad ? &dchamfer : nullptr);
        if (need_grad) {
          dchamfer *= beta * inv_n;
          *gx += dchamfer;
          if (split) out.distance_grads[i] = std::move(dchamfer);
        }
      }
      if (split && out.distance_grads[i].cols() == 0) {
        out.distance_grads[i] = Offsets::Zero(3, inputs[i].cols());
      }
      if (want_params || want_inputs) {
        Eigen::VectorXd df;
        if (dfeatures.size() > 0) df = dfeatures.col(static_cast<Eigen::Index>(i));
        model.backward(inputs[i], traces[i], dlogits[i], dfeatures.size() > 0 ? &df : nullptr,
                       want_params ? &partial[blk] : nullptr, gx);
      }
    }
  });
  if (want_params) {
    out.grad_params = Eigen::VectorXd::Zero(model.num_params());
    for (const auto& p : partial) out.grad_params += p;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double beta = batch.betas.empty() ? objective.beta : batch.betas[i];
    out.distance_part += beta * out.chamfer_per_sample[i] * inv_n;
  }
  out.total = objective.logit_weight * out.logit_part + objective.fc_weight * out.fc_part +
              out.distance_part;
  return out;
}

Eigen::VectorXd grad_params(const PointNetClassifier& model, const Objective& objective,
                            const Batch& batch) {
  return evaluate(model, objective, batch, kParams).grad_params;
}

std::vector<Offsets> grad_input(const PointNetClassifier& model, const Objective& objective,
                                const Batch& batch) {
  return evaluate(model, objective, batch, kInputs).grad_inputs;
}

double composite(const PointNetClassifier& model, const Objective& base, double beta,
                 const Batch& batch) {
  if (beta < 0.0) throw Error("beta must be non-negative");
  return evaluate(model, Objective::composite(base, beta), batch).total;
}

}  // namespace pcpoison
