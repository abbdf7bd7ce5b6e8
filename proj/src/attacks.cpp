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

#include "pcpoison/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pcpoison/io.hpp"
#include "pcpoison/random.hpp"

namespace pcpoison {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kTagInit = 1,
  kTagModelBatches = 2,
  kTagPoisonBatches = 3,
  kTagPretrain = 4,
  kTagApBatches = 5,
};

using Batches = std::vector<std::vector<std::size_t>>;

// Splits a seeded order of [0, N) into batches of `size`. A trailing
// singleton is merged into the previous batch when `pairs` is set, since
// the collision loss needs two samples.
Batches epoch_batches(const LabeledDataset& data, int size, std::uint64_t seed, bool full,
                      bool balanced, bool pairs) {
  const std::size_t n = data.size();
  Batches out;
  if (full) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    out.push_back(std::move(all));
    return out;
  }
  std::vector<std::size_t> order;
  if (balanced) {
    // Round-robin over classes, each class shuffled.
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
    for (std::size_t i : permutation(n, seed)) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    for (std::size_t r = 0; order.size() < n; ++r) {
      for (const auto& members : by_class) {
        if (r < members.size()) order.push_back(members[r]);
      }
    }
  } else {
    order = permutation(n, seed);
  }
  const auto b = static_cast<std::size_t>(size);
  for (std::size_t start = 0; start < n; start += b) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
  }
  if (pairs && out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

// The batches used for `steps` updates (0 = one pass), cycling if needed.
std::vector<const std::vector<std::size_t>*> take(const Batches& batches, int steps) {
  std::vector<const std::vector<std::size_t>*> out;
  const std::size_t count = steps == 0 ? batches.size() : static_cast<std::size_t>(steps);
  for (std::size_t k = 0; k < count; ++k) out.push_back(&batches[k % batches.size()]);
  return out;
}

StepMode step_mode(const AttackConfig& c, bool maximize) {
  bool sign = is_linf_constrained(c.method);
  if (c.step_rule == StepRule::kSign) sign = true;
  if (c.step_rule == StepRule::kRaw) sign = false;
  if (sign) return maximize ? StepMode::kSignMax : StepMode::kSignMin;
  return maximize ? StepMode::kRawMax : StepMode::kRawMin;
}

Objective logit_objective(LogitLoss loss) {
  Objective o;
  o.logit_loss = loss;
  return o;
}

double mean_logit_loss(const PointNetClassifier& model, const LabeledDataset& data,
                       const PerturbationSet* deltas, LogitLoss loss) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return evaluate(model, logit_objective(loss), make_batch(data, deltas, all)).logit_part;
}

double training_accuracy(const PointNetClassifier& model, const LabeledDataset& data) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Eigen::Index arg = 0;
    model.forward(data.clouds[i]).logits.maxCoeff(&arg);
    correct += static_cast<int>(arg) == data.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Stores the offsets as float32 (the file format) and, for l-inf methods,
// keeps every stored component inside the budget.
void finalize(PerturbationSet& deltas, std::optional<double> epsilon) {
  round_to_float(&deltas);
  if (!epsilon) return;
  const auto bound = static_cast<float>(*epsilon);
  const float inside = static_cast<double>(bound) > *epsilon ? std::nextafter(bound, 0.0f) : bound;
  for (auto& d : deltas.deltas) {
    for (Eigen::Index k = 0; k < d.size(); ++k) {
      if (d.data()[k] > *epsilon) d.data()[k] = inside;
      if (d.data()[k] < -*epsilon) d.data()[k] = -inside;
    }
  }
}

void check_dataset(const LabeledDataset& dataset, const PointNetClassifier& model) {
  dataset.validate();
  if (dataset.empty()) throw Error("attack on an empty dataset");
  if (dataset.num_classes != model.num_classes()) {
    throw Error("dataset has " + std::to_string(dataset.num_classes) + " classes but the model has " +
                std::to_string(model.num_classes()));
  }
}

enum class Family { kEm, kRegEm, kFcEm };

PoisonRun bilevel(const LabeledDataset& data, const PointNetClassifier& init,
                  const AttackConfig& config, Family family, const ProgressFn& progress) {
  config.validate();
  check_dataset(data, init);
  const std::size_t n = data.size();
  PoisonRun run{PerturbationSet::zeros_like(data), {}, init, config, {}, {}};
  run.betas.assign(n, config.beta);
  const bool fc = family == Family::kFcEm;
  if (fc) run.fc_grad_norm_max.assign(n, 0.0);

  PointNetClassifier& model = run.surrogate;
  Optimizer opt(config.optimizer, config.model_lr);
  PlateauSchedule schedule = config.schedule;

  // The chamfer term is constant in theta, so the model level only needs
  // the logit loss.
  const Objective model_obj = logit_objective(config.cls_loss);
  Objective poison_obj;
  PgdOptions pgd;
  pgd.steps = config.attack_steps;
  pgd.step_size = config.poison_lr;
  pgd.mode = step_mode(config, false);
  pgd.per_sample_gradient = config.per_sample_gradient;
  switch (family) {
    case Family::kEm:
      poison_obj = logit_objective(config.cls_loss);
      pgd.linf_epsilon = config.epsilon;
      break;
    case Family::kRegEm:
      poison_obj = Objective::composite(logit_objective(config.cls_loss), config.beta);
      break;
    case Family::kFcEm:
      poison_obj = Objective::composite(Objective::feature_collision(config.temperature), config.beta);
      poison_obj.fc.exclude_self = config.exclude_self;
      break;
  }

  std::vector<double> fc_loss(n, 0.0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    const Batches model_batches = epoch_batches(data, config.batch_size,
                                                derive_seed(config.seed, {kTagModelBatches, e}),
                                                config.full_batch, config.balanced_batches, false);
    std::vector<double> model_losses;
    for (const auto* idx : take(model_batches, config.model_steps)) {
      const ObjectiveValue v = evaluate(model, model_obj, make_batch(data, &run.deltas, *idx), kParams);
      opt.step(model.mutable_params(), v.grad_params);
      model_losses.push_back(v.total);
    }
    opt.set_lr(schedule.step(mean(model_losses), opt.lr()));

    const Batches poison_batches = epoch_batches(data, config.batch_size,
                                                 derive_seed(config.seed, {kTagPoisonBatches, e}),
                                                 config.full_batch, config.balanced_batches, fc);
    std::vector<double> attack_losses;
    std::vector<double> fc_losses;
    for (const auto* idx : take(poison_batches, config.poison_steps)) {
      Batch batch = make_batch(data, nullptr, *idx);
      std::vector<Offsets*> ptrs;
      std::vector<double> norms(idx->size(), 0.0);
      for (std::size_t k = 0; k < idx->size(); ++k) {
        ptrs.push_back(&run.deltas.deltas[(*idx)[k]]);
        batch.betas.push_back(run.betas[(*idx)[k]]);
      }
      pgd.grad_norm_max = fc ? &norms : nullptr;
      const PgdResult r = pgd_inner(model, poison_obj, batch, ptrs, pgd);
      attack_losses.push_back(r.last_value);
      if (fc) {
        fc_losses.push_back(r.last.fc_part);
        for (std::size_t k = 0; k < idx->size(); ++k) {
          const std::size_t i = (*idx)[k];
          fc_loss[i] = r.last.fc_per_sample[k];
          run.fc_grad_norm_max[i] = std::max(run.fc_grad_norm_max[i], norms[k]);
        }
      }
    }
    if (fc && config.adaptive_beta.enabled) {
      run.betas = adaptive_beta_step(fc_loss, run.betas, config.adaptive_beta);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.attack_loss = mean(attack_losses);
    rec.model_loss = mean(model_losses);
    rec.cls_loss = mean_logit_loss(model, data, &run.deltas, config.cls_loss);
    rec.fc_loss = mean(fc_losses);
    rec.distance = distance_report(data, run.deltas);
    rec.beta_mean = mean(run.betas);
    run.trajectory.push_back(rec);
    if (progress) progress(rec);
  }
  finalize(run.deltas, pgd.linf_epsilon);
  return run;
}

// Shared driver of the error-maximising family: pretrain, then one pass
// of per-batch inner optimisation against the frozen surrogate.
PoisonRun single_pass(const LabeledDataset& data, const PointNetClassifier& init,
                      const AttackConfig& config, const Objective& objective, bool maximize,
                      bool targeted, std::optional<double> epsilon, const ProgressFn& progress) {
  config.validate();
  check_dataset(data, init);
  PoisonRun run{PerturbationSet::zeros_like(data), {}, init, config, {}, {}};
  pretrain_surrogate(run.surrogate, data, config);
  run.betas.assign(data.size(), config.beta);

  LabeledDataset attack_view;
  const LabeledDataset* labels = &data;
  if (targeted) {
    attack_view.clouds = data.clouds;
    attack_view.num_classes = data.num_classes;
    for (int y : data.labels) attack_view.labels.push_back(config.target(y, data.num_classes));
    labels = &attack_view;
  }

  PgdOptions pgd;
  pgd.steps = config.attack_steps;
  pgd.step_size = config.poison_lr;
  pgd.mode = step_mode(config, maximize);
  pgd.linf_epsilon = epsilon;
  pgd.per_sample_gradient = config.per_sample_gradient;

  const bool pairs = objective.uses_features();
  const Batches batches = epoch_batches(data, config.batch_size,
                                        derive_seed(config.seed, {kTagApBatches}), config.full_batch,
                                        config.balanced_batches, pairs);
  std::vector<double> attack_losses;
  std::vector<double> fc_losses;
  for (const auto& idx : batches) {
    Batch batch = make_batch(*labels, nullptr, idx);
    std::vector<Offsets*> ptrs;
    for (std::size_t i : idx) ptrs.push_back(&run.deltas.deltas[i]);
    const PgdResult r = pgd_inner(run.surrogate, objective, batch, ptrs, pgd);
    attack_losses.push_back(r.last_value);
    if (pairs) fc_losses.push_back(r.last.fc_part);
  }
  finalize(run.deltas, epsilon);

  EpochRecord rec;
  rec.epoch = 1;
  rec.attack_loss = mean(attack_losses);
  rec.cls_loss = mean_logit_loss(run.surrogate, data, &run.deltas, LogitLoss::kCrossEntropy);
  rec.fc_loss = mean(fc_losses);
  rec.distance = distance_report(data, run.deltas);
  rec.beta_mean = config.beta;
  run.trajectory.push_back(rec);
  if (progress) progress(rec);
  return run;
}

}  // namespace

std::string PoisonRun::trajectory_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,attack_loss,chamfer_mean,hausdorff_mean,linf_max,beta_mean\n";
  for (const auto& r : trajectory) {
    os << r.epoch << ',' << r.attack_loss << ',' << r.distance.chamfer_mean << ','
       << r.distance.hausdorff_mean << ',' << r.distance.linf_max << ',' << r.beta_mean << '\n';
  }
  return os.str();
}

Offsets project_linf(const Offsets& delta, double epsilon) {
  if (!(epsilon > 0.0)) throw Error("l-inf budget must be positive");
  return delta.cwiseMax(-epsilon).cwiseMin(epsilon);
}

PgdResult pgd_inner(const PointNetClassifier& model, const Objective& objective,
                    const Batch& batch, std::vector<Offsets*>& deltas, const PgdOptions& options) {
  const std::size_t b = batch.size();
  if (deltas.size() != b) throw Error("pgd: one offset array per batch entry required");
  if (options.steps < 0) throw Error("pgd: negative step count");
  if (options.linf_epsilon && !(*options.linf_epsilon > 0.0)) throw Error("l-inf budget must be positive");
  if (options.grad_norm_max && options.grad_norm_max->size() != b) {
    throw Error("pgd: grad_norm_max must have one entry per batch entry");
  }
  Batch view = batch;
  for (std::size_t i = 0; i < b; ++i) {
    if (!deltas[i] || deltas[i]->cols() != batch.clean[i]->cols()) {
      throw Error("pgd: offsets not shape-aligned with the batch");
    }
    view.deltas[i] = deltas[i];
  }
  const double scale = options.per_sample_gradient ? static_cast<double>(b) : 1.0;
  const bool sign = options.mode == StepMode::kSignMin || options.mode == StepMode::kSignMax;
  const bool ascend = options.mode == StepMode::kSignMax || options.mode == StepMode::kRawMax;
  const unsigned request = kInputs | (options.grad_norm_max ? kSplitDistance : 0u);

  PgdResult result;
  if (options.steps == 0) {
    result.last = evaluate(model, objective, view);
    result.first_value = result.last_value = result.last.total;
    return result;
  }
  for (int s = 0; s < options.steps; ++s) {
    ObjectiveValue v = evaluate(model, objective, view, request);
    if (s == 0) result.first_value = v.total;
    result.last_value = v.total;
    for (std::size_t i = 0; i < b; ++i) {
      Offsets& g = v.grad_inputs[i];
      if (!g.allFinite()) {
        throw NumericalError("non-finite input gradient at pgd step " + std::to_string(s) +
                             ", batch entry " + std::to_string(i));
      }
      if (options.grad_norm_max) {
        const double norm = scale * (g - v.distance_grads[i]).norm();
        (*options.grad_norm_max)[i] = std::max((*options.grad_norm_max)[i], norm);
      }
      Offsets step = sign ? Offsets(g.array().sign()) : Offsets(scale * g);
      Offsets& d = *deltas[i];
      if (ascend) d += options.step_size * step;
      else d -= options.step_size * step;
      if (options.linf_epsilon) d = project_linf(d, *options.linf_epsilon);
    }
    if (s + 1 == options.steps) {
      v.grad_inputs.clear();
      v.distance_grads.clear();
      result.last = std::move(v);
    }
  }
  return result;
}

std::vector<double> adaptive_beta_step(const std::vector<double>& per_sample_fc_loss,
                                       const std::vector<double>& betas, const AdaptiveBeta& rule) {
  if (per_sample_fc_loss.size() != betas.size()) throw Error("adaptive beta: length mismatch");
  if (betas.empty()) return {};
  std::vector<double> sorted = per_sample_fc_loss;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto top = static_cast<std::size_t>(
      std::ceil(rule.top_fraction * static_cast<double>(sorted.size()) - 1e-12));
  const double threshold = sorted[std::clamp<std::size_t>(top, 1, sorted.size()) - 1];
  std::vector<double> out(betas.size());
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const double b = per_sample_fc_loss[i] >= threshold ? betas[i] * rule.scale : betas[i] / rule.scale;
    out[i] = std::clamp(b, rule.min_beta, rule.max_beta);
  }
  return out;
}

void pretrain_surrogate(PointNetClassifier& model, const LabeledDataset& dataset,
                        const AttackConfig& config) {
  Optimizer opt(config.optimizer, config.model_lr);
  PlateauSchedule schedule = config.schedule;
  const Objective ce = Objective::cross_entropy();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const Batches batches = epoch_batches(
        dataset, config.batch_size,
        derive_seed(config.seed, {kTagPretrain, static_cast<std::uint64_t>(epoch)}), false, false,
        false);
    std::vector<double> losses;
    for (const auto& idx : batches) {
      const ObjectiveValue v = evaluate(model, ce, make_batch(dataset, nullptr, idx), kParams);
      opt.step(model.mutable_params(), v.grad_params);
      losses.push_back(v.total);
    }
    opt.set_lr(schedule.step(mean(losses), opt.lr()));
    if (training_accuracy(model, dataset) >= config.pretrain_target_accuracy) break;
  }
}

PoisonRun attack_em(const LabeledDataset& dataset, const PointNetClassifier& model,
                    const AttackConfig& config, const ProgressFn& progress) {
  return bilevel(dataset, model, config, Family::kEm, progress);
}

PoisonRun attack_reg_em(const LabeledDataset& dataset, const PointNetClassifier& model,
                        const AttackConfig& config, const ProgressFn& progress) {
  return bilevel(dataset, model, config, Family::kRegEm, progress);
}

PoisonRun attack_fc_em(const LabeledDataset& dataset, const PointNetClassifier& model,
                       const AttackConfig& config, const ProgressFn& progress) {
  return bilevel(dataset, model, config, Family::kFcEm, progress);
}

PoisonRun attack_ap(const LabeledDataset& dataset, const PointNetClassifier& model,
                    const AttackConfig& config, bool targeted, const ProgressFn& progress) {
  // Untargeted ascends CE(y); targeted descends CE(tau(y)).
  return single_pass(dataset, model, config, Objective::cross_entropy(), !targeted, targeted,
                     config.epsilon, progress);
}

PoisonRun attack_reg_ap(const LabeledDataset& dataset, const PointNetClassifier& model,
                        const AttackConfig& config, bool targeted, const ProgressFn& progress) {
  // Ascending CE - beta * chamfer, or descending CE(tau) + beta * chamfer.
  Objective o = Objective::cross_entropy();
  o.beta = targeted ? config.beta : -config.beta;
  return single_pass(dataset, model, config, o, !targeted, targeted, std::nullopt, progress);
}

PoisonRun attack_fd_ap(const LabeledDataset& dataset, const PointNetClassifier& model,
                       const AttackConfig& config, bool targeted, const ProgressFn& progress) {
  Objective o = Objective::cross_entropy();
  o.fc_weight = config.zeta;
  o.fc.temperature = config.temperature;
  o.fc.exclude_self = config.exclude_self;
  o.beta = targeted ? config.beta : -config.beta;
  return single_pass(dataset, model, config, o, !targeted, targeted, std::nullopt, progress);
}

PoisonRun run_attack(const LabeledDataset& dataset, const AttackConfig& config,
                     const ProgressFn& progress) {
  config.validate();
  const PointNetClassifier model = PointNetClassifier::init(
      derive_seed(config.seed, {kTagInit}), ArchDescriptor::named(config.arch, dataset.num_classes));
  switch (config.method) {
    case Method::kEm: return attack_em(dataset, model, config, progress);
    case Method::kRegEm: return attack_reg_em(dataset, model, config, progress);
    case Method::kFcEm: return attack_fc_em(dataset, model, config, progress);
    case Method::kAp: return attack_ap(dataset, model, config, false, progress);
    case Method::kApT: return attack_ap(dataset, model, config, true, progress);
    case Method::kRegAp: return attack_reg_ap(dataset, model, config, false, progress);
    case Method::kRegApT: return attack_reg_ap(dataset, model, config, true, progress);
    case Method::kFdAp: return attack_fd_ap(dataset, model, config, false, progress);
    case Method::kFdApT: return attack_fd_ap(dataset, model, config, true, progress);
  }
  throw Error("unhandled method");
}

}  // namespace pcpoison
