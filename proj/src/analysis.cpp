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

#include "pcpoison/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "pcpoison/losses.hpp"
#include "pcpoison/objective.hpp"
#include "pcpoison/parallel.hpp"
#include "pcpoison/random.hpp"

namespace pcpoison {

namespace {

enum : std::uint64_t { kTagRestart = 31, kTagRestartInit = 32, kTagRestartBatches = 33,
                       kTagProbeBatches = 34 };

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order = all_indices(v.size());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double theorem2_bound(const BoundInputs& in) {
  if (!(in.lipschitz > 0.0)) throw Error("Lipschitz estimate must be positive");
  if (!(in.beta > 0.0)) throw Error("beta must be positive");
  if (in.gap <= 0.0) return 0.0;
  const double disc = in.lipschitz * in.lipschitz - 8.0 * in.beta * in.gap;
  if (disc < 0.0) throw Error("bound undefined: gap too large for Lipschitz estimate");
  return (in.lipschitz - std::sqrt(disc)) / (4.0 * in.beta);
}

Theorem2Check theorem2_check(const LabeledDataset& clean, const PoisonRun& run) {
  Theorem2Check c;
  c.total = clean.size();
  if (run.config.method != Method::kFcEm || run.fc_grad_norm_max.size() != clean.size()) {
    c.diagnostic = "not applicable: needs an fc-em run on this dataset";
    return c;
  }
  check_aligned(clean, run.deltas);
  Objective obj = Objective::composite(Objective::feature_collision(run.config.temperature), 0.0);
  obj.fc.exclude_self = run.config.exclude_self;
  const auto idx = all_indices(clean.size());
  Batch batch = make_batch(clean, nullptr, idx);
  batch.betas = run.betas;
  c.loss_clean = evaluate(run.surrogate, obj, batch).total;
  Batch poisoned = make_batch(clean, &run.deltas, idx);
  poisoned.betas = run.betas;
  c.loss_poisoned = evaluate(run.surrogate, obj, poisoned).total;
  c.gap = c.loss_clean - c.loss_poisoned;
  c.lipschitz = *std::max_element(run.fc_grad_norm_max.begin(), run.fc_grad_norm_max.end());
  c.beta = std::accumulate(run.betas.begin(), run.betas.end(), 0.0) / static_cast<double>(run.betas.size());

  double max_all = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Offsets& d = run.deltas.deltas[i];
    const double l2 = d.norm();
    max_all = std::max(max_all, l2);
    if (d.colwise().norm().maxCoeff() < 0.5 * min_pairwise_gap(clean.clouds[i])) {
      ++c.covered;
      c.max_l2 = std::max(c.max_l2, l2);
    }
  }
  std::ostringstream diag;
  diag << "coverage " << c.covered << "/" << c.total;
  if (c.covered == 0) {
    c.max_l2 = max_all;
    diag << " (no sample meets the offset condition; using all samples)";
  }
  if (!(c.lipschitz > 0.0)) {
    diag << "; zero gradient along the run";
    c.diagnostic = diag.str();
    return c;
  }
  try {
    c.bound = theorem2_bound({c.lipschitz, c.beta, c.gap});
    c.defined = true;
  } catch (const Error& e) {
    diag << "; skipped: " << e.what();
    c.diagnostic = diag.str();
    return c;
  }
  c.pass = c.max_l2 >= c.bound - 1e-6;
  c.diagnostic = diag.str();
  return c;
}

MinLossTrainer make_min_loss_trainer(const AttackConfig& config) {
  return [config](const LabeledDataset& data, std::uint64_t seed) {
    PointNetClassifier model = PointNetClassifier::init(
        derive_seed(seed, {kTagRestartInit}), ArchDescriptor::named(config.arch, data.num_classes));
    Objective obj;
    obj.logit_loss = config.cls_loss;
    Optimizer opt(config.optimizer, config.model_lr);
    PlateauSchedule schedule = config.schedule;
    const auto all = all_indices(data.size());
    const Batch full = make_batch(data, nullptr, all);
    double best = evaluate(model, obj, full).total;
    const std::size_t b = config.full_batch ? data.size() : static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
      const auto order = permutation(data.size(),
                                     derive_seed(seed, {kTagRestartBatches, static_cast<std::uint64_t>(epoch)}));
      for (std::size_t start = 0; start < order.size(); start += b) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + b)));
        opt.step(model.mutable_params(), grad_params(model, obj, make_batch(data, nullptr, idx)));
      }
      const double loss = evaluate(model, obj, full).total;
      best = std::min(best, loss);
      opt.set_lr(schedule.step(loss, opt.lr()));
      if (best == 0.0) break;
    }
    return best;
  };
}

Theorem1Report theorem1_gap_check(const LabeledDataset& clean, const PoisonRun& run,
                                  const MinLossTrainer& trainer, int restarts) {
  Theorem1Report r;
  r.beta = run.config.beta;
  if (run.config.method != Method::kRegEm) {
    r.applicable = false;
    r.diagnostic = run.config.method == Method::kFcEm || run.config.method == Method::kFdAp ||
                           run.config.method == Method::kFdApT
                       ? "not applicable: mixed objectives"
                       : "not applicable: needs a reg-em run";
    return r;
  }
  if (run.trajectory.size() >= 2) {
    const double prev = run.trajectory[run.trajectory.size() - 2].attack_loss;
    const double last = run.trajectory.back().attack_loss;
    if (prev > 1e-12 && (prev - last) / prev > 0.01) {
      r.converged = false;
      std::ostringstream os;
      os << "not converged: attack loss fell " << 100.0 * (prev - last) / prev << "% in the last epoch";
      r.diagnostic = os.str();
      return r;
    }
  }
  if (restarts < 1) throw Error("theorem 1 check needs at least one restart");
  check_aligned(clean, run.deltas);
  r.mean_chamfer = distance_report(clean, run.deltas).chamfer_mean;
  r.lhs = r.beta * r.mean_chamfer;
  Objective obj;
  obj.logit_loss = run.config.cls_loss;
  r.min_poisoned_loss = evaluate(run.surrogate, obj, make_batch(clean, &run.deltas, all_indices(clean.size()))).total;
  for (int k = 0; k < restarts; ++k) {
    r.clean_restarts.push_back(
        trainer(clean, derive_seed(run.config.seed, {kTagRestart, static_cast<std::uint64_t>(k)})));
  }
  r.min_clean_loss = *std::min_element(r.clean_restarts.begin(), r.clean_restarts.end());
  r.rhs = r.min_clean_loss - r.min_poisoned_loss;
  r.pass = r.lhs == 0.0 || r.lhs <= r.rhs + r.tolerance;
  return r;
}

std::pair<std::vector<Eigen::VectorXd>, Theorem3Certificate> theorem3_construct(
    const SeparabilityInstance& in, double slack) {
  const Eigen::MatrixXd& w = in.w.weight;
  if (in.x.empty() || in.x.size() != in.y.size()) throw Error("instance needs matching points and labels");
  const Eigen::Index d = w.cols();
  if (w.rows() < 2) throw Error("instance needs at least two classes");
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    if (std::abs(w.row(k).norm() - std::sqrt(static_cast<double>(d))) > 1e-9) {
      throw Error("weight rows must have norm sqrt(d)");
    }
  }
  Theorem3Certificate cert;
  cert.gamma = std::max(0.0, in.w.max_row_cosine());
  if (cert.gamma >= 1.0 - 1e-9) throw Error("construction requires row-cosine gap");

  std::vector<Eigen::VectorXd> deltas;
  double loss_sum = 0.0;
  double chamfer_sum = 0.0;
  cert.separable = true;
  for (std::size_t i = 0; i < in.x.size(); ++i) {
    if (in.x[i].size() != d) throw Error("point dimension does not match the weights");
    const int y = in.y[i];
    if (y < 0 || y >= w.rows()) throw Error("label outside the weight rows");
    const double loss = margin_loss(w * in.x[i], y);
    loss_sum += loss;
    const double beta = (1.0 + slack) * loss / (static_cast<double>(d) * (1.0 - cert.gamma));
    cert.betas.push_back(beta);
    Eigen::VectorXd delta = beta * w.row(y).transpose();
    const Eigen::VectorXd logits = w * (in.x[i] + delta);
    for (Eigen::Index k = 0; k < w.rows(); ++k) {
      if (k != y && !(logits(y) > logits(k))) cert.separable = false;
    }
    // A single point in R^d: chamfer = 2 ||delta||^2.
    chamfer_sum += 2.0 * delta.squaredNorm();
    deltas.push_back(std::move(delta));
  }
  const double n = static_cast<double>(in.x.size());
  cert.alpha_hat = loss_sum / n;
  cert.mean_chamfer = chamfer_sum / n;
  cert.bound = 32.0 * cert.alpha_hat / ((1.0 - cert.gamma) * (1.0 - cert.gamma));
  cert.within_bound = cert.mean_chamfer <= cert.bound;
  return {std::move(deltas), cert};
}

SeparabilityInstance random_separability_instance(std::uint64_t seed, double max_gamma) {
  if (!(max_gamma > 0.0 && max_gamma < 1.0)) throw Error("max_gamma must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_n(4, 20), pick_d(2, 8), pick_c(2, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    SeparabilityInstance in;
    const int n = pick_n(rng), d = pick_d(rng), c = pick_c(rng);
    std::uniform_int_distribution<int> label(0, c - 1);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd x(d);
      for (auto& v : x) v = u(rng);
      in.x.push_back(std::move(x));
      in.y.push_back(label(rng));
    }
    Eigen::MatrixXd w(c, d);
    for (auto& v : w.reshaped()) v = g(rng);
    for (int step = 0; step < 200; ++step) {
      Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(c, d);
      for (std::size_t i = 0; i < in.x.size(); ++i) {
        Eigen::VectorXd gl;
        margin_loss(w * in.x[i], in.y[i], &gl);
        grad += gl * in.x[i].transpose();
      }
      w -= (0.1 / n) * grad;
    }
    if ((w.rowwise().norm().array() <= 1e-9).any()) continue;
    in.w.weight = w;
    in.w.normalize_rows();
    if (in.w.max_row_cosine() <= max_gamma) return in;
  }
}

std::vector<SweepRow> beta_sweep(const LabeledDataset& train, const LabeledDataset& test,
                                 const AttackConfig& attack, const TrainConfig& victim,
                                 const std::vector<double>& betas) {
  if (betas.empty()) throw Error("beta sweep needs at least one beta");
  std::vector<SweepRow> rows(betas.size());
  parallel_for(betas.size(), [&](std::size_t k) {
    AttackConfig cfg = attack;
    cfg.beta = betas[k];
    PoisonRun run = run_attack(train, cfg);
    const LabeledDataset poisoned = materialize(train, run.deltas, to_string(cfg.method));
    TrainResult t = train_victim(poisoned, victim, &test);
    SweepRow& row = rows[k];
    const DistanceReport dist = distance_report(train, run.deltas);
    row.beta = betas[k];
    row.accuracy = t.report.accuracy;
    row.chamfer = dist.chamfer_mean;
    row.hausdorff = dist.hausdorff_mean;
    row.deltas = std::move(run.deltas);
    row.report = std::move(t.report);
    row.report.method = std::string(to_string(cfg.method));
    row.report.surrogate_arch = run.surrogate.arch().to_string();
    row.report.distance = dist;
    row.report.config_echo = cfg.to_text() + victim.to_text();
  });
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "beta,acc,chamfer,hausdorff\n";
  for (const auto& r : rows) os << r.beta << ',' << r.accuracy << ',' << r.chamfer << ',' << r.hausdorff << '\n';
  return os.str();
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("spearman needs two equal series of length >= 2");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

bool non_decreasing(const std::vector<double>& v) {
  return std::is_sorted(v.begin(), v.end());
}

bool non_increasing(const std::vector<double>& v) {
  return std::is_sorted(v.begin(), v.end(), std::greater<>());
}

std::string DivergenceProbe::csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,cross_entropy,feature_collision\n";
  for (std::size_t e = 0; e < cross_entropy.size(); ++e) {
    os << e + 1 << ',' << cross_entropy[e] << ',' << feature_collision[e] << '\n';
  }
  return os.str();
}

DivergenceProbe fc_loss_divergence_probe(const LabeledDataset& train, const TrainConfig& config,
                                         int fc_batch_size, double temperature) {
  if (fc_batch_size < 2) throw Error("collision batches need at least two samples");
  const auto order = permutation(train.size(), derive_seed(config.seed, {kTagProbeBatches}));
  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(fc_batch_size);
  for (std::size_t start = 0; start < order.size(); start += b) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + b)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  Objective obj = Objective::cross_entropy();
  obj.fc_weight = 1.0;
  obj.fc.temperature = temperature;

  DivergenceProbe probe;
  train_victim(train, config, nullptr, [&](const EpochCurve&, const PointNetClassifier& model) {
    double ce = 0.0, fc = 0.0;
    for (const auto& idx : batches) {
      const ObjectiveValue v = evaluate(model, obj, make_batch(train, nullptr, idx));
      const double w = static_cast<double>(idx.size()) / static_cast<double>(train.size());
      ce += w * v.logit_part;
      fc += w * v.fc_part;
    }
    probe.cross_entropy.push_back(ce);
    probe.feature_collision.push_back(fc);
  });
  if (probe.cross_entropy.size() >= 2) {
    probe.checked = true;
    probe.ce_converged = probe.cross_entropy.back() <= 0.1 * probe.cross_entropy.front();
    probe.fc_stalled = probe.feature_collision.back() >= 0.5 * probe.feature_collision.front();
  }
  return probe;
}

std::map<std::string, double> cosine_diagnostic(
    const std::map<std::string, const PointNetClassifier*>& models) {
  std::map<std::string, double> out;
  Eigen::Index rows = -1, cols = -1;
  for (const auto& [name, model] : models) {
    if (!model) throw Error("cosine diagnostic: null model '" + name + "'");
    const auto w = model->head_weights();
    if (rows >= 0 && (w.rows() != rows || w.cols() != cols)) {
      throw Error("cosine diagnostic: head shapes differ");
    }
    rows = w.rows();
    cols = w.cols();
    out[name] = last_layer_cosine_stats(*model);
  }
  return out;
}

}  // namespace pcpoison
