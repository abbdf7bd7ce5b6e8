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

#include "pcpoison/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pcpoison/io.hpp"
#include "pcpoison/objective.hpp"
#include "pcpoison/parallel.hpp"
#include "pcpoison/random.hpp"

#ifndef PCPOISON_VERSION
#define PCPOISON_VERSION "unknown"
#endif

namespace pcpoison {

namespace {

using Json = nlohmann::ordered_json;

enum : std::uint64_t { kTagVal = 11, kTagInit = 12, kTagBatches = 13, kTagMix = 14 };

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

long long to_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error("config key '" + key + "': expected an integer, got '" + value + "'");
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Json distance_json(const DistanceReport& d) {
  Json j;
  j["chamfer_mean"] = d.chamfer_mean;
  j["hausdorff_mean"] = d.hausdorff_mean;
  j["linf_max"] = d.linf_max;
  j["l2_mean"] = d.l2_mean;
  return j;
}

double json_number(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::vector<Eigen::VectorXd> logits_of(const PointNetClassifier& model, const LabeledDataset& data,
                                       const std::vector<std::size_t>& idx) {
  std::vector<Eigen::VectorXd> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t k) { out[k] = model.forward(data.clouds[idx[k]]).logits; });
  return out;
}

int argmax(const Eigen::VectorXd& v) {
  Eigen::Index a = 0;
  v.maxCoeff(&a);
  return static_cast<int>(a);
}

struct Scores {
  double loss = 0.0;
  double accuracy = 0.0;
};

Scores score(const PointNetClassifier& model, const LabeledDataset& data,
             const std::vector<std::size_t>& idx) {
  Scores s;
  if (idx.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::quiet_NaN()};
  const auto logits = logits_of(model, data, idx);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const int y = data.labels[idx[k]];
    s.loss += cross_entropy(logits[k], y);
    s.accuracy += argmax(logits[k]) == y ? 1.0 : 0.0;
  }
  s.loss /= static_cast<double>(idx.size());
  s.accuracy /= static_cast<double>(idx.size());
  return s;
}

}  // namespace

std::string_view version_string() { return PCPOISON_VERSION; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error("invalid victim config: " + field + " " + why);
  };
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(lr > 0.0)) fail("lr", "must be > 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction", "must lie in [0, 1)");
  if (!(schedule.factor > 0.0 && schedule.factor < 1.0)) fail("plateau_factor", "must lie in (0, 1)");
  if (schedule.patience < 0) fail("plateau_patience", "must be >= 0");
  bool known = false;
  for (const auto& name : ArchDescriptor::registered_names()) known = known || name == arch;
  if (!known) fail("arch", "'" + arch + "' is not registered");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "victim_arch = " << arch << "\n"
     << "victim_epochs = " << epochs << "\n"
     << "victim_batch_size = " << batch_size << "\n"
     << "victim_lr = " << fmt(lr) << "\n"
     << "victim_optimizer = " << to_string(optimizer) << "\n"
     << "victim_plateau_factor = " << fmt(schedule.factor) << "\n"
     << "victim_plateau_patience = " << schedule.patience << "\n"
     << "victim_plateau_min_lr = " << fmt(schedule.min_lr) << "\n"
     << "victim_plateau_threshold = " << fmt(schedule.threshold) << "\n"
     << "victim_val_fraction = " << fmt(val_fraction) << "\n"
     << "victim_seed = " << seed << "\n";
  return os.str();
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string content = trim(line);
    const auto eq = content.find('=');
    if (content.empty() || eq == std::string::npos) continue;
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.rfind("victim_", 0) != 0) continue;
    if (key == "victim_arch") c.arch = value;
    else if (key == "victim_epochs") c.epochs = static_cast<int>(to_int(key, value));
    else if (key == "victim_batch_size") c.batch_size = static_cast<int>(to_int(key, value));
    else if (key == "victim_lr") c.lr = to_double(key, value);
    else if (key == "victim_optimizer") c.optimizer = parse_optimizer(value);
    else if (key == "victim_plateau_factor") c.schedule.factor = to_double(key, value);
    else if (key == "victim_plateau_patience") c.schedule.patience = static_cast<int>(to_int(key, value));
    else if (key == "victim_plateau_min_lr") c.schedule.min_lr = to_double(key, value);
    else if (key == "victim_plateau_threshold") c.schedule.threshold = to_double(key, value);
    else if (key == "victim_val_fraction") c.val_fraction = to_double(key, value);
    else if (key == "victim_seed") {
      const long long v = to_int(key, value);
      if (v < 0) throw Error("config key 'victim_seed' must be non-negative");
      c.seed = static_cast<std::uint64_t>(v);
    }
    else throw Error("unknown config key '" + key + "'");
  }
  return c;
}

std::string EvalReport::to_json() const {
  Json j;
  j["version"] = std::string(version_string());
  j["method"] = method;
  j["seed"] = seed;
  j["surrogate_arch"] = surrogate_arch;
  j["victim_arch"] = victim_arch;
  j["train_provenance"] = train_provenance;
  j["accuracy"] = accuracy;
  j["per_class_accuracy"] = per_class_accuracy;
  j["f1"] = f1 ? Json(*f1) : Json(nullptr);
  j["hausdorff_variant"] = std::string(to_string(hausdorff_variant));
  j["distance"] = distance ? distance_json(*distance) : Json(nullptr);
  Json curve = Json::array();
  for (const auto& c : curves) {
    Json e;
    e["epoch"] = c.epoch;
    e["train_loss"] = c.train_loss;
    e["train_accuracy"] = c.train_accuracy;
    e["val_accuracy"] = c.val_accuracy;
    e["test_accuracy"] = c.test_accuracy;
    e["lr"] = c.lr;
    curve.push_back(e);
  }
  j["curves"] = curve;
  j["predictions"] = predictions;
  j["config"] = config_echo;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(std::string_view text) {
  EvalReport r;
  Json j;
  try {
    j = Json::parse(text);
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.surrogate_arch = j.at("surrogate_arch").get<std::string>();
    r.victim_arch = j.at("victim_arch").get<std::string>();
    r.train_provenance = j.at("train_provenance").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    if (!j.at("f1").is_null()) r.f1 = j.at("f1").get<double>();
    r.hausdorff_variant = parse_hausdorff_variant(j.at("hausdorff_variant").get<std::string>());
    if (const auto& d = j.at("distance"); !d.is_null()) {
      DistanceReport dr;
      dr.chamfer_mean = d.at("chamfer_mean").get<double>();
      dr.hausdorff_mean = d.at("hausdorff_mean").get<double>();
      dr.linf_max = d.at("linf_max").get<double>();
      dr.l2_mean = d.at("l2_mean").get<double>();
      r.distance = dr;
    }
    for (const auto& e : j.at("curves")) {
      EpochCurve c;
      c.epoch = e.at("epoch").get<int>();
      c.train_loss = json_number(e.at("train_loss"));
      c.train_accuracy = json_number(e.at("train_accuracy"));
      c.val_accuracy = json_number(e.at("val_accuracy"));
      c.test_accuracy = json_number(e.at("test_accuracy"));
      c.lr = json_number(e.at("lr"));
      r.curves.push_back(c);
    }
    r.predictions = j.at("predictions").get<std::vector<int>>();
    r.config_echo = j.at("config").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string EvalReport::curves_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,train_loss,train_acc,val_acc,test_acc,lr\n";
  for (const auto& c : curves) {
    os << c.epoch << ',' << c.train_loss << ',' << c.train_accuracy << ',' << c.val_accuracy << ','
       << c.test_accuracy << ',' << c.lr << '\n';
  }
  return os.str();
}

LabeledDataset materialize(const LabeledDataset& clean, const PerturbationSet& deltas,
                           std::string_view method) {
  check_aligned(clean, deltas);
  LabeledDataset out = clean;
  for (std::size_t i = 0; i < out.size(); ++i) out.clouds[i] += deltas.deltas[i];
  round_to_float(&out);
  out.provenance = "poisoned(" + std::string(method) + ")";
  return out;
}

EvalReport evaluate(const PointNetClassifier& model, const LabeledDataset& test) {
  if (test.empty()) throw Error("evaluation on an empty test set");
  if (test.num_classes != model.num_classes()) {
    throw Error("test set has " + std::to_string(test.num_classes) + " classes but the model has " +
                std::to_string(model.num_classes()));
  }
  std::vector<std::size_t> all(test.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto logits = logits_of(model, test, all);
  EvalReport r;
  const auto c = static_cast<std::size_t>(test.num_classes);
  std::vector<double> hits(c, 0.0), counts(c, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int p = argmax(logits[i]);
    const int y = test.labels[i];
    r.predictions.push_back(p);
    counts[static_cast<std::size_t>(y)] += 1.0;
    if (p == y) {
      ++correct;
      hits[static_cast<std::size_t>(y)] += 1.0;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  for (std::size_t k = 0; k < c; ++k) {
    r.per_class_accuracy.push_back(counts[k] > 0.0 ? hits[k] / counts[k]
                                                   : std::numeric_limits<double>::quiet_NaN());
  }
  if (c == 2) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const bool pred = r.predictions[i] == 1;
      const bool truth = test.labels[i] == 1;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
    const double denom = 2 * tp + fp + fn;
    r.f1 = denom > 0.0 ? 2 * tp / denom : 0.0;
  }
  return r;
}

std::uint64_t sample_hash(const PointCloud& cloud, int label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t k = 0; k < n; ++k) h = (h ^ b[k]) * 0x100000001b3ULL;
  };
  mix(&label, sizeof label);
  mix(cloud.data(), static_cast<std::size_t>(cloud.size()) * sizeof(double));
  return mix64(h);
}

TrainResult train_victim(const LabeledDataset& train, const TrainConfig& config,
                         const LabeledDataset* test, const CurveFn& progress) {
  config.validate();
  train.validate();
  if (train.empty()) throw Error("victim training on an empty dataset");
  if (test && test->num_classes != train.num_classes) {
    throw Error("train and test sets disagree on the class count");
  }
  const std::size_t n = train.size();

  // Canonical order: by content hash, so the outcome does not depend on
  // the order samples arrive in.
  std::vector<std::uint64_t> hashes(n);
  for (std::size_t i = 0; i < n; ++i) hashes[i] = sample_hash(train.clouds[i], train.labels[i]);
  std::vector<std::size_t> canonical(n);
  std::iota(canonical.begin(), canonical.end(), std::size_t{0});
  std::stable_sort(canonical.begin(), canonical.end(),
                   [&](std::size_t a, std::size_t b) { return hashes[a] < hashes[b]; });

  const auto n_val = static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(n)));
  if (n_val >= n) throw Error("validation split leaves no training samples");
  const auto split = permutation(n, derive_seed(config.seed, {kTagVal}));
  std::vector<std::size_t> val_idx, fit_idx;
  for (std::size_t k = 0; k < n; ++k) (k < n_val ? val_idx : fit_idx).push_back(canonical[split[k]]);
  std::sort(val_idx.begin(), val_idx.end(), [&](std::size_t a, std::size_t b) { return hashes[a] < hashes[b]; });
  std::sort(fit_idx.begin(), fit_idx.end(), [&](std::size_t a, std::size_t b) { return hashes[a] < hashes[b]; });

  TrainResult out{PointNetClassifier::init(derive_seed(config.seed, {kTagInit}),
                                           ArchDescriptor::named(config.arch, train.num_classes)),
                  {}};
  PointNetClassifier& model = out.model;
  Optimizer opt(config.optimizer, config.lr);
  PlateauSchedule schedule = config.schedule;
  const Objective ce = Objective::cross_entropy();
  std::vector<std::size_t> test_idx;
  if (test) {
    test_idx.resize(test->size());
    std::iota(test_idx.begin(), test_idx.end(), std::size_t{0});
  }

  const auto b = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = permutation(fit_idx.size(),
                                   derive_seed(config.seed, {kTagBatches, static_cast<std::uint64_t>(epoch)}));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += b) {
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < std::min(order.size(), start + b); ++k) idx.push_back(fit_idx[order[k]]);
      const ObjectiveValue v = evaluate(model, ce, make_batch(train, nullptr, idx), kParams);
      if (!std::isfinite(v.total)) {
        throw NumericalError("victim training diverged at epoch " + std::to_string(epoch));
      }
      opt.step(model.mutable_params(), v.grad_params);
      loss_sum += v.total * static_cast<double>(idx.size());
    }
    EpochCurve c;
    c.epoch = epoch;
    c.lr = opt.lr();
    c.train_loss = loss_sum / static_cast<double>(fit_idx.size());
    c.train_accuracy = score(model, train, fit_idx).accuracy;
    const Scores val = score(model, train, val_idx);
    c.val_accuracy = val.accuracy;
    c.test_accuracy = test ? score(model, *test, test_idx).accuracy
                           : std::numeric_limits<double>::quiet_NaN();
    out.report.curves.push_back(c);
    opt.set_lr(schedule.step(val_idx.empty() ? c.train_loss : val.loss, opt.lr()));
    if (progress) progress(c, model);
  }

  if (test) {
    EvalReport final = evaluate(model, *test);
    final.curves = std::move(out.report.curves);
    out.report = std::move(final);
  }
  out.report.victim_arch = model.arch().to_string();
  out.report.train_provenance = train.provenance;
  out.report.seed = config.seed;
  out.report.config_echo = config.to_text();
  return out;
}

TransferResult transfer_eval(const LabeledDataset& train, const LabeledDataset& test,
                             const AttackConfig& attack, const TrainConfig& victim) {
  PoisonRun poison = run_attack(train, attack);
  const LabeledDataset poisoned = materialize(train, poison.deltas, to_string(attack.method));
  TrainResult trained = train_victim(poisoned, victim, &test);
  trained.report.method = std::string(to_string(attack.method));
  trained.report.surrogate_arch = poison.surrogate.arch().to_string();
  trained.report.distance = distance_report(train, poison.deltas);
  trained.report.config_echo = attack.to_text() + victim.to_text();
  return {std::move(poison), std::move(trained)};
}

LabeledDataset mix_clean(const LabeledDataset& poisoned, const LabeledDataset& clean, double ratio,
                         std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("poison ratio must lie in [0, 1]");
  if (poisoned.size() != clean.size() || poisoned.labels != clean.labels) {
    throw Error("poisoned and clean datasets are not aligned");
  }
  const std::size_t n = clean.size();
  const auto keep = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  const auto order = permutation(n, derive_seed(seed, {kTagMix}));
  LabeledDataset out = clean;
  for (std::size_t k = 0; k < keep; ++k) out.clouds[order[k]] = poisoned.clouds[order[k]];
  out.provenance = keep == 0 ? clean.provenance : poisoned.provenance;
  return out;
}

}  // namespace pcpoison
