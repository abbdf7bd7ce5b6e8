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

#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pcpoison/datasets.hpp"
#include "pcpoison/harness.hpp"
#include "pcpoison/io.hpp"
#include "pcpoison/random.hpp"

using namespace pcpoison;

namespace {

const Benchmark& small() {
  static const Benchmark b = default_benchmark(6, 32, 8, 4);
  return b;
}

TrainConfig quick_victim() {
  TrainConfig t;
  t.arch = "ref-variant";
  t.epochs = 3;
  t.batch_size = 8;
  t.optimizer = OptimizerKind::kAdam;
  t.seed = 3;
  return t;
}

// Binary task whose class-1 logit is fixed by the head bias.
PointNetClassifier constant_model(int predicted) {
  auto m = PointNetClassifier::init(1, ArchDescriptor::named("ref-variant", 2));
  m.mutable_head_weights().setZero();
  m.mutable_head_bias().setZero();
  m.mutable_head_bias()[predicted] = 1.0;
  return m;
}

LabeledDataset balanced_binary() {
  LabeledDataset ds = small().test;
  ds.num_classes = 2;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.labels[i] = static_cast<int>(i % 2);
  return ds;
}

}  // namespace

TEST_CASE("materialize") {
  const LabeledDataset& train = small().train;
  const LabeledDataset same = materialize(train, PerturbationSet::zeros_like(train), "fc-em");
  CHECK(same.labels == train.labels);
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(same.clouds[i] == train.clouds[i]);
  CHECK(same.provenance == "poisoned(fc-em)");
  PerturbationSet p = PerturbationSet::zeros_like(train);
  p.deltas[0](0, 0) = 0.1;
  const LabeledDataset moved = materialize(train, p, "em");
  CHECK(moved.clouds[0](0, 0) == static_cast<double>(static_cast<float>(train.clouds[0](0, 0) + 0.1)));
  oracle::TempDir dir("mat");
  save_dataset(dir.path() / "p.pcd", moved);
  const LabeledDataset back = load_dataset(dir.path() / "p.pcd");
  for (std::size_t i = 0; i < moved.size(); ++i) CHECK(back.clouds[i] == moved.clouds[i]);
}

TEST_CASE("evaluate: constant and perfect predictors") {
  const LabeledDataset ds = balanced_binary();
  const EvalReport pos = evaluate(constant_model(1), ds);
  CHECK(pos.accuracy == doctest::Approx(0.5));
  CHECK(*pos.f1 == doctest::Approx(2.0 / 3.0));
  const EvalReport neg = evaluate(constant_model(0), ds);
  CHECK(neg.accuracy == doctest::Approx(0.5));
  CHECK(*neg.f1 == 0.0);
  CHECK(neg.per_class_accuracy == std::vector<double>{1.0, 0.0});
  // Recount from stored predictions.
  int hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += pos.predictions[i] == ds.labels[i];
  CHECK(pos.accuracy == static_cast<double>(hits) / static_cast<double>(ds.size()));
  CHECK_FALSE(evaluate(PointNetClassifier::init(1, ArchDescriptor::named("ref-variant", 4)), small().test).f1);
}

TEST_CASE("evaluate: perfect predictor") {
  // Labels chosen to match whatever a fixed model predicts.
  const auto m = PointNetClassifier::init(4, ArchDescriptor::named("ref-variant", 2));
  LabeledDataset ds = balanced_binary();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto l = m.forward(ds.clouds[i]).logits;
    ds.labels[i] = l[1] > l[0] ? 1 : 0;
  }
  const EvalReport r = evaluate(m, ds);
  CHECK(r.accuracy == 1.0);
  const bool any_pos = std::count(ds.labels.begin(), ds.labels.end(), 1) > 0;
  CHECK(*r.f1 == (any_pos ? 1.0 : 0.0));
}

TEST_CASE("victim training is seeded and order independent") {
  const TrainConfig t = quick_victim();
  const TrainResult a = train_victim(small().train, t, &small().test);
  const TrainResult b = train_victim(small().train, t, &small().test);
  CHECK(a.model.params() == b.model.params());
  CHECK(a.report.to_json() == b.report.to_json());
  CHECK(a.report.curves.size() == 3);
  LabeledDataset shuffled = small().train;
  const auto p = permutation(shuffled.size(), 77);
  for (std::size_t i = 0; i < p.size(); ++i) {
    shuffled.clouds[i] = small().train.clouds[p[i]];
    shuffled.labels[i] = small().train.labels[p[i]];
  }
  CHECK(train_victim(shuffled, t, &small().test).model.params() == a.model.params());
  TrainConfig other = t;
  other.seed = 4;
  CHECK(train_victim(small().train, other).model.params() != a.model.params());
  CHECK(std::isnan(train_victim(small().train, t).report.curves[0].test_accuracy));
}

TEST_CASE("train config") {
  TrainConfig t = quick_victim();
  t.lr = 0.004;
  t.schedule.patience = 7;
  const TrainConfig back = TrainConfig::parse(t.to_text());
  CHECK(back.to_text() == t.to_text());
  CHECK(TrainConfig::parse("method = fc-em\nvictim_epochs = 9\n").epochs == 9);
  TrainConfig bad = t;
  bad.val_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = t;
  bad.arch = "none";
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(TrainConfig::parse("victim_epochs = x\n"), Error);
}

TEST_CASE("eval report JSON") {
  EvalReport r;
  r.accuracy = 0.75;
  r.per_class_accuracy = {1.0, 0.5};
  r.f1 = 0.5;
  r.predictions = {0, 1, 1, 0};
  r.curves.push_back({1, 0.5, 0.6, 0.7, std::nan(""), 1e-3});
  r.distance = DistanceReport{1e-4, 2e-3, 0.1, 0.2};
  r.method = "fc-em";
  r.seed = 12;
  r.config_echo = "method = fc-em\n";
  const std::string j = r.to_json();
  const std::vector<std::string> order = {"\"version\"", "\"method\"", "\"seed\"", "\"accuracy\"",
                                          "\"distance\"", "\"curves\"", "\"config\""};
  std::size_t last = 0;
  for (const auto& key : order) {
    const auto at = j.find(key);
    REQUIRE(at != std::string::npos);
    CHECK(at > last);
    last = at;
  }
  const EvalReport back = EvalReport::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.distance->chamfer_mean == 1e-4);
  CHECK(std::isnan(back.curves[0].test_accuracy));
  CHECK_THROWS_AS(EvalReport::from_json("{"), Error);
  CHECK(r.curves_csv().rfind("epoch,train_loss,train_acc,val_acc,test_acc,lr\n", 0) == 0);
}

TEST_CASE("mix_clean keeps an exact poisoned count") {
  const LabeledDataset& clean = small().train;
  PerturbationSet p = PerturbationSet::zeros_like(clean);
  for (auto& d : p.deltas) d.setConstant(0.25);
  const LabeledDataset poisoned = materialize(clean, p, "em");
  const LabeledDataset mixed = mix_clean(poisoned, clean, 0.25, 9);
  int changed = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) changed += mixed.clouds[i] != clean.clouds[i];
  CHECK(changed == 8);
  CHECK(mix_clean(poisoned, clean, 0.0, 9).provenance == "clean");
  CHECK_THROWS_AS(mix_clean(poisoned, clean, 1.5, 9), Error);
}

TEST_CASE("transfer with matching architectures equals the direct pipeline") {
  AttackConfig a = AttackConfig::defaults(Method::kFcEm);
  a.arch = "ref-variant";
  a.epochs = 1;
  a.attack_steps = 2;
  a.batch_size = 16;
  const TrainConfig v = quick_victim();
  const TransferResult t = transfer_eval(small().train, small().test, a, v);
  const PoisonRun direct = run_attack(small().train, a);
  const TrainResult victim = train_victim(materialize(small().train, direct.deltas, "fc-em"), v, &small().test);
  CHECK(t.victim.model.params() == victim.model.params());
  CHECK(t.victim.report.accuracy == victim.report.accuracy);
  CHECK(t.victim.report.surrogate_arch == "ref-variant:4");
  // The stored distance report matches a fresh recomputation.
  const DistanceReport d = distance_report(small().train, t.poison.deltas);
  CHECK(t.victim.report.distance->chamfer_mean == d.chamfer_mean);
  CHECK(t.victim.report.distance->hausdorff_mean == d.hausdorff_mean);
}
