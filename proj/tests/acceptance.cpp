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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pcpoison/analysis.hpp"
#include "pcpoison/attacks.hpp"
#include "pcpoison/core.hpp"
#include "pcpoison/datasets.hpp"
#include "pcpoison/harness.hpp"
#include "pcpoison/parallel.hpp"

using namespace pcpoison;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  int id = 0;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<Verdict> g_verdicts;

void report(int id, bool pass, const std::string& detail, double seconds) {
  g_verdicts.push_back({id, pass, detail, seconds});
  std::printf("[%s] criterion %d: %s (%.1f s)\n", pass ? "PASS" : "FAIL", id, detail.c_str(), seconds);
  std::fflush(stdout);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: metrics against brute force.

void criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2026);
  std::uniform_int_distribution<int> size(1, 32);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const PointCloud a = oracle::random_cloud(rng, size(rng));
    const PointCloud b = oracle::random_cloud(rng, size(rng));
    worst = std::max(worst, std::abs(chamfer(a, b) - oracle::chamfer(a, b)));
    for (auto v : {HausdorffVariant::kTwoSidedSquared, HausdorffVariant::kOneSidedSquared,
                   HausdorffVariant::kOneSided}) {
      worst = std::max(worst, std::abs(hausdorff(a, b, v) - oracle::hausdorff(a, b, v)));
    }
  }
  const double s = seconds_since(t0);
  report(1, worst <= 1e-9 && s < 10.0, "200 pairs, max abs error " + fmt("%.2e", worst), s);
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient checks.

void criterion2() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 0.0;
  int checks = 0;
  for (const auto& [name, obj] : gradcheck::all_losses()) {
    gradcheck::Fixture fx;
    std::vector<gradcheck::Probe> probes;
    if (obj.logit_loss != LogitLoss::kNone || obj.uses_features()) {
      probes.push_back(gradcheck::check_params(fx, obj, 50));
    }
    probes.push_back(gradcheck::check_inputs(fx, obj, 50));
    for (const auto& p : probes) {
      ++checks;
      worst = std::max(worst, p.worst);
      if (p.accepted != 50 || p.worst > 1e-4) {
        ok = false;
        std::printf("  %s: %d probes accepted, worst %.2e\n", name.c_str(), p.accepted, p.worst);
      }
    }
  }
  const double s = seconds_since(t0);
  report(2, ok && s < 60.0,
         std::to_string(checks) + " loss/target checks x 50 probes, worst rel. error " + fmt("%.2e", worst),
         s);
}

// ---------------------------------------------------------------------------
// Criterion 3: REG-EM degeneracy on a separable toy set.

LabeledDataset toy_set() {
  LabeledDataset toy;
  toy.num_classes = 2;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 8; ++i) {
    PointCloud pc = oracle::random_cloud(rng, 16, 0.3);
    pc.row(0).array() += i % 2 == 0 ? -0.6 : 0.6;
    toy.clouds.push_back(pc);
    toy.labels.push_back(i % 2);
  }
  return toy;
}

AttackConfig toy_config() {
  AttackConfig c = AttackConfig::defaults(Method::kRegEm);
  c.cls_loss = LogitLoss::kMargin;
  c.full_batch = true;
  c.optimizer = OptimizerKind::kAdam;
  c.model_lr = 3e-3;
  c.per_sample_gradient = true;
  c.epochs = 100;
  c.seed = 3;
  return c;
}

struct ToyResult {
  PoisonRun run;
  Theorem1Report t1;
};

ToyResult run_toy() {
  const LabeledDataset toy = toy_set();
  const AttackConfig c = toy_config();
  PoisonRun run = run_attack(toy, c);
  AttackConfig trainer = c;
  trainer.epochs = 300;
  Theorem1Report t1 = theorem1_gap_check(toy, run, make_min_loss_trainer(trainer));
  return {std::move(run), std::move(t1)};
}

void criterion3(std::optional<ToyResult>* keep) {
  const auto t0 = Clock::now();
  ToyResult r = run_toy();
  const double s = seconds_since(t0);
  const bool ok = r.t1.mean_chamfer <= 1e-4 && r.t1.applicable && r.t1.converged && r.t1.pass && s < 120.0;
  std::string detail = "mean chamfer " + fmt("%.2e", r.t1.mean_chamfer) + ", lhs " + fmt("%.2e", r.t1.lhs) +
                       " <= rhs " + fmt("%.2e", r.t1.rhs) + " + 1e-3";
  if (!r.t1.diagnostic.empty()) detail += " (" + r.t1.diagnostic + ")";
  report(3, ok, detail, s);
  *keep = std::move(r);
}

// ---------------------------------------------------------------------------
// Criteria 6 and 7: certificates and the bound calculator.

void criterion6() {
  const auto t0 = Clock::now();
  int passed = 0;
  double worst_ratio = 0.0;
  for (std::uint64_t t = 0; t < 50; ++t) {
    const auto cert = theorem3_construct(random_separability_instance(1000 + t)).second;
    passed += cert.pass() ? 1 : 0;
    if (cert.bound > 0.0) worst_ratio = std::max(worst_ratio, cert.mean_chamfer / cert.bound);
  }
  const double s = seconds_since(t0);
  report(6, passed == 50 && s < 30.0,
         std::to_string(passed) + "/50 instances separable within bound, max chamfer/bound " +
             fmt("%.3f", worst_ratio),
         s);
}

void criterion7() {
  const auto t0 = Clock::now();
  const double zero = theorem2_bound({2.0, 0.5, 0.0});
  const double mid = theorem2_bound({2.0, 0.5, 0.5});
  bool threw = false;
  try {
    (void)theorem2_bound({2.0, 0.5, 5.0});
  } catch (const Error&) {
    threw = true;
  }
  const double s = seconds_since(t0);
  report(7, zero == 0.0 && std::abs(mid - 0.29289) <= 1e-5 && threw && s < 1.0,
         "bound(0) = " + fmt("%g", zero) + ", bound(L=2, beta=0.5, gap=0.5) = " + fmt("%.5f", mid) +
             (threw ? ", undefined region raises" : ", undefined region did not raise"),
         s);
}

// ---------------------------------------------------------------------------
// Benchmark criteria.

struct Cell {
  PerturbationSet deltas;
  DistanceReport distance;
  TrainResult victim;
};

Cell poison_and_train(const Benchmark& b, const AttackConfig& attack, const TrainConfig& victim) {
  PoisonRun run = run_attack(b.train, attack);
  const LabeledDataset poisoned = materialize(b.train, run.deltas, to_string(attack.method));
  Cell c{run.deltas, distance_report(b.train, run.deltas), train_victim(poisoned, victim, &b.test)};
  return c;
}

struct BenchmarkRun {
  TrainResult clean;
  Cell fc;
  Cell reg;
  double seconds = 0.0;
  std::vector<SweepRow> fc_sweep;   // beta 0.1 and 10
  std::vector<SweepRow> reg_sweep;
};

BenchmarkRun run_benchmark(const Benchmark& b, const AttackConfig& fc, const AttackConfig& reg,
                           const TrainConfig& victim, bool sweeps) {
  const auto t0 = Clock::now();
  TrainResult clean = train_victim(b.train, victim, &b.test);
  Cell fc_cell = poison_and_train(b, fc, victim);
  Cell reg_cell = poison_and_train(b, reg, victim);
  const double seconds = seconds_since(t0);
  std::vector<SweepRow> fc_sweep, reg_sweep;
  if (sweeps) {
    fc_sweep = beta_sweep(b.train, b.test, fc, victim, {0.1, 10.0});
    reg_sweep = beta_sweep(b.train, b.test, reg, victim, {0.1, 10.0});
  }
  return BenchmarkRun{std::move(clean), std::move(fc_cell), std::move(reg_cell), seconds,
                      std::move(fc_sweep), std::move(reg_sweep)};
}

void criterion4(const BenchmarkRun& r) {
  const double clean = r.clean.report.accuracy;
  const double fc = r.fc.victim.report.accuracy;
  const double reg = r.reg.victim.report.accuracy;
  const double dc = r.fc.distance.chamfer_mean;
  struct Clause {
    const char* text;
    bool ok;
  };
  const Clause clauses[] = {
      {"clean >= 0.90", clean >= 0.90},
      {"fc-em <= clean - 0.30", fc <= clean - 0.30},
      {"reg-em >= clean - 0.10", reg >= clean - 0.10},
      {"reg-em - fc-em >= 0.15", reg - fc >= 0.15},
      {"fc-em D_c <= 5e-3", dc <= 5e-3},
      {"runtime <= 900 s", r.seconds <= 900.0},
  };
  bool ok = true;
  std::string failed;
  for (const auto& c : clauses) {
    ok = ok && c.ok;
    if (!c.ok) failed += std::string(failed.empty() ? "" : "; ") + c.text;
  }
  std::string detail = "clean " + fmt("%.3f", clean) + ", fc-em " + fmt("%.3f", fc) + " (D_c " +
                       fmt("%.2e", dc) + "), reg-em " + fmt("%.3f", reg) + " (D_c " +
                       fmt("%.2e", r.reg.distance.chamfer_mean) + "), " +
                       std::to_string(thread_count()) + " threads";
  if (!ok) detail += "; failed: " + failed;
  report(4, ok, detail, r.seconds);
}

void criterion5(const BenchmarkRun& r, double seconds) {
  auto three = [](const std::vector<SweepRow>& s, const Cell& mid, std::vector<double>* acc,
                  std::vector<double>* dc) {
    *acc = {s[0].accuracy, mid.victim.report.accuracy, s[1].accuracy};
    *dc = {s[0].chamfer, mid.distance.chamfer_mean, s[1].chamfer};
  };
  std::vector<double> fa, fd, ra, rd;
  three(r.fc_sweep, r.fc, &fa, &fd);
  three(r.reg_sweep, r.reg, &ra, &rd);
  const std::vector<double> betas = {0.1, 1.0, 10.0};
  const bool fc_ok = non_decreasing(fa) && non_increasing(fd);
  const auto [ramin, ramax] = std::minmax_element(ra.begin(), ra.end());
  const auto [rdmin, rdmax] = std::minmax_element(rd.begin(), rd.end());
  const double range = *ramax - *ramin;
  const double ratio = *rdmax / *rdmin;
  const bool reg_ok = range <= 0.05 && ratio <= 5.0;
  std::ostringstream os;
  os.precision(3);
  os << "fc-em acc " << fa[0] << "/" << fa[1] << "/" << fa[2] << " D_c " << fd[0] << "/" << fd[1] << "/"
     << fd[2] << " (spearman acc " << spearman(betas, fa) << ", D_c " << spearman(betas, fd)
     << "); reg-em acc range " << range << ", D_c max/min " << ratio;
  if (!fc_ok) os << "; failed: fc-em trend";
  if (!reg_ok) os << "; failed: reg-em variation";
  report(5, fc_ok && reg_ok && seconds <= 2700.0, os.str(), seconds);
}

void criterion8(const Benchmark& b, const TrainConfig& victim, const BenchmarkRun& r) {
  const auto t0 = Clock::now();
  const DivergenceProbe p = fc_loss_divergence_probe(b.train, victim);
  const double s = seconds_since(t0);
  const double cos_clean = last_layer_cosine_stats(r.clean.model);
  const double cos_fc = last_layer_cosine_stats(r.fc.victim.model);
  const double cos_reg = last_layer_cosine_stats(r.reg.victim.model);
  const bool ok = p.checked && p.ce_converged && p.fc_stalled && cos_fc < cos_clean && s <= 600.0;
  std::string detail = "CE " + fmt("%.3g", p.cross_entropy.front()) + " -> " +
                       fmt("%.3g", p.cross_entropy.back()) + ", L_fc " +
                       fmt("%.3g", p.feature_collision.front()) + " -> " +
                       fmt("%.3g", p.feature_collision.back()) + "; head cosine fc-em " +
                       fmt("%.4f", cos_fc) + " vs clean " + fmt("%.4f", cos_clean) + " (reg-em " +
                       fmt("%.4f", cos_reg) + ")";
  report(8, ok, detail, s);
}

void criterion9(const BenchmarkRun& r) {
  const double clean = r.clean.report.accuracy;
  double max_val = 0.0;
  double worst_test = 0.0;
  for (const auto& c : r.fc.victim.report.curves) {
    max_val = std::max(max_val, c.val_accuracy);
    if (c.epoch > 5) worst_test = std::max(worst_test, c.test_accuracy);
  }
  const bool ok = max_val > 0.95 && worst_test <= clean - 0.25;
  report(9, ok,
         "fc-em victim max val acc " + fmt("%.3f", max_val) + ", max test acc after epoch 5 " +
             fmt("%.3f", worst_test) + " (limit " + fmt("%.3f", clean - 0.25) + ")",
         0.0);
}

bool same_deltas(const PerturbationSet& a, const PerturbationSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.deltas[i].cols() != b.deltas[i].cols() || a.deltas[i] != b.deltas[i]) return false;
  }
  return true;
}

bool same_cell(const Cell& a, const Cell& b) {
  return same_deltas(a.deltas, b.deltas) && a.victim.report.to_json() == b.victim.report.to_json();
}

bool same_rows(const std::vector<SweepRow>& a, const std::vector<SweepRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_deltas(a[i].deltas, b[i].deltas) || a[i].report.to_json() != b[i].report.to_json()) {
      return false;
    }
  }
  return true;
}

void criterion11(const Benchmark& b, const TrainConfig& victim, const BenchmarkRun& r) {
  const auto t0 = Clock::now();
  TrainConfig variant = victim;
  variant.arch = "ref-variant";
  const TrainResult clean = train_victim(b.train, variant, &b.test);
  const LabeledDataset poisoned = materialize(b.train, r.fc.deltas, "fc-em");
  const TrainResult hit = train_victim(poisoned, variant, &b.test);
  const double s = seconds_since(t0);
  const double drop = clean.report.accuracy - hit.report.accuracy;
  report(11, drop >= 0.15 && s <= 900.0,
         "ref-small fc-em poison on ref-variant: clean " + fmt("%.3f", clean.report.accuracy) +
             ", poisoned " + fmt("%.3f", hit.report.accuracy) + ", drop " + fmt("%.3f", drop),
         s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::string config = std::string(PCPOISON_SOURCE_DIR) + "/configs/desk.cfg";
  bool quick = false;
  app.add_option("--config", config, "Desk-scale config file");
  app.add_flag("--quick", quick, "Only the criteria that need no benchmark training");
  CLI11_PARSE(app, argc, argv);

  try {
    criterion1();
    criterion2();
    std::optional<ToyResult> toy;
    criterion3(&toy);
    criterion6();
    criterion7();

    if (!quick) {
      const std::string text = read_text(config);
      const AttackConfig fc = AttackConfig::parse(text, Method::kFcEm);
      const AttackConfig reg = AttackConfig::parse(text, Method::kRegEm);
      const TrainConfig victim = TrainConfig::parse(text);
      fc.validate();
      reg.validate();
      victim.validate();
      std::uint64_t data_seed = 0;
      if (const auto pos = text.find("data_seed"); pos != std::string::npos) {
        data_seed = std::stoull(text.substr(text.find('=', pos) + 1));
      }
      const Benchmark b = default_benchmark(data_seed);

      const auto t0 = Clock::now();
      const BenchmarkRun run = run_benchmark(b, fc, reg, victim, true);
      criterion4(run);
      criterion5(run, seconds_since(t0));
      criterion8(b, victim, run);
      criterion9(run);

      // Rerun criteria 3 to 5 with a different worker count.
      const auto t1 = Clock::now();
      const std::string threads = std::to_string(thread_count() + 2);
      setenv("PCPOISON_THREADS", threads.c_str(), 1);
      const ToyResult toy2 = run_toy();
      const BenchmarkRun again = run_benchmark(b, fc, reg, victim, true);
      unsetenv("PCPOISON_THREADS");
      const bool toy_same = same_deltas(toy->run.deltas, toy2.run.deltas) &&
                            toy->t1.mean_chamfer == toy2.t1.mean_chamfer;
      const bool bench_same = run.clean.report.to_json() == again.clean.report.to_json() &&
                              same_cell(run.fc, again.fc) && same_cell(run.reg, again.reg);
      const bool sweep_same = same_rows(run.fc_sweep, again.fc_sweep) &&
                              same_rows(run.reg_sweep, again.reg_sweep);
      report(10, toy_same && bench_same && sweep_same,
             std::string("rerun with ") + threads + " workers: toy " + (toy_same ? "identical" : "differs") +
                 ", benchmark " + (bench_same ? "identical" : "differs") + ", sweep " +
                 (sweep_same ? "identical" : "differs"),
             seconds_since(t1));

      criterion11(b, victim, run);
    }
  } catch (const std::exception& e) {
    std::printf("acceptance run aborted: %s\n", e.what());
    return 2;
  }

  int failed = 0;
  for (const auto& v : g_verdicts) failed += v.pass ? 0 : 1;
  std::printf("%zu criteria run, %d failed\n", g_verdicts.size(), failed);
  return failed == 0 ? 0 : 1;
}
