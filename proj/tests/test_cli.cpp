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

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "pcpoison/attacks.hpp"
#include "pcpoison/harness.hpp"

namespace fs = std::filesystem;
using pcpoison::cli::kExitOk;
using pcpoison::cli::kExitRuntime;
using pcpoison::cli::kExitValidation;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "pcpoison");
  std::ostringstream out, err;
  const int code = pcpoison::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Tiny run: 12 clouds of 32 points, one attack epoch, two victim epochs.
const char* kTinyConfig =
    "epochs = 1\n"
    "optimizer = adam\n"
    "poison_lr = 0.15\n"
    "per_sample_gradient = on\n"
    "victim_epochs = 2\n"
    "victim_optimizer = adam\n"
    "data_points = 32\n"
    "data_train_per_class = 3\n"
    "data_test_per_class = 2\n";

}  // namespace

TEST_CASE("unknown method exits 1 and lists every valid method") {
  oracle::TempDir dir("cli");
  const Result r = invoke({"poison", "--method", "nope", "--out", (dir.path() / "r").string()});
  CHECK(r.code == kExitValidation);
  for (const char* m : {"em", "ap", "ap-t", "reg-em", "reg-ap", "reg-ap-t", "fc-em", "fd-ap", "fd-ap-t"}) {
    CHECK(r.err.find(m) != std::string::npos);
  }
}

TEST_CASE("missing config file exits 1 and names the path") {
  oracle::TempDir dir("cli");
  const std::string cfg = (dir.path() / "absent.cfg").string();
  const Result r = invoke({"train", "--config", cfg, "--out", (dir.path() / "r").string()});
  CHECK(r.code == kExitValidation);
  CHECK(r.err.find(cfg) != std::string::npos);
}

TEST_CASE("argument errors exit 1, help exits 0") {
  CHECK(invoke({}).code == kExitValidation);
  CHECK(invoke({"frobnicate"}).code == kExitValidation);
  CHECK(invoke({"train", "--epochs", "many"}).code == kExitValidation);
  CHECK(invoke({"train", "--hausdorff", "sideways"}).code == kExitValidation);
  CHECK(invoke({"analyze"}).code == kExitValidation);
  CHECK(invoke({"analyze", "--check", "astrology"}).code == kExitValidation);
  CHECK(invoke({"poison", "--out", "x"}).code == kExitValidation);  // no method anywhere
  const Result help = invoke({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("sweep") != std::string::npos);
}

TEST_CASE("invalid config values exit 1") {
  oracle::TempDir dir("cli");
  const fs::path cfg = dir.path() / "bad.cfg";
  write(cfg, "beta = -1\n");
  CHECK(invoke({"poison", "--method", "reg-em", "--config", cfg.string(), "--out", "x"}).code ==
        kExitValidation);
  write(cfg, "data_points = lots\n");
  CHECK(invoke({"train", "--config", cfg.string(), "--out", "x"}).code == kExitValidation);
  write(cfg, "victim_colour = red\n");
  CHECK(invoke({"train", "--config", cfg.string(), "--out", "x"}).code == kExitValidation);
}

TEST_CASE("bound calculator values and undefined region") {
  Result r = invoke({"analyze", "--check", "bound", "--lipschitz", "2", "--beta", "0.5", "--gap", "0.5"});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["bound"].get<double>() == doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(1e-12));
  r = invoke({"analyze", "--check", "bound", "--lipschitz", "2", "--beta", "0.5", "--gap", "0"});
  CHECK(nlohmann::json::parse(r.out)["bound"].get<double>() == 0.0);
  r = invoke({"analyze", "--check", "bound", "--lipschitz", "2", "--beta", "0.5", "--gap", "5"});
  CHECK(r.code == kExitValidation);
  CHECK(invoke({"analyze", "--check", "bound", "--beta", "1"}).code == kExitValidation);
}

TEST_CASE("report scales D_c by 1e4 and D_h by 1e3") {
  oracle::TempDir dir("cli");
  pcpoison::EvalReport a;
  a.method = "reg-em";
  a.accuracy = 0.8125;
  a.distance = pcpoison::DistanceReport{1.5e-4, 2.5e-3, 0.1, 0.2};
  pcpoison::EvalReport b;
  b.accuracy = 0.95;
  fs::create_directories(dir.path() / "a");
  fs::create_directories(dir.path() / "b");
  write(dir.path() / "a" / "report.json", a.to_json());
  write(dir.path() / "b" / "report.json", b.to_json());
  const fs::path csv = dir.path() / "table.csv";
  const Result r = invoke({"report", (dir.path() / "a").string(), (dir.path() / "b").string(),
                           "--out", csv.string()});
  REQUIRE(r.code == kExitOk);
  const std::string expect = "method,Acc,D_c,D_h\nreg-em,81.25,1.500,2.500\nclean,95.00,0.000,0.000\n";
  CHECK(r.out == expect);
  CHECK(slurp(csv) == expect);
  const Result missing = invoke({"report", (dir.path() / "none").string()});
  CHECK(missing.code == kExitValidation);
  CHECK(missing.err.find("none") != std::string::npos);
}

TEST_CASE("manifest, resume and rerun on changed settings") {
  oracle::TempDir dir("cli");
  const fs::path cfg = dir.path() / "tiny.cfg";
  write(cfg, kTinyConfig);
  const std::string out = (dir.path() / "run").string();
  std::vector<std::string> args = {"transfer", "--method", "fc-em", "--config", cfg.string(),
                                   "--seed", "5", "--out", out, "--victim-arch", "ref-variant"};
  Result r = invoke(args);
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(r.out.find("skipped") == std::string::npos);

  const auto m = nlohmann::json::parse(slurp(fs::path(out) / "manifest.json"));
  CHECK(m["tool"] == "pcpoison");
  CHECK(m["version"] == std::string(pcpoison::version_string()));
  for (const char* stage : {"data", "poison", "train"}) {
    REQUIRE(m["stages"].contains(stage));
    CHECK(m["stages"][stage]["status"] == "done");
    CHECK(m["stages"][stage]["argv"].size() == args.size() + 1);
  }
  CHECK(m["stages"]["poison"]["seeds"]["attack"] == 5);
  CHECK(m["stages"]["train"]["seeds"]["victim"] == 5);
  CHECK(m["stages"]["poison"]["config"].get<std::string>().find("method = fc-em") != std::string::npos);
  const auto rep = pcpoison::EvalReport::from_json(slurp(fs::path(out) / "report.json"));
  CHECK(rep.method == "fc-em");
  CHECK(rep.victim_arch == "ref-variant");
  CHECK(rep.surrogate_arch == "ref-small");
  CHECK(rep.distance.has_value());
  const std::string model_before = slurp(fs::path(out) / "model.pcpm");

  args.push_back("--resume");
  r = invoke(args);
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("data: up to date, skipped") != std::string::npos);
  CHECK(r.out.find("poison: up to date, skipped") != std::string::npos);
  CHECK(r.out.find("train: up to date, skipped") != std::string::npos);

  // A deleted output forces its stage to run again.
  fs::remove(fs::path(out) / "model.pcpm");
  r = invoke(args);
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("poison: up to date, skipped") != std::string::npos);
  CHECK(r.out.find("train: up to date") == std::string::npos);
  CHECK(slurp(fs::path(out) / "model.pcpm") == model_before);

  // A changed attack setting reruns the poison stage and everything after it.
  args.push_back("--beta");
  args.push_back("3");
  r = invoke(args);
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("data: up to date, skipped") != std::string::npos);
  CHECK(r.out.find("poison: up to date") == std::string::npos);
  CHECK(r.out.find("train: up to date") == std::string::npos);
}

TEST_CASE("manifest is written before the heavy stage runs") {
  oracle::TempDir dir("cli");
  const fs::path data = dir.path() / "data";
  fs::create_directories(data);
  write(data / "train.pcd", "not a dataset");
  write(data / "test.pcd", "not a dataset");
  const std::string out = (dir.path() / "run").string();
  const Result r = invoke({"poison", "--method", "em", "--data", data.string(), "--out", out});
  CHECK(r.code == kExitValidation);
  const auto m = nlohmann::json::parse(slurp(fs::path(out) / "manifest.json"));
  CHECK(m["stages"]["poison"]["status"] == "running");
  CHECK(m["stages"]["poison"]["config"].get<std::string>().find("method = em") != std::string::npos);
}

TEST_CASE("train consumes a poison run and eval reproduces its accuracy") {
  oracle::TempDir dir("cli");
  const fs::path cfg = dir.path() / "tiny.cfg";
  write(cfg, kTinyConfig);
  const fs::path p = dir.path() / "p";
  REQUIRE(invoke({"poison", "--method", "reg-em", "--config", cfg.string(), "--out", p.string()}).code ==
          kExitOk);
  for (const char* f : {"deltas.pcdd", "poisoned.pcd", "surrogate.pcpm", "trajectory.csv",
                        "attack.cfg", "run_state.json", "manifest.json"}) {
    CHECK(fs::exists(p / f));
  }
  const fs::path v = dir.path() / "v";
  REQUIRE(invoke({"train", "--config", cfg.string(), "--data", p.string(), "--poison", p.string(),
                  "--out", v.string()})
              .code == kExitOk);
  const auto rep = pcpoison::EvalReport::from_json(slurp(v / "report.json"));
  CHECK(rep.method == "reg-em");
  CHECK(rep.train_provenance == "poisoned(reg-em)");
  const fs::path e = dir.path() / "e";
  REQUIRE(invoke({"eval", "--model", (v / "model.pcpm").string(), "--data", p.string(), "--out",
                  e.string()})
              .code == kExitOk);
  const auto ev = pcpoison::EvalReport::from_json(slurp(e / "eval.json"));
  CHECK(ev.accuracy == rep.accuracy);

  CHECK(invoke({"train", "--config", cfg.string(), "--poison", (dir.path() / "nowhere").string(),
                "--out", v.string()})
            .code == kExitValidation);
  CHECK(invoke({"analyze", "--check", "theorem2", "--run", p.string()}).code == kExitOk);
  const Result t1 = invoke({"analyze", "--check", "theorem1", "--run", p.string(), "--restarts", "1"});
  CHECK(t1.code == kExitOk);
  CHECK(nlohmann::json::parse(t1.out).contains("pass"));
}

TEST_CASE("sweep writes one row per beta") {
  oracle::TempDir dir("cli");
  const fs::path cfg = dir.path() / "tiny.cfg";
  write(cfg, kTinyConfig);
  const fs::path s = dir.path() / "s";
  const Result r = invoke({"sweep", "--method", "fc-em", "--config", cfg.string(), "--betas", "0.5,2",
                           "--out", s.string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const auto j = nlohmann::json::parse(slurp(s / "sweep.json"));
  CHECK(j["betas"].size() == 2);
  CHECK(fs::exists(s / "beta_0.5" / "report.json"));
  CHECK(fs::exists(s / "beta_2" / "deltas.pcdd"));
  const std::string csv = slurp(s / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("theorem3 check over random instances") {
  const Result r = invoke({"analyze", "--check", "theorem3", "--instances", "5"});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["passed"] == 5);
  CHECK(invoke({"analyze", "--check", "theorem3", "--instances", "0"}).code == kExitValidation);
}
