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

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcpoison/analysis.hpp"
#include "pcpoison/attacks.hpp"
#include "pcpoison/core.hpp"
#include "pcpoison/datasets.hpp"
#include "pcpoison/harness.hpp"
#include "pcpoison/io.hpp"
#include "pcpoison/model.hpp"
#include "pcpoison/parallel.hpp"

namespace pcpoison::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Filesystem failures abort the run rather than flag bad input.
class IoFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << text;
  if (!out) throw IoFailure("write failed for " + path.string());
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Hash of the stage's settings, the tool version and every input file's bytes.
std::string stage_hash(const std::vector<std::string>& parts, const std::vector<fs::path>& files) {
  std::uint64_t h = fnv1a(version_string());
  for (const auto& p : parts) h = fnv1a(p + '\x1f', h);
  for (const auto& f : files) h = fnv1a(read_text(f) + '\x1e', h);
  return hex64(h);
}

// Dataset-generation keys (data_*) of a config file.
struct DataConfig {
  int points = 256;
  int train_per_class = 100;
  int test_per_class = 50;
  std::uint64_t seed = 0;

  static DataConfig parse(const std::string& text) {
    DataConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.rfind("data_", 0) != 0) continue;
      long long v = 0;
      try {
        std::size_t used = 0;
        v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw Error("config key '" + key + "': expected an integer, got '" + value + "'");
      }
      if (v < 0 || (key != "data_seed" && v == 0)) {
        throw Error("config key '" + key + "' out of range");
      }
      if (key == "data_points") c.points = static_cast<int>(v);
      else if (key == "data_train_per_class") c.train_per_class = static_cast<int>(v);
      else if (key == "data_test_per_class") c.test_per_class = static_cast<int>(v);
      else if (key == "data_seed") c.seed = static_cast<std::uint64_t>(v);
      else throw Error("unknown config key '" + key + "'");
    }
    return c;
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os << "data_points = " << points << "\n"
       << "data_train_per_class = " << train_per_class << "\n"
       << "data_test_per_class = " << test_per_class << "\n"
       << "data_seed = " << seed << "\n";
    return os.str();
  }
};

struct Options {
  std::string method;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> beta;
  std::optional<double> epsilon;
  std::optional<int> epochs;
  std::string arch;
  std::string hausdorff = "two-sided-sq";
  bool resume = false;
  std::string data;
  // Subcommand-specific.
  std::string poison;
  std::string victim_arch;
  std::string model;
  std::vector<double> betas{0.1, 1.0, 10.0};
  std::string check;
  std::string run_dir;
  int instances = 50;
  std::optional<double> lipschitz;
  std::optional<double> gap;
  std::vector<std::string> models;
  std::vector<std::string> runs;
  std::string hdf5_train;
  std::string hdf5_test;
  int subsample = 0;
  int restarts = 3;
};

struct Configs {
  std::string text;  // raw config file contents
  AttackConfig attack;
  TrainConfig victim;
  DataConfig data;
  HausdorffVariant variant = HausdorffVariant::kTwoSidedSquared;
};

bool has_key(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    k.erase(0, k.find_first_not_of(" \t"));
    k.erase(k.find_last_not_of(" \t") + 1);
    if (k == key) return true;
  }
  return false;
}

// Reads --config (if any) and applies flag overrides. --arch targets the
// attack surrogate unless `arch_is_victim`.
Configs load_configs(const Options& o, bool need_method, bool arch_is_victim = false) {
  Configs c;
  if (!o.config.empty()) {
    std::ifstream probe(o.config);
    if (!probe) throw Error("cannot open config file " + o.config);
    c.text = read_text(o.config);
  }
  std::optional<Method> method;
  if (!o.method.empty()) method = parse_method(o.method);
  if (need_method && !method && !has_key(c.text, "method")) {
    throw Error("no attack method given; use --method (" + method_list() + ")");
  }
  c.attack = AttackConfig::parse(c.text, method);
  c.victim = TrainConfig::parse(c.text);
  c.data = DataConfig::parse(c.text);
  c.variant = parse_hausdorff_variant(o.hausdorff);
  if (o.seed) {
    c.attack.seed = *o.seed;
    c.victim.seed = *o.seed;
    c.data.seed = *o.seed;
  }
  if (o.beta) c.attack.beta = *o.beta;
  if (o.epsilon) c.attack.epsilon = *o.epsilon;
  if (o.epochs) {
    if (arch_is_victim) c.victim.epochs = *o.epochs;
    else c.attack.epochs = *o.epochs;
  }
  if (!o.arch.empty()) {
    if (arch_is_victim) c.victim.arch = o.arch;
    else c.attack.arch = o.arch;
  }
  if (!o.victim_arch.empty()) c.victim.arch = o.victim_arch;
  c.attack.validate();
  c.victim.validate();
  return c;
}

// Output directory with a manifest.json recording every stage run in it.
class RunDir {
 public:
  RunDir(const fs::path& dir, std::vector<std::string> argv) : dir_(dir), argv_(std::move(argv)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoFailure("cannot create " + dir_.string() + ": " + ec.message());
    const fs::path m = manifest_path();
    if (fs::exists(m)) {
      try {
        manifest_ = Json::parse(read_text(m));
      } catch (const Json::exception& e) {
        throw Error("corrupt manifest " + m.string() + ": " + e.what());
      }
    } else {
      manifest_ = Json{{"tool", "pcpoison"}, {"version", std::string(version_string())},
                       {"stages", Json::object()}};
    }
  }

  [[nodiscard]] fs::path file(const std::string& name) const { return dir_ / name; }
  [[nodiscard]] const fs::path& dir() const { return dir_; }

  [[nodiscard]] bool done(const std::string& stage, const std::string& hash) const {
    const auto& stages = manifest_["stages"];
    if (!stages.contains(stage)) return false;
    const auto& s = stages[stage];
    if (s.value("status", "") != "done" || s.value("input_hash", "") != hash) return false;
    for (const auto& name : s["outputs"]) {
      if (!fs::exists(dir_ / name.get<std::string>())) return false;
    }
    return true;
  }

  // Recorded before any heavy work so an aborted stage still leaves a trace.
  void begin(const std::string& stage, const std::string& hash, const std::string& config_echo,
             Json seeds) {
    Json s;
    s["command"] = argv_.size() > 1 ? argv_[1] : "";
    s["argv"] = argv_;
    s["version"] = std::string(version_string());
    s["input_hash"] = hash;
    s["config"] = config_echo;
    s["seeds"] = std::move(seeds);
    s["threads"] = thread_count();
    s["status"] = "running";
    s["outputs"] = Json::array();
    manifest_["stages"][stage] = std::move(s);
    flush();
  }

  void finish(const std::string& stage, const std::vector<std::string>& outputs) {
    auto& s = manifest_["stages"][stage];
    s["status"] = "done";
    s["outputs"] = outputs;
    flush();
  }

 private:
  [[nodiscard]] fs::path manifest_path() const { return dir_ / "manifest.json"; }
  void flush() { write_text(manifest_path(), manifest_.dump(2) + "\n"); }

  fs::path dir_;
  std::vector<std::string> argv_;
  Json manifest_;
};

struct Ctx {
  const Options& o;
  std::ostream& out;
  std::vector<std::string> argv;
};

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw Error("--out is required");
  return o.out;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw Error("missing " + what + " " + p.string());
}

struct DataPaths {
  fs::path train;
  fs::path test;
};

// --data DIR (train.pcd, test.pcd) or a benchmark generated into the run dir.
DataPaths ensure_data(const Ctx& ctx, const Configs& c, RunDir& run) {
  if (!ctx.o.data.empty()) {
    const fs::path dir = ctx.o.data;
    DataPaths p{dir / "train.pcd", dir / "test.pcd"};
    require_file(p.train, "dataset file");
    require_file(p.test, "dataset file");
    return p;
  }
  DataPaths p{run.file("train.pcd"), run.file("test.pcd")};
  const std::string echo = c.data.to_text();
  const std::string hash = stage_hash({"data", echo}, {});
  if (ctx.o.resume && run.done("data", hash)) {
    ctx.out << "data: up to date, skipped\n";
    return p;
  }
  run.begin("data", hash, echo, Json{{"data", c.data.seed}});
  const Benchmark b =
      default_benchmark(c.data.seed, c.data.points, c.data.train_per_class, c.data.test_per_class);
  save_dataset(p.train, b.train);
  save_dataset(p.test, b.test);
  run.finish("data", {"train.pcd", "test.pcd"});
  ctx.out << "data: " << b.train.size() << " train, " << b.test.size() << " test clouds\n";
  return p;
}

Json distance_json(const DistanceReport& d) {
  return Json{{"chamfer_mean", d.chamfer_mean},
              {"hausdorff_mean", d.hausdorff_mean},
              {"linf_max", d.linf_max},
              {"l2_mean", d.l2_mean}};
}

Json run_state_json(const PoisonRun& r, const DistanceReport& d, HausdorffVariant v) {
  Json traj = Json::array();
  for (const auto& e : r.trajectory) {
    traj.push_back(Json{{"epoch", e.epoch},
                        {"attack_loss", e.attack_loss},
                        {"model_loss", e.model_loss},
                        {"cls_loss", e.cls_loss},
                        {"fc_loss", e.fc_loss},
                        {"beta_mean", e.beta_mean},
                        {"distance", distance_json(e.distance)}});
  }
  return Json{{"method", std::string(to_string(r.config.method))},
              {"hausdorff_variant", std::string(to_string(v))},
              {"distance", distance_json(d)},
              {"betas", r.betas},
              {"fc_grad_norm_max", r.fc_grad_norm_max},
              {"trajectory", traj}};
}

DistanceReport distance_from_json(const Json& j) {
  DistanceReport d;
  d.chamfer_mean = j.at("chamfer_mean").get<double>();
  d.hausdorff_mean = j.at("hausdorff_mean").get<double>();
  d.linf_max = j.at("linf_max").get<double>();
  d.l2_mean = j.at("l2_mean").get<double>();
  return d;
}

const std::vector<std::string> kPoisonOutputs = {"deltas.pcdd", "poisoned.pcd", "surrogate.pcpm",
                                                 "trajectory.csv", "attack.cfg", "run_state.json"};

void stage_poison(const Ctx& ctx, const Configs& c, const DataPaths& data, RunDir& run) {
  const std::string echo = c.attack.to_text();
  const std::string hash = stage_hash({"poison", echo, std::string(to_string(c.variant))}, {data.train});
  if (ctx.o.resume && run.done("poison", hash)) {
    ctx.out << "poison: up to date, skipped\n";
    return;
  }
  run.begin("poison", hash, echo, Json{{"attack", c.attack.seed}});
  const LabeledDataset train = load_dataset(data.train);
  const PoisonRun r = run_attack(train, c.attack, [&](const EpochRecord& e) {
    ctx.out << "poison: epoch " << e.epoch << " loss " << e.attack_loss << " D_c "
            << e.distance.chamfer_mean << "\n";
  });
  const std::string method(to_string(c.attack.method));
  save_perturbations(run.file("deltas.pcdd"), r.deltas,
                     PerturbationFileInfo{train.num_classes, c.attack.seed, method});
  save_dataset(run.file("poisoned.pcd"), materialize(train, r.deltas, method));
  r.surrogate.save(run.file("surrogate.pcpm"));
  write_text(run.file("trajectory.csv"), r.trajectory_csv());
  write_text(run.file("attack.cfg"), echo);
  const DistanceReport d = distance_report(train, r.deltas, c.variant);
  write_text(run.file("run_state.json"), run_state_json(r, d, c.variant).dump(2) + "\n");
  run.finish("poison", kPoisonOutputs);
  ctx.out << "poison: " << method << " D_c " << d.chamfer_mean << " D_h " << d.hausdorff_mean << "\n";
}

// Rebuilds a PoisonRun from a poison stage's outputs.
PoisonRun load_poison_run(const fs::path& dir) {
  for (const auto& name : kPoisonOutputs) require_file(dir / name, "poison output");
  PoisonRun r{PerturbationSet{}, {}, PointNetClassifier::load(dir / "surrogate.pcpm"),
              AttackConfig::parse(read_text(dir / "attack.cfg")), {}, {}};
  r.deltas = load_perturbations(dir / "deltas.pcdd");
  Json state;
  try {
    state = Json::parse(read_text(dir / "run_state.json"));
    r.betas = state.at("betas").get<std::vector<double>>();
    r.fc_grad_norm_max = state.at("fc_grad_norm_max").get<std::vector<double>>();
    for (const auto& e : state.at("trajectory")) {
      EpochRecord rec;
      rec.epoch = e.at("epoch").get<int>();
      rec.attack_loss = e.at("attack_loss").get<double>();
      rec.model_loss = e.at("model_loss").get<double>();
      rec.cls_loss = e.at("cls_loss").get<double>();
      rec.fc_loss = e.at("fc_loss").get<double>();
      rec.beta_mean = e.at("beta_mean").get<double>();
      rec.distance = distance_from_json(e.at("distance"));
      r.trajectory.push_back(rec);
    }
  } catch (const Json::exception& e) {
    throw Error("corrupt " + (dir / "run_state.json").string() + ": " + e.what());
  }
  return r;
}

void stage_train(const Ctx& ctx, const Configs& c, const DataPaths& data,
                 const std::optional<fs::path>& poison_dir, RunDir& run) {
  std::vector<fs::path> inputs = {data.train, data.test};
  std::string attack_echo;
  if (poison_dir) {
    for (const char* name : {"deltas.pcdd", "attack.cfg"}) {
      require_file(*poison_dir / name, "poison output");
      inputs.push_back(*poison_dir / name);
    }
    attack_echo = read_text(*poison_dir / "attack.cfg");
  }
  const std::string echo = attack_echo + c.victim.to_text();
  const std::string hash = stage_hash({"train", echo, std::string(to_string(c.variant))}, inputs);
  if (ctx.o.resume && run.done("train", hash)) {
    ctx.out << "train: up to date, skipped\n";
    return;
  }
  run.begin("train", hash, echo, Json{{"victim", c.victim.seed}});
  const LabeledDataset clean = load_dataset(data.train);
  const LabeledDataset test = load_dataset(data.test);
  LabeledDataset train = clean;
  std::optional<DistanceReport> dist;
  std::string method = "clean";
  std::string surrogate_arch;
  if (poison_dir) {
    PerturbationFileInfo info;
    const PerturbationSet deltas = load_perturbations(*poison_dir / "deltas.pcdd", &info);
    train = materialize(clean, deltas, info.method);
    dist = distance_report(clean, deltas, c.variant);
    method = info.method;
    surrogate_arch = AttackConfig::parse(attack_echo).arch;
  }
  TrainResult r = train_victim(train, c.victim, &test, [&](const EpochCurve& e, const PointNetClassifier&) {
    if (e.epoch % 10 == 0 || e.epoch == c.victim.epochs) {
      ctx.out << "train: epoch " << e.epoch << " loss " << e.train_loss << " val " << e.val_accuracy
              << " test " << e.test_accuracy << "\n";
    }
  });
  EvalReport& rep = r.report;
  rep.method = method;
  rep.train_provenance = train.provenance;
  rep.distance = dist;
  rep.hausdorff_variant = c.variant;
  rep.surrogate_arch = surrogate_arch;
  rep.victim_arch = c.victim.arch;
  rep.config_echo = echo;
  rep.seed = c.victim.seed;
  r.model.save(run.file("model.pcpm"));
  write_text(run.file("report.json"), rep.to_json());
  write_text(run.file("curves.csv"), rep.curves_csv());
  run.finish("train", {"model.pcpm", "report.json", "curves.csv"});
  ctx.out << "train: " << method << " test accuracy " << rep.accuracy << "\n";
}

int cmd_gen_data(const Ctx& ctx) {
  const Configs c = load_configs(ctx.o, false);
  RunDir run(require_out(ctx.o), ctx.argv);
  if (ctx.o.hdf5_train.empty() != ctx.o.hdf5_test.empty()) {
    throw Error("--hdf5-train and --hdf5-test go together");
  }
  if (ctx.o.hdf5_train.empty()) {
    Options o = ctx.o;
    o.data.clear();
    ensure_data(Ctx{o, ctx.out, ctx.argv}, c, run);
    return kExitOk;
  }
  require_file(ctx.o.hdf5_train, "HDF5 file");
  require_file(ctx.o.hdf5_test, "HDF5 file");
  const std::string echo = c.data.to_text() + "subsample = " + std::to_string(ctx.o.subsample) + "\n";
  const std::string hash = stage_hash({"data", echo}, {ctx.o.hdf5_train, ctx.o.hdf5_test});
  if (ctx.o.resume && run.done("data", hash)) {
    ctx.out << "data: up to date, skipped\n";
    return kExitOk;
  }
  run.begin("data", hash, echo, Json{{"data", c.data.seed}});
  save_dataset(run.file("train.pcd"), load_hdf5(ctx.o.hdf5_train, ctx.o.subsample, c.data.seed));
  save_dataset(run.file("test.pcd"), load_hdf5(ctx.o.hdf5_test, ctx.o.subsample, c.data.seed));
  run.finish("data", {"train.pcd", "test.pcd"});
  return kExitOk;
}

int cmd_poison(const Ctx& ctx) {
  const Configs c = load_configs(ctx.o, true);
  RunDir run(require_out(ctx.o), ctx.argv);
  stage_poison(ctx, c, ensure_data(ctx, c, run), run);
  return kExitOk;
}

int cmd_train(const Ctx& ctx) {
  const Configs c = load_configs(ctx.o, false, true);
  RunDir run(require_out(ctx.o), ctx.argv);
  std::optional<fs::path> poison;
  if (!ctx.o.poison.empty()) poison = fs::path(ctx.o.poison);
  stage_train(ctx, c, ensure_data(ctx, c, run), poison, run);
  return kExitOk;
}

int cmd_eval(const Ctx& ctx) {
  if (ctx.o.model.empty()) throw Error("--model is required");
  if (ctx.o.data.empty()) throw Error("--data is required");
  require_file(ctx.o.model, "model file");
  const fs::path test_path = fs::is_directory(ctx.o.data) ? fs::path(ctx.o.data) / "test.pcd"
                                                          : fs::path(ctx.o.data);
  require_file(test_path, "dataset file");
  RunDir run(require_out(ctx.o), ctx.argv);
  const std::string hash = stage_hash({"eval"}, {ctx.o.model, test_path});
  if (ctx.o.resume && run.done("eval", hash)) {
    ctx.out << "eval: up to date, skipped\n";
    return kExitOk;
  }
  run.begin("eval", hash, "", Json::object());
  const PointNetClassifier model = PointNetClassifier::load(ctx.o.model);
  EvalReport rep = evaluate(model, load_dataset(test_path));
  rep.victim_arch = model.arch().name;
  write_text(run.file("eval.json"), rep.to_json());
  run.finish("eval", {"eval.json"});
  ctx.out << "eval: test accuracy " << rep.accuracy << "\n";
  return kExitOk;
}

int cmd_transfer(const Ctx& ctx) {
  const Configs c = load_configs(ctx.o, true);
  RunDir run(require_out(ctx.o), ctx.argv);
  const DataPaths data = ensure_data(ctx, c, run);
  stage_poison(ctx, c, data, run);
  stage_train(ctx, c, data, run.dir(), run);
  return kExitOk;
}

std::string beta_tag(double beta) {
  std::ostringstream os;
  os << beta;
  return "beta_" + os.str();
}

int cmd_sweep(const Ctx& ctx) {
  const Configs c = load_configs(ctx.o, true);
  if (ctx.o.betas.empty()) throw Error("--betas needs at least one value");
  RunDir run(require_out(ctx.o), ctx.argv);
  const DataPaths data = ensure_data(ctx, c, run);
  std::ostringstream list;
  for (double b : ctx.o.betas) list << b << ',';
  const std::string echo = c.attack.to_text() + c.victim.to_text() + "betas = " + list.str() + "\n";
  const std::string hash = stage_hash({"sweep", echo}, {data.train, data.test});
  if (ctx.o.resume && run.done("sweep", hash)) {
    ctx.out << "sweep: up to date, skipped\n";
    return kExitOk;
  }
  run.begin("sweep", hash, echo, Json{{"attack", c.attack.seed}, {"victim", c.victim.seed}});
  const LabeledDataset train = load_dataset(data.train);
  const LabeledDataset test = load_dataset(data.test);
  std::vector<SweepRow> rows = beta_sweep(train, test, c.attack, c.victim, ctx.o.betas);
  std::vector<std::string> outputs = {"sweep.csv", "sweep.json"};
  std::vector<double> acc, dc, betas;
  for (auto& row : rows) {
    const std::string tag = beta_tag(row.beta);
    fs::create_directories(run.file(tag));
    save_perturbations(run.file(tag) / "deltas.pcdd", row.deltas,
                       PerturbationFileInfo{train.num_classes, c.attack.seed,
                                            std::string(to_string(c.attack.method))});
    row.report.config_echo = echo;
    write_text(run.file(tag) / "report.json", row.report.to_json());
    outputs.push_back(tag + "/deltas.pcdd");
    outputs.push_back(tag + "/report.json");
    acc.push_back(row.accuracy);
    dc.push_back(row.chamfer);
    betas.push_back(row.beta);
    ctx.out << "sweep: beta " << row.beta << " acc " << row.accuracy << " D_c " << row.chamfer << "\n";
  }
  const auto [amin, amax] = std::minmax_element(acc.begin(), acc.end());
  const auto [dmin, dmax] = std::minmax_element(dc.begin(), dc.end());
  Json summary{{"method", std::string(to_string(c.attack.method))},
               {"betas", betas},
               {"accuracy", acc},
               {"chamfer", dc},
               {"accuracy_non_decreasing", non_decreasing(acc)},
               {"chamfer_non_increasing", non_increasing(dc)},
               {"accuracy_range", *amax - *amin},
               {"chamfer_ratio", *dmin > 0.0 ? *dmax / *dmin : INFINITY}};
  if (rows.size() >= 2) {
    summary["spearman_beta_accuracy"] = spearman(betas, acc);
    summary["spearman_beta_chamfer"] = spearman(betas, dc);
  }
  write_text(run.file("sweep.csv"), sweep_csv(rows));
  write_text(run.file("sweep.json"), summary.dump(2) + "\n");
  run.finish("sweep", outputs);
  return kExitOk;
}

// Writes `j` to --out/<name> when --out is set, and always to stdout.
void emit(const Ctx& ctx, const std::string& name, const Json& j) {
  if (!ctx.o.out.empty()) {
    std::error_code ec;
    fs::create_directories(ctx.o.out, ec);
    if (ec) throw IoFailure("cannot create " + ctx.o.out + ": " + ec.message());
    write_text(fs::path(ctx.o.out) / name, j.dump(2) + "\n");
  }
  ctx.out << j.dump(2) << "\n";
}

LabeledDataset analysis_train_set(const Ctx& ctx, const Configs& c) {
  if (!ctx.o.data.empty()) {
    const fs::path p = fs::path(ctx.o.data) / "train.pcd";
    require_file(p, "dataset file");
    return load_dataset(p);
  }
  return default_benchmark(c.data.seed, c.data.points, c.data.train_per_class,
                           c.data.test_per_class).train;
}

int cmd_analyze(const Ctx& ctx) {
  const std::string& check = ctx.o.check;
  if (check == "bound") {
    if (!ctx.o.lipschitz || !ctx.o.beta || !ctx.o.gap) {
      throw Error("bound needs --lipschitz, --beta and --gap");
    }
    const BoundInputs in{*ctx.o.lipschitz, *ctx.o.beta, *ctx.o.gap};
    emit(ctx, "bound.json",
         Json{{"lipschitz", in.lipschitz}, {"beta", in.beta}, {"gap", in.gap},
              {"bound", theorem2_bound(in)}});
    return kExitOk;
  }
  if (check == "theorem3") {
    if (ctx.o.instances <= 0) throw Error("--instances must be positive");
    const std::uint64_t base = ctx.o.seed.value_or(0);
    Json certs = Json::array();
    int passed = 0;
    for (int t = 0; t < ctx.o.instances; ++t) {
      const auto inst = random_separability_instance(base + static_cast<std::uint64_t>(t));
      const auto cert = theorem3_construct(inst).second;
      passed += cert.pass() ? 1 : 0;
      certs.push_back(Json{{"seed", base + static_cast<std::uint64_t>(t)},
                           {"gamma", cert.gamma},
                           {"alpha_hat", cert.alpha_hat},
                           {"separable", cert.separable},
                           {"mean_chamfer", cert.mean_chamfer},
                           {"bound", cert.bound},
                           {"pass", cert.pass()}});
    }
    emit(ctx, "theorem3.json",
         Json{{"instances", ctx.o.instances}, {"passed", passed}, {"certificates", certs}});
    return kExitOk;
  }
  if (check == "cosine") {
    if (ctx.o.models.empty()) throw Error("cosine needs --models");
    std::vector<PointNetClassifier> loaded;
    loaded.reserve(ctx.o.models.size());
    for (const auto& m : ctx.o.models) {
      require_file(m, "model file");
      loaded.push_back(PointNetClassifier::load(m));
    }
    std::map<std::string, const PointNetClassifier*> named;
    for (std::size_t i = 0; i < loaded.size(); ++i) named[ctx.o.models[i]] = &loaded[i];
    Json j = Json::object();
    for (const auto& [k, v] : cosine_diagnostic(named)) j[k] = v;
    emit(ctx, "cosine.json", j);
    return kExitOk;
  }
  if (check == "divergence") {
    const Configs c = load_configs(ctx.o, false, true);
    const DivergenceProbe p =
        fc_loss_divergence_probe(analysis_train_set(ctx, c), c.victim, c.attack.batch_size,
                                 c.attack.temperature);
    if (!ctx.o.out.empty()) {
      fs::create_directories(ctx.o.out);
      write_text(fs::path(ctx.o.out) / "divergence.csv", p.csv());
    }
    emit(ctx, "divergence.json",
         Json{{"cross_entropy", p.cross_entropy},
              {"feature_collision", p.feature_collision},
              {"checked", p.checked},
              {"ce_converged", p.ce_converged},
              {"fc_stalled", p.fc_stalled},
              {"pass", p.pass()}});
    return kExitOk;
  }
  if (check == "theorem1" || check == "theorem2") {
    if (ctx.o.run_dir.empty()) throw Error(check + " needs --run DIR from a poison run");
    const Configs c = load_configs(ctx.o, false);
    const PoisonRun r = load_poison_run(ctx.o.run_dir);
    const fs::path train_path = fs::path(ctx.o.data.empty() ? ctx.o.run_dir : ctx.o.data) / "train.pcd";
    require_file(train_path, "dataset file");
    const LabeledDataset train = load_dataset(train_path);
    if (check == "theorem2") {
      const Theorem2Check t = theorem2_check(train, r);
      emit(ctx, "theorem2.json",
           Json{{"lipschitz", t.lipschitz}, {"beta", t.beta}, {"loss_clean", t.loss_clean},
                {"loss_poisoned", t.loss_poisoned}, {"gap", t.gap}, {"defined", t.defined},
                {"bound", t.bound}, {"max_l2", t.max_l2}, {"covered", t.covered},
                {"total", t.total}, {"pass", t.pass}, {"diagnostic", t.diagnostic}});
      return kExitOk;
    }
    if (ctx.o.restarts <= 0) throw Error("--restarts must be positive");
    const Theorem1Report t =
        theorem1_gap_check(train, r, make_min_loss_trainer(r.config), ctx.o.restarts);
    (void)c;
    emit(ctx, "theorem1.json",
         Json{{"applicable", t.applicable}, {"converged", t.converged}, {"beta", t.beta},
              {"mean_chamfer", t.mean_chamfer}, {"lhs", t.lhs},
              {"clean_restarts", t.clean_restarts}, {"min_clean_loss", t.min_clean_loss},
              {"min_poisoned_loss", t.min_poisoned_loss}, {"rhs", t.rhs},
              {"tolerance", t.tolerance}, {"pass", t.pass}, {"diagnostic", t.diagnostic}});
    return kExitOk;
  }
  throw Error("unknown check '" + check +
              "'; valid: theorem1, theorem2, theorem3, bound, divergence, cosine");
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int cmd_report(const Ctx& ctx) {
  if (ctx.o.runs.empty()) throw Error("report needs at least one run directory");
  std::ostringstream csv;
  csv << "method,Acc,D_c,D_h\n";
  for (const auto& dir : ctx.o.runs) {
    const fs::path p = fs::path(dir) / "report.json";
    require_file(p, "report");
    EvalReport r;
    try {
      r = EvalReport::from_json(read_text(p));
    } catch (const std::exception& e) {
      throw Error("unreadable report " + p.string() + ": " + e.what());
    }
    csv << r.method << ',' << fixed(100.0 * r.accuracy, 2) << ',';
    if (r.distance) {
      csv << fixed(1e4 * r.distance->chamfer_mean, 3) << ','
          << fixed(1e3 * r.distance->hausdorff_mean, 3) << '\n';
    } else {
      csv << "0.000,0.000\n";
    }
  }
  if (!ctx.o.out.empty()) {
    const fs::path out = ctx.o.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out, csv.str());
  }
  ctx.out << csv.str();
  return kExitOk;
}

void add_common(CLI::App* sub, Options& o, bool method) {
  if (method) sub->add_option("--method", o.method, "Attack method: " + method_list());
  sub->add_option("--config", o.config, "Config file (key = value)");
  sub->add_option("--seed", o.seed, "Seed for data, attack and victim");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_flag("--resume", o.resume, "Skip stages whose manifest hash matches");
  sub->add_option("--data", o.data, "Directory holding train.pcd and test.pcd");
  sub->add_option("--hausdorff", o.hausdorff, "two-sided-sq|one-sided-sq|one-sided")
      ->check(CLI::IsMember({"two-sided-sq", "one-sided-sq", "one-sided"}));
}

void add_attack(CLI::App* sub, Options& o) {
  sub->add_option("--beta", o.beta, "Chamfer weight");
  sub->add_option("--epsilon", o.epsilon, "l-inf budget");
  sub->add_option("--epochs", o.epochs, "Attack epochs");
  sub->add_option("--arch", o.arch, "Surrogate architecture (ref-small, ref-variant)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Point-cloud poisoning toolkit"};
  app.name(args.empty() ? "pcpoison" : args.front());
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version_string()));

  auto* gen = app.add_subcommand("gen-data", "Generate or import a dataset");
  add_common(gen, o, false);
  gen->add_option("--hdf5-train", o.hdf5_train, "HDF5 training file");
  gen->add_option("--hdf5-test", o.hdf5_test, "HDF5 test file");
  gen->add_option("--subsample", o.subsample, "Points per cloud after subsampling (0 keeps all)");

  auto* poison = app.add_subcommand("poison", "Craft poison perturbations");
  add_common(poison, o, true);
  add_attack(poison, o);

  auto* train = app.add_subcommand("train", "Train a victim on clean or poisoned data");
  add_common(train, o, false);
  train->add_option("--poison", o.poison, "Poison run directory");
  train->add_option("--epochs", o.epochs, "Victim epochs");
  train->add_option("--arch", o.arch, "Victim architecture (ref-small, ref-variant)");

  auto* eval = app.add_subcommand("eval", "Evaluate a saved model");
  add_common(eval, o, false);
  eval->add_option("--model", o.model, "Model file");

  auto* transfer = app.add_subcommand("transfer", "Poison with one architecture, train another");
  add_common(transfer, o, true);
  add_attack(transfer, o);
  transfer->add_option("--victim-arch", o.victim_arch, "Victim architecture");

  auto* sweep = app.add_subcommand("sweep", "Sweep the chamfer weight");
  add_common(sweep, o, true);
  add_attack(sweep, o);
  sweep->add_option("--betas", o.betas, "Comma-separated beta values")->delimiter(',');

  auto* analyze = app.add_subcommand("analyze", "Theory checks and diagnostics");
  add_common(analyze, o, false);
  analyze->add_option("--check", o.check, "theorem1|theorem2|theorem3|bound|divergence|cosine")
      ->required();
  analyze->add_option("--run", o.run_dir, "Poison run directory");
  analyze->add_option("--instances", o.instances, "Random instances for theorem3");
  analyze->add_option("--restarts", o.restarts, "Clean-training restarts for theorem1");
  analyze->add_option("--lipschitz", o.lipschitz, "Lipschitz constant L");
  analyze->add_option("--beta", o.beta, "Chamfer weight");
  analyze->add_option("--gap", o.gap, "Loss gap Delta");
  analyze->add_option("--models", o.models, "Model files")->delimiter(',');
  analyze->add_option("--epochs", o.epochs, "Victim epochs");
  analyze->add_option("--arch", o.arch, "Victim architecture");

  auto* report = app.add_subcommand("report", "Merge run reports into a CSV table");
  report->add_option("runs", o.runs, "Run directories holding report.json")->required();
  report->add_option("--out", o.out, "CSV output file");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    app.parse(rev);
    const Ctx ctx{o, out, args};
    if (gen->parsed()) return cmd_gen_data(ctx);
    if (poison->parsed()) return cmd_poison(ctx);
    if (train->parsed()) return cmd_train(ctx);
    if (eval->parsed()) return cmd_eval(ctx);
    if (transfer->parsed()) return cmd_transfer(ctx);
    if (sweep->parsed()) return cmd_sweep(ctx);
    if (analyze->parsed()) return cmd_analyze(ctx);
    if (report->parsed()) return cmd_report(ctx);
    return kExitValidation;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version_string() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace pcpoison::cli
