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

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "pcpoison/attacks.hpp"

namespace pcpoison {

namespace {

struct MethodName {
  Method method;
  std::string_view name;
};

constexpr MethodName kMethods[] = {
    {Method::kEm, "em"},        {Method::kAp, "ap"},        {Method::kApT, "ap-t"},
    {Method::kRegEm, "reg-em"}, {Method::kRegAp, "reg-ap"}, {Method::kRegApT, "reg-ap-t"},
    {Method::kFcEm, "fc-em"},   {Method::kFdAp, "fd-ap"},   {Method::kFdApT, "fd-ap-t"},
};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error("config key '" + key + "': expected an integer, got '" + value + "'");
  }
  return out;
}

int parse_count(const std::string& key, const std::string& value) {
  const long long v = parse_int(key, value);
  if (v < -1'000'000'000 || v > 1'000'000'000) throw Error("config key '" + key + "' out of range");
  return static_cast<int>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw Error("config key '" + key + "': expected on/off, got '" + value + "'");
}

std::string_view to_string(LogitLoss loss) {
  return loss == LogitLoss::kMargin ? "margin" : "ce";
}

std::string_view to_string(StepRule rule) {
  switch (rule) {
    case StepRule::kSign: return "sign";
    case StepRule::kRaw: return "raw";
    default: return "auto";
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

Method parse_method(std::string_view name) {
  for (const auto& m : kMethods) {
    if (m.name == name) return m.method;
  }
  throw Error("unknown method '" + std::string(name) + "' (valid methods: " + method_list() + ")");
}

std::string_view to_string(Method method) {
  for (const auto& m : kMethods) {
    if (m.method == method) return m.name;
  }
  return "?";
}

std::string method_list() {
  std::string out;
  for (const auto& m : kMethods) {
    if (!out.empty()) out += ", ";
    out += m.name;
  }
  return out;
}

bool is_targeted(Method m) {
  return m == Method::kApT || m == Method::kRegApT || m == Method::kFdApT;
}

bool is_error_maximizing(Method m) {
  return m == Method::kAp || m == Method::kApT || m == Method::kRegAp || m == Method::kRegApT ||
         m == Method::kFdAp || m == Method::kFdApT;
}

bool is_linf_constrained(Method m) {
  return m == Method::kEm || m == Method::kAp || m == Method::kApT;
}

AttackConfig AttackConfig::defaults(Method method) {
  AttackConfig c;
  c.method = method;
  switch (method) {
    case Method::kFcEm:
      c.batch_size = 128;
      c.epochs = 200;
      c.attack_steps = 10;
      c.poison_lr = 0.015;
      break;
    case Method::kEm:
    case Method::kRegEm:
      c.batch_size = 32;
      c.epochs = 200;
      c.attack_steps = 10;
      c.poison_lr = 0.015;
      break;
    default:  // AP family
      c.batch_size = 32;
      c.epochs = 100;
      c.attack_steps = 250;
      c.poison_lr = 0.001;
      c.per_sample_gradient = true;
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error("invalid config: " + field + " " + why);
  };
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (model_steps < 0) fail("model_steps", "must be >= 0 (0 = one pass)");
  if (poison_steps < 0) fail("poison_steps", "must be >= 0 (0 = one pass)");
  if (attack_steps < 1) fail("attack_steps", "must be >= 1");
  if (!(model_lr > 0.0)) fail("model_lr", "must be > 0");
  if (!(poison_lr > 0.0)) fail("poison_lr", "must be > 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  const bool uses_fc = method == Method::kFcEm ||
                       ((method == Method::kFdAp || method == Method::kFdApT) && zeta != 0.0);
  if (uses_fc && batch_size < 2) fail("batch_size", "must be >= 2 for feature collision");
  if (!(beta >= 0.0)) fail("beta", "must be >= 0");
  if (!(temperature > 0.0)) fail("temperature", "must be > 0");
  if (is_linf_constrained(method) && !(epsilon > 0.0)) fail("epsilon", "must be > 0");
  if (!(zeta >= 0.0)) fail("zeta", "must be >= 0");
  if (adaptive_beta.enabled) {
    if (!(adaptive_beta.scale > 1.0)) fail("adaptive_scale", "must be > 1");
    if (!(adaptive_beta.top_fraction > 0.0 && adaptive_beta.top_fraction < 1.0)) {
      fail("adaptive_top_fraction", "must lie in (0, 1)");
    }
    if (!(adaptive_beta.min_beta > 0.0 && adaptive_beta.min_beta <= adaptive_beta.max_beta)) {
      fail("adaptive_min/adaptive_max", "must satisfy 0 < min <= max");
    }
  }
  if (!(schedule.factor > 0.0 && schedule.factor < 1.0)) fail("plateau_factor", "must lie in (0, 1)");
  if (schedule.patience < 0) fail("plateau_patience", "must be >= 0");
  if (!(schedule.min_lr >= 0.0)) fail("plateau_min_lr", "must be >= 0");
  if (!(pretrain_target_accuracy > 0.0 && pretrain_target_accuracy <= 1.0)) {
    fail("pretrain_target_accuracy", "must lie in (0, 1]");
  }
  bool known = false;
  for (const auto& name : ArchDescriptor::registered_names()) known = known || name == arch;
  if (!known) fail("arch", "'" + arch + "' is not registered");
}

std::string AttackConfig::to_text() const {
  std::ostringstream os;
  os << "method = " << to_string(method) << "\n"
     << "arch = " << arch << "\n"
     << "epochs = " << epochs << "\n"
     << "model_steps = " << model_steps << "\n"
     << "poison_steps = " << poison_steps << "\n"
     << "attack_steps = " << attack_steps << "\n"
     << "model_lr = " << fmt(model_lr) << "\n"
     << "poison_lr = " << fmt(poison_lr) << "\n"
     << "batch_size = " << batch_size << "\n"
     << "beta = " << fmt(beta) << "\n"
     << "temperature = " << fmt(temperature) << "\n"
     << "epsilon = " << fmt(epsilon) << "\n"
     << "zeta = " << fmt(zeta) << "\n"
     << "adaptive_beta = " << (adaptive_beta.enabled ? "on" : "off") << "\n"
     << "adaptive_scale = " << fmt(adaptive_beta.scale) << "\n"
     << "adaptive_top_fraction = " << fmt(adaptive_beta.top_fraction) << "\n"
     << "adaptive_min = " << fmt(adaptive_beta.min_beta) << "\n"
     << "adaptive_max = " << fmt(adaptive_beta.max_beta) << "\n"
     << "target_shift = " << target.shift << "\n"
     << "seed = " << seed << "\n"
     << "optimizer = " << to_string(optimizer) << "\n"
     << "plateau_factor = " << fmt(schedule.factor) << "\n"
     << "plateau_patience = " << schedule.patience << "\n"
     << "plateau_min_lr = " << fmt(schedule.min_lr) << "\n"
     << "plateau_threshold = " << fmt(schedule.threshold) << "\n"
     << "cls_loss = " << to_string(cls_loss) << "\n"
     << "step_rule = " << to_string(step_rule) << "\n"
     << "per_sample_gradient = " << (per_sample_gradient ? "on" : "off") << "\n"
     << "full_batch = " << (full_batch ? "on" : "off") << "\n"
     << "balanced_batches = " << (balanced_batches ? "on" : "off") << "\n"
     << "exclude_self = " << (exclude_self ? "on" : "off") << "\n"
     << "pretrain_target_accuracy = " << fmt(pretrain_target_accuracy) << "\n";
  return os.str();
}

AttackConfig AttackConfig::parse(std::string_view text, std::optional<Method> method) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::optional<Method> file_method;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(content).substr(0, eq));
    std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw Error("config line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) throw Error("config key '" + key + "' given twice");
    if (key == "method") {
      file_method = parse_method(value);
      continue;
    }
    // Victim and dataset keys belong to other readers of the same file.
    if (key.rfind("victim_", 0) == 0 || key.rfind("data_", 0) == 0) continue;
    entries.emplace_back(std::move(key), std::move(value));
  }

  AttackConfig c = defaults(method.value_or(file_method.value_or(Method::kFcEm)));
  for (const auto& [key, value] : entries) {
    if (key == "arch") c.arch = value;
    else if (key == "epochs") c.epochs = parse_count(key, value);
    else if (key == "model_steps") c.model_steps = parse_count(key, value);
    else if (key == "poison_steps") c.poison_steps = parse_count(key, value);
    else if (key == "attack_steps") c.attack_steps = parse_count(key, value);
    else if (key == "model_lr") c.model_lr = parse_double(key, value);
    else if (key == "poison_lr") c.poison_lr = parse_double(key, value);
    else if (key == "batch_size") c.batch_size = parse_count(key, value);
    else if (key == "beta") c.beta = parse_double(key, value);
    else if (key == "temperature") c.temperature = parse_double(key, value);
    else if (key == "epsilon") c.epsilon = parse_double(key, value);
    else if (key == "zeta") c.zeta = parse_double(key, value);
    else if (key == "adaptive_beta") c.adaptive_beta.enabled = parse_bool(key, value);
    else if (key == "adaptive_scale") c.adaptive_beta.scale = parse_double(key, value);
    else if (key == "adaptive_top_fraction") c.adaptive_beta.top_fraction = parse_double(key, value);
    else if (key == "adaptive_min") c.adaptive_beta.min_beta = parse_double(key, value);
    else if (key == "adaptive_max") c.adaptive_beta.max_beta = parse_double(key, value);
    else if (key == "target_shift") c.target.shift = parse_count(key, value);
    else if (key == "seed") {
      const long long v = parse_int(key, value);
      if (v < 0) throw Error("config key 'seed' must be non-negative");
      c.seed = static_cast<std::uint64_t>(v);
    }
    else if (key == "optimizer") c.optimizer = parse_optimizer(value);
    else if (key == "plateau_factor") c.schedule.factor = parse_double(key, value);
    else if (key == "plateau_patience") c.schedule.patience = parse_count(key, value);
    else if (key == "plateau_min_lr") c.schedule.min_lr = parse_double(key, value);
    else if (key == "plateau_threshold") c.schedule.threshold = parse_double(key, value);
    else if (key == "cls_loss") {
      if (value == "ce") c.cls_loss = LogitLoss::kCrossEntropy;
      else if (value == "margin") c.cls_loss = LogitLoss::kMargin;
      else throw Error("config key 'cls_loss': expected ce or margin, got '" + value + "'");
    }
    else if (key == "step_rule") {
      if (value == "auto") c.step_rule = StepRule::kAuto;
      else if (value == "sign") c.step_rule = StepRule::kSign;
      else if (value == "raw") c.step_rule = StepRule::kRaw;
      else throw Error("config key 'step_rule': expected auto, sign or raw, got '" + value + "'");
    }
    else if (key == "per_sample_gradient") c.per_sample_gradient = parse_bool(key, value);
    else if (key == "full_batch") c.full_batch = parse_bool(key, value);
    else if (key == "balanced_batches") c.balanced_batches = parse_bool(key, value);
    else if (key == "exclude_self") c.exclude_self = parse_bool(key, value);
    else if (key == "pretrain_target_accuracy") c.pretrain_target_accuracy = parse_double(key, value);
    else throw Error("unknown config key '" + key + "'");
  }
  return c;
}

AttackConfig AttackConfig::load(const std::filesystem::path& path, std::optional<Method> method) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), method);
}

}  // namespace pcpoison
