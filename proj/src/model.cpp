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

#include "pcpoison/model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <random>

#include "binary_stream.hpp"

namespace pcpoison {

namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'P', 'C', 'P', 'M'};

struct NamedArch {
  std::string_view name;
  std::vector<int> widths;
};

const std::vector<NamedArch>& registry() {
  static const std::vector<NamedArch> archs = {
      {"ref-small", {64, 128, 256}},
      {"ref-variant", {32, 64, 128}},
  };
  return archs;
}

}  // namespace

std::string ArchDescriptor::to_string() const {
  return name + ":" + std::to_string(num_classes);
}

ArchDescriptor ArchDescriptor::named(std::string_view name, int num_classes) {
  if (num_classes < 1) throw Error("architecture needs at least one class");
  for (const auto& a : registry()) {
    if (a.name == name) return ArchDescriptor{std::string(name), a.widths, num_classes};
  }
  std::string known;
  for (const auto& n : registered_names()) known += (known.empty() ? "" : ", ") + n;
  throw Error("unknown architecture '" + std::string(name) + "' (known: " + known + ")");
}

ArchDescriptor ArchDescriptor::parse(std::string_view descriptor) {
  const auto colon = descriptor.rfind(':');
  if (colon == std::string_view::npos) {
    throw Error("malformed architecture descriptor '" + std::string(descriptor) + "'");
  }
  int classes = 0;
  const auto tail = descriptor.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), classes);
  if (ec != std::errc() || ptr != tail.data() + tail.size()) {
    throw Error("malformed class count in descriptor '" + std::string(descriptor) + "'");
  }
  return named(descriptor.substr(0, colon), classes);
}

std::vector<std::string> ArchDescriptor::registered_names() {
  std::vector<std::string> out;
  for (const auto& a : registry()) out.emplace_back(a.name);
  return out;
}

PointNetClassifier::PointNetClassifier(ArchDescriptor arch) : arch_(std::move(arch)) {
  if (arch_.widths.empty()) throw Error("architecture has no hidden layers");
  Eigen::Index offset = 0;
  int in = 3;
  auto add = [&](int out) {
    LayerOffsets l;
    l.rows = out;
    l.cols = in;
    l.weight = offset;
    offset += static_cast<Eigen::Index>(out) * in;
    l.bias = offset;
    offset += out;
    layers_.push_back(l);
    in = out;
  };
  for (int w : arch_.widths) add(w);
  add(arch_.num_classes);
  params_ = Eigen::VectorXd::Zero(offset);
}

PointNetClassifier PointNetClassifier::init(std::uint64_t seed, const ArchDescriptor& arch) {
  PointNetClassifier m(arch);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < m.layers_.size(); ++l) {
    const auto& lo = m.layers_[l];
    const double scale = std::sqrt(2.0 / lo.cols);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(lo.rows) * lo.cols; ++i) {
      m.params_[lo.weight + i] = scale * normal(rng);
    }
  }
  // Head: Gram-Schmidt on Gaussian rows, unit norm. Needs C <= d.
  Eigen::MatrixXd head(arch.num_classes, arch.feature_dim());
  for (Eigen::Index i = 0; i < head.size(); ++i) head.data()[i] = normal(rng);
  for (Eigen::Index r = 0; r < head.rows(); ++r) {
    for (Eigen::Index q = 0; q < std::min(r, head.cols()); ++q) {
      head.row(r) -= head.row(r).dot(head.row(q)) * head.row(q);
    }
    head.row(r).normalize();
  }
  m.mutable_head_weights() = head;
  return m;
}

PointNetClassifier PointNetClassifier::from_params(const ArchDescriptor& arch,
                                                   Eigen::VectorXd params) {
  PointNetClassifier m(arch);
  if (params.size() != m.params_.size()) {
    throw Error("parameter vector has " + std::to_string(params.size()) + " entries, " +
                arch.to_string() + " needs " + std::to_string(m.params_.size()));
  }
  m.params_ = std::move(params);
  return m;
}

Eigen::Map<const Eigen::MatrixXd> PointNetClassifier::weight(std::size_t layer) const {
  const auto& lo = layers_[layer];
  return {params_.data() + lo.weight, lo.rows, lo.cols};
}

Eigen::Map<const Eigen::VectorXd> PointNetClassifier::bias(std::size_t layer) const {
  const auto& lo = layers_[layer];
  return {params_.data() + lo.bias, lo.rows};
}

Eigen::Map<const Eigen::MatrixXd> PointNetClassifier::head_weights() const {
  return weight(layers_.size() - 1);
}

Eigen::Map<Eigen::MatrixXd> PointNetClassifier::mutable_head_weights() {
  const auto& lo = layers_.back();
  return {params_.data() + lo.weight, lo.rows, lo.cols};
}

Eigen::Map<Eigen::VectorXd> PointNetClassifier::mutable_head_bias() {
  const auto& lo = layers_.back();
  return {params_.data() + lo.bias, lo.rows};
}

void PointNetClassifier::check_input(const PointCloud& x) const {
  if (x.cols() == 0) throw Error("forward: empty point cloud");
}

PointNetClassifier::Trace PointNetClassifier::forward_trace(const PointCloud& x) const {
  check_input(x);
  const std::size_t hidden = layers_.size() - 1;
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l + 1 < hidden; ++l) {
    Eigen::MatrixXd z = weight(l) * h;
    z.colwise() += bias(l);
    h = z.cwiseMax(0.0);
  }
  Eigen::MatrixXd z = weight(hidden - 1) * h;
  z.colwise() += bias(hidden - 1);

  // Column sweep keeps the first index on ties.
  const Eigen::Index d = z.rows();
  Eigen::VectorXd best = Eigen::VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(d), 0);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index r = 0; r < d; ++r) {
      if (z(r, j) > best[r]) {
        best[r] = z(r, j);
        arg[static_cast<std::size_t>(r)] = j;
      }
    }
  }
  Trace t;
  t.features = best.cwiseMax(0.0);
  t.winner.resize(static_cast<std::size_t>(d));
  for (Eigen::Index r = 0; r < d; ++r) {
    t.winner[static_cast<std::size_t>(r)] = best[r] > 0.0 ? arg[static_cast<std::size_t>(r)] : -1;
  }
  t.logits = head_weights() * t.features + bias(hidden);
  return t;
}

PointNetClassifier::Output PointNetClassifier::forward(const PointCloud& x) const {
  Trace t = forward_trace(x);
  return {std::move(t.features), std::move(t.logits)};
}

void PointNetClassifier::backward(const PointCloud& x, const Trace& trace,
                                  const Eigen::VectorXd& dlogits,
                                  const Eigen::VectorXd* dfeatures, Eigen::VectorXd* grad_params,
                                  Offsets* grad_x) const {
  const std::size_t hidden = layers_.size() - 1;
  if (grad_params && grad_params->size() != params_.size()) {
    throw Error("backward: gradient buffer has wrong size");
  }
  if (grad_x && grad_x->cols() != x.cols()) throw Error("backward: input gradient has wrong size");

  Eigen::VectorXd dg = head_weights().transpose() * dlogits;
  if (dfeatures) dg += *dfeatures;
  if (grad_params) {
    const auto& lo = layers_.back();
    Eigen::Map<Eigen::MatrixXd>(grad_params->data() + lo.weight, lo.rows, lo.cols) +=
        dlogits * trace.features.transpose();
    Eigen::Map<Eigen::VectorXd>(grad_params->data() + lo.bias, lo.rows) += dlogits;
  }

  // Only points that won some channel of the max-pool receive gradient;
  // recompute the MLP on that subset.
  std::vector<Eigen::Index> active;
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(x.cols()), -1);
  for (Eigen::Index w : trace.winner) {
    if (w >= 0 && slot[static_cast<std::size_t>(w)] < 0) {
      slot[static_cast<std::size_t>(w)] = 0;
      active.push_back(w);
    }
  }
  if (active.empty()) return;
  std::sort(active.begin(), active.end());
  for (std::size_t s = 0; s < active.size(); ++s) {
    slot[static_cast<std::size_t>(active[s])] = static_cast<Eigen::Index>(s);
  }
  const auto k = static_cast<Eigen::Index>(active.size());

  std::vector<Eigen::MatrixXd> inputs;  // layer inputs, compact
  std::vector<Eigen::MatrixXd> pre;     // pre-activations, compact
  inputs.reserve(hidden);
  pre.reserve(hidden);
  Eigen::MatrixXd h(3, k);
  for (Eigen::Index s = 0; s < k; ++s) h.col(s) = x.col(active[static_cast<std::size_t>(s)]);
  for (std::size_t l = 0; l < hidden; ++l) {
    Eigen::MatrixXd z = weight(l) * h;
    z.colwise() += bias(l);
    inputs.push_back(std::move(h));
    h = z.cwiseMax(0.0);
    pre.push_back(std::move(z));
  }

  Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(layers_[hidden - 1].rows, k);
  for (std::size_t r = 0; r < trace.winner.size(); ++r) {
    const Eigen::Index w = trace.winner[r];
    if (w >= 0) dz(static_cast<Eigen::Index>(r), slot[static_cast<std::size_t>(w)]) = dg[static_cast<Eigen::Index>(r)];
  }
  // The winner's pre-activation is strictly positive, so the ReLU mask is 1
  // at every routed entry.
  for (std::size_t l = hidden; l-- > 0;) {
    if (grad_params) {
      const auto& lo = layers_[l];
      Eigen::Map<Eigen::MatrixXd>(grad_params->data() + lo.weight, lo.rows, lo.cols) +=
          dz * inputs[l].transpose();
      Eigen::Map<Eigen::VectorXd>(grad_params->data() + lo.bias, lo.rows) += dz.rowwise().sum();
    }
    if (l == 0 && !grad_x) break;
    Eigen::MatrixXd dh = weight(l).transpose() * dz;
    if (l == 0) {
      for (Eigen::Index s = 0; s < k; ++s) grad_x->col(active[static_cast<std::size_t>(s)]) += dh.col(s);
      break;
    }
    dz = (pre[l - 1].array() > 0.0).select(dh, 0.0);
  }
}

void PointNetClassifier::save(const std::filesystem::path& path) const {
  BinaryWriter w(path);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.str(arch_.to_string());
  w.u64(static_cast<std::uint64_t>(params_.size()));
  for (Eigen::Index i = 0; i < params_.size(); ++i) w.f64(params_[i]);
  w.close();
}

PointNetClassifier PointNetClassifier::load(const std::filesystem::path& path) {
  BinaryReader r(path);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw Error(r.name() + ": not a model checkpoint");
  const ArchDescriptor arch = ArchDescriptor::parse(r.str());
  const std::uint64_t count = r.u64();
  Eigen::VectorXd params(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = r.f64();
  r.expect_end();
  return from_params(arch, std::move(params));
}

double mean_row_cosine(const Eigen::MatrixXd& rows) {
  const Eigen::Index c = rows.rows();
  if (c < 2) throw Error("cosine statistics need at least two rows");
  Eigen::VectorXd norms = rows.rowwise().norm();
  for (Eigen::Index i = 0; i < c; ++i) {
    if (!(norms[i] > 0.0)) throw Error("degenerate head row");
  }
  double sum = 0.0;
  int pairs = 0;
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = i + 1; j < c; ++j) {
      sum += rows.row(i).dot(rows.row(j)) / (norms[i] * norms[j]);
      ++pairs;
    }
  }
  return sum / pairs;
}

double last_layer_cosine_stats(const PointNetClassifier& model) {
  return mean_row_cosine(model.head_weights());
}

void LinearClassifier::normalize_rows() {
  const double target = std::sqrt(static_cast<double>(weight.cols()));
  for (Eigen::Index r = 0; r < weight.rows(); ++r) {
    const double n = weight.row(r).norm();
    if (!(n > 0.0)) throw Error("degenerate head row");
    weight.row(r) *= target / n;
  }
}

double LinearClassifier::max_row_cosine() const {
  double best = -1.0;
  for (Eigen::Index i = 0; i < weight.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < weight.rows(); ++j) {
      best = std::max(best, weight.row(i).dot(weight.row(j)) /
                                (weight.row(i).norm() * weight.row(j).norm()));
    }
  }
  return best;
}

}  // namespace pcpoison
