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

#include "pcpoison/datasets.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "pcpoison/io.hpp"
#include "pcpoison/random.hpp"

namespace pcpoison {

namespace {

using Rng = std::mt19937_64;

Eigen::Vector3d unit_gaussian_direction(Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::Vector3d v;
  do {
    v = {normal(rng), normal(rng), normal(rng)};
  } while (v.squaredNorm() < 1e-12);
  return v.normalized();
}

Eigen::Vector3d sample_surface(ShapeKind kind, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double kTau = 2.0 * std::numbers::pi;
  switch (kind) {
    case ShapeKind::kSphere:
      return unit_gaussian_direction(rng);
    case ShapeKind::kCube: {
      const int face = std::uniform_int_distribution<int>(0, 5)(rng);
      const double a = 2.0 * unit(rng) - 1.0;
      const double b = 2.0 * unit(rng) - 1.0;
      const double s = face % 2 == 0 ? 1.0 : -1.0;
      switch (face / 2) {
        case 0: return {s, a, b};
        case 1: return {a, s, b};
        default: return {a, b, s};
      }
    }
    case ShapeKind::kCylinder: {
      const double r = kCylinderRadius;
      const double h = kCylinderHeight;
      const double side = kTau * r * h;
      const double caps = kTau * r * r;
      const double theta = kTau * unit(rng);
      if (unit(rng) * (side + caps) < side) {
        return {r * std::cos(theta), r * std::sin(theta), h * (unit(rng) - 0.5)};
      }
      const double rho = r * std::sqrt(unit(rng));
      const double z = unit(rng) < 0.5 ? -h / 2 : h / 2;
      return {rho * std::cos(theta), rho * std::sin(theta), z};
    }
    case ShapeKind::kTorus: {
      const double big = kTorusMajorRadius;
      const double small = kTorusMinorRadius;
      // Area element is proportional to (R + r cos v); reject to match it.
      double v = 0.0;
      do {
        v = kTau * unit(rng);
      } while (unit(rng) * (big + small) > big + small * std::cos(v));
      const double u = kTau * unit(rng);
      const double ring = big + small * std::cos(v);
      return {ring * std::cos(u), ring * std::sin(u), small * std::sin(v)};
    }
  }
  return Eigen::Vector3d::Zero();
}

LabeledDataset make_split(const std::vector<ShapeSpec>& specs, int per_class, std::uint64_t seed,
                          std::uint64_t split_tag) {
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(specs.size());
  ds.seed = seed;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    for (int i = 0; i < per_class; ++i) {
      ds.clouds.push_back(sample_shape(specs[c], derive_seed(seed, {split_tag, c, static_cast<std::uint64_t>(i)})));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

}  // namespace

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kCube: return "cube";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kTorus: return "torus";
  }
  return "sphere";
}

PointCloud sample_shape(const ShapeSpec& spec, std::uint64_t seed) {
  if (spec.points < 8) throw Error("shape spec needs at least 8 points");
  if (spec.jitter < 0.0) throw Error("jitter must be non-negative");
  Rng rng(seed);
  PointCloud pc(3, spec.points);
  for (int j = 0; j < spec.points; ++j) pc.col(j) = sample_surface(spec.kind, rng);
  if (spec.jitter > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.jitter);
    for (Eigen::Index i = 0; i < pc.size(); ++i) pc.data()[i] += noise(rng);
  }
  if (spec.rotation == RotationMode::kUniformSO3) {
    // A normalised Gaussian 4-vector is a uniform unit quaternion.
    std::normal_distribution<double> normal;
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    pc = q.toRotationMatrix() * pc;
  }
  // Every surface is centred on the origin, so only the scale is
  // normalised; a centroid shift would move exact surfaces off themselves.
  const double extent = pc.colwise().norm().maxCoeff();
  if (!(extent > 0.0)) throw Error("zero extent");
  PointCloud out = pc / extent;
  round_to_float(&out);
  return out;
}

Benchmark generate_benchmark(const std::vector<ShapeSpec>& specs, int train_per_class,
                             int test_per_class, std::uint64_t seed) {
  if (specs.size() < 2) throw Error("benchmark needs at least two classes");
  if (train_per_class < 1 || test_per_class < 1) throw Error("per-class counts must be positive");
  return {make_split(specs, train_per_class, seed, 0), make_split(specs, test_per_class, seed, 1)};
}

Benchmark default_benchmark(std::uint64_t seed, int points, int train_per_class,
                            int test_per_class) {
  std::vector<ShapeSpec> specs;
  for (ShapeKind k : {ShapeKind::kSphere, ShapeKind::kCube, ShapeKind::kCylinder, ShapeKind::kTorus}) {
    ShapeSpec s;
    s.kind = k;
    s.points = points;
    specs.push_back(s);
  }
  return generate_benchmark(specs, train_per_class, test_per_class, seed);
}

}  // namespace pcpoison
