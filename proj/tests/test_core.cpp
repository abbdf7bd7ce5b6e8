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

#include <array>
#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "pcpoison/core.hpp"

using namespace pcpoison;

namespace {

PointCloud cloud(std::initializer_list<std::array<double, 3>> pts) {
  PointCloud pc(3, static_cast<Eigen::Index>(pts.size()));
  Eigen::Index j = 0;
  for (const auto& p : pts) pc.col(j++) << p[0], p[1], p[2];
  return pc;
}

}  // namespace

TEST_CASE("normalize: centred unit cloud is a fixed point") {
  const PointCloud pc = cloud({{1, 0, 0}, {-1, 0, 0}, {0, 0.5, 0}, {0, -0.5, 0}});
  CHECK((normalize(pc) - pc).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("normalize: centre then scale") {
  const PointCloud out = normalize(cloud({{2, 0, 0}, {0, 0, 0}}));
  CHECK((out - cloud({{1, 0, 0}, {-1, 0, 0}})).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("normalize: coincident points are rejected") {
  CHECK_THROWS_WITH(normalize(cloud({{0, 0, 0}, {0, 0, 0}})), doctest::Contains("zero extent"));
}

TEST_CASE("normalize is idempotent") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const PointCloud once = normalize(oracle::random_cloud(rng, 17, 3.0));
    CHECK((normalize(once) - once).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("sample_points: m = n is a permutation") {
  std::mt19937_64 rng(1);
  const PointCloud pc = oracle::random_cloud(rng, 40);
  const PointCloud s = sample_points(pc, 40, 3);
  std::set<Eigen::Index> seen;
  for (Eigen::Index j = 0; j < s.cols(); ++j)
    for (Eigen::Index k = 0; k < pc.cols(); ++k)
      if (s.col(j) == pc.col(k)) seen.insert(k);
  CHECK(seen.size() == 40);
}

TEST_CASE("sample_points: stable for a fixed seed") {
  const PointCloud pc = cloud({{0, 0, 0}, {1, 1, 1}});
  const PointCloud a = sample_points(pc, 1, 99);
  CHECK(a == sample_points(pc, 1, 99));
  CHECK((a.col(0) == pc.col(0) || a.col(0) == pc.col(1)));
}

TEST_CASE("sample_points: 1024 of 2048 are distinct") {
  std::mt19937_64 rng(2);
  const PointCloud pc = oracle::random_cloud(rng, 2048);
  const PointCloud s = sample_points(pc, 1024, 5);
  std::set<std::array<double, 3>> pts;
  for (Eigen::Index j = 0; j < s.cols(); ++j) pts.insert({s(0, j), s(1, j), s(2, j)});
  CHECK(pts.size() == 1024);
}

TEST_CASE("chamfer: hand values") {
  std::mt19937_64 rng(3);
  const PointCloud x = oracle::random_cloud(rng, 9);
  CHECK(chamfer(x, x) == 0.0);
  CHECK(chamfer(cloud({{0, 0, 0}, {1, 0, 0}}), cloud({{0, 0, 0}})) == doctest::Approx(0.5));
  CHECK(chamfer(cloud({{0, 0, 0}}), cloud({{0, 0, 1}})) == doctest::Approx(2.0));
}

TEST_CASE("hausdorff: hand values") {
  std::mt19937_64 rng(4);
  const PointCloud x = oracle::random_cloud(rng, 9);
  CHECK(hausdorff(x, x) == 0.0);
  CHECK(hausdorff(cloud({{0, 0, 0}, {0, 0, 0.1}}), cloud({{0, 0, 0}})) ==
        doctest::Approx(0.01).epsilon(1e-12));
  CHECK(hausdorff(cloud({{0, 0, 0}}), cloud({{1, 0, 0}})) == doctest::Approx(1.0));
}

TEST_CASE("hausdorff variants") {
  const PointCloud a = cloud({{0, 0, 0}, {2, 0, 0}});
  const PointCloud b = cloud({{0, 0, 0}});
  CHECK(hausdorff(b, a, HausdorffVariant::kOneSidedSquared) == 0.0);
  CHECK(hausdorff(a, b, HausdorffVariant::kOneSidedSquared) == doctest::Approx(4.0));
  CHECK(hausdorff(a, b, HausdorffVariant::kOneSided) == doctest::Approx(2.0));
  CHECK(hausdorff(b, a, HausdorffVariant::kTwoSidedSquared) == doctest::Approx(4.0));
  for (auto v : {HausdorffVariant::kTwoSidedSquared, HausdorffVariant::kOneSidedSquared,
                 HausdorffVariant::kOneSided})
    CHECK(parse_hausdorff_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_hausdorff_variant("both"), Error);
}

TEST_CASE("metrics agree with brute force on 200 random pairs") {
  std::mt19937_64 rng(2026);
  std::uniform_int_distribution<int> size(1, 32);
  for (int t = 0; t < 200; ++t) {
    const PointCloud x = oracle::random_cloud(rng, size(rng));
    const PointCloud x2 = oracle::random_cloud(rng, size(rng));
    CHECK(std::abs(chamfer(x, x2) - oracle::chamfer(x, x2)) <= 1e-9);
    for (auto v : {HausdorffVariant::kTwoSidedSquared, HausdorffVariant::kOneSidedSquared,
                   HausdorffVariant::kOneSided})
      CHECK(std::abs(hausdorff(x, x2, v) - oracle::hausdorff(x, x2, v)) <= 1e-9);
  }
}

TEST_CASE("metric symmetry and squared homogeneity") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> scale(0.1, 5.0);
  for (int t = 0; t < 50; ++t) {
    const PointCloud x = oracle::random_cloud(rng, 13);
    const PointCloud x2 = oracle::random_cloud(rng, 21);
    const double s = scale(rng);
    CHECK(chamfer(x, x2) == doctest::Approx(chamfer(x2, x)).epsilon(1e-12));
    CHECK(hausdorff(x, x2) == doctest::Approx(hausdorff(x2, x)).epsilon(1e-12));
    CHECK(chamfer(s * x, s * x2) == doctest::Approx(s * s * chamfer(x, x2)).epsilon(1e-10));
    CHECK(hausdorff(s * x, s * x2) == doctest::Approx(s * s * hausdorff(x, x2)).epsilon(1e-10));
  }
}

TEST_CASE("small per-point offsets: chamfer = (2/n) sum |d_j|^2") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const PointCloud x = oracle::random_cloud(rng, 24);
    const double gap = min_pairwise_gap(x);
    Offsets d(3, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Eigen::Vector3d v(g(rng), g(rng), g(rng));
      d.col(j) = v.normalized() * (0.49 * gap * std::uniform_real_distribution<>(0, 1)(rng));
    }
    const double expect = 2.0 * d.colwise().squaredNorm().sum() / static_cast<double>(x.cols());
    CHECK(std::abs(chamfer(x, x + d) - expect) <= 1e-9);
  }
}

TEST_CASE("chamfer_with_grad: value and finite differences") {
  std::mt19937_64 rng(13);
  const PointCloud y = oracle::random_cloud(rng, 10);
  const PointCloud x = oracle::random_cloud(rng, 12);
  Offsets g;
  CHECK(chamfer_with_grad(y, x, &g) == doctest::Approx(chamfer(y, x)).epsilon(1e-12));
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (int r = 0; r < 3; ++r) {
      PointCloud p = y, m = y;
      p(r, j) += h;
      m(r, j) -= h;
      const double fd = (oracle::chamfer(p, x) - oracle::chamfer(m, x)) / (2 * h);
      CHECK(oracle::rel_err(fd, g(r, j)) <= 1e-4);
    }
}

TEST_CASE("distance_report") {
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.clouds = {cloud({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}})};
  ds.labels = {0};
  PerturbationSet zero = PerturbationSet::zeros_like(ds);
  const DistanceReport r0 = distance_report(ds, zero);
  CHECK(r0.chamfer_mean == 0.0);
  CHECK(r0.hausdorff_mean == 0.0);
  CHECK(r0.linf_max == 0.0);
  CHECK(r0.l2_mean == 0.0);

  PerturbationSet shift = zero;
  shift.deltas[0].row(0).setConstant(0.1);
  shift.deltas[0](2, 1) = -0.05;
  const DistanceReport r = distance_report(ds, shift);
  CHECK(r.linf_max == doctest::Approx(0.1));
  shift.deltas[0](2, 1) = 0.0;
  CHECK(distance_report(ds, shift).chamfer_mean == doctest::Approx(0.02).epsilon(1e-9));

  PerturbationSet bad;
  CHECK_THROWS_AS(distance_report(ds, bad), Error);
}

TEST_CASE("dataset validation") {
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.clouds = {cloud({{0, 0, 0}}), cloud({{1, 0, 0}})};
  ds.labels = {0, 1};
  CHECK_NOTHROW(ds.validate());
  ds.labels[1] = 2;
  CHECK_THROWS_AS(ds.validate(), Error);
  ds.labels = {0};
  CHECK_THROWS_AS(ds.validate(), Error);
  ds.labels = {0, 1};
  ds.clouds[1](0, 0) = std::nan("");
  CHECK_THROWS_AS(ds.validate(), Error);
}

TEST_CASE("min_pairwise_gap") {
  CHECK(std::isinf(min_pairwise_gap(cloud({{0, 0, 0}}))));
  CHECK(min_pairwise_gap(cloud({{0, 0, 0}, {3, 0, 0}, {0, 0, 1}})) == doctest::Approx(1.0));
}
