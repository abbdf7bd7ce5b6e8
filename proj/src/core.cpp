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

#include "pcpoison/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace pcpoison {

namespace {

void require_nonempty(const PointCloud& pc, const char* what) {
  if (pc.cols() == 0) throw Error(std::string(what) + ": empty point cloud");
}

// For each column of `from`, the squared distance to and index of its
// nearest column in `to` (first index on ties).
void nearest(const PointCloud& from, const PointCloud& to, std::vector<double>* dist,
             std::vector<Eigen::Index>* index) {
  const Eigen::Index n = from.cols();
  const Eigen::Index m = to.cols();
  dist->assign(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  if (index) index->assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Vector3d p = from.col(j);
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_k = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      const double d = (to.col(k) - p).squaredNorm();
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    (*dist)[static_cast<std::size_t>(j)] = best;
    if (index) (*index)[static_cast<std::size_t>(j)] = best_k;
  }
}

}  // namespace

void LabeledDataset::validate() const {
  if (clouds.size() != labels.size()) {
    throw Error("dataset: " + std::to_string(clouds.size()) + " clouds but " +
                std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw Error("dataset: class count must be positive");
  const int n = points_per_cloud();
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (clouds[i].cols() != n) {
      throw Error("dataset: sample " + std::to_string(i) + " has " +
                  std::to_string(clouds[i].cols()) + " points, expected " + std::to_string(n));
    }
    if (n == 0) throw Error("dataset: clouds must contain at least one point");
    if (!clouds[i].allFinite()) {
      throw Error("dataset: sample " + std::to_string(i) + " has non-finite coordinates");
    }
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw Error("dataset: label " + std::to_string(labels[i]) + " of sample " +
                  std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

PerturbationSet PerturbationSet::zeros_like(const LabeledDataset& dataset) {
  PerturbationSet out;
  out.deltas.reserve(dataset.size());
  for (const auto& pc : dataset.clouds) out.deltas.push_back(Offsets::Zero(3, pc.cols()));
  return out;
}

void check_aligned(const LabeledDataset& dataset, const PerturbationSet& deltas) {
  if (dataset.size() != deltas.size()) {
    throw Error("perturbation set has " + std::to_string(deltas.size()) +
                " entries but dataset has " + std::to_string(dataset.size()) + " samples");
  }
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (deltas.deltas[i].cols() != dataset.clouds[i].cols()) {
      throw Error("perturbation " + std::to_string(i) + " has " +
                  std::to_string(deltas.deltas[i].cols()) + " points, sample has " +
                  std::to_string(dataset.clouds[i].cols()));
    }
  }
}

HausdorffVariant parse_hausdorff_variant(std::string_view name) {
  if (name == "two-sided-sq") return HausdorffVariant::kTwoSidedSquared;
  if (name == "one-sided-sq") return HausdorffVariant::kOneSidedSquared;
  if (name == "one-sided") return HausdorffVariant::kOneSided;
  throw Error("unknown hausdorff variant '" + std::string(name) +
              "' (expected two-sided-sq, one-sided-sq or one-sided)");
}

std::string_view to_string(HausdorffVariant variant) {
  switch (variant) {
    case HausdorffVariant::kTwoSidedSquared: return "two-sided-sq";
    case HausdorffVariant::kOneSidedSquared: return "one-sided-sq";
    case HausdorffVariant::kOneSided: return "one-sided";
  }
  return "two-sided-sq";
}

PointCloud normalize(const PointCloud& pc) {
  require_nonempty(pc, "normalize");
  if (!pc.allFinite()) throw Error("normalize: non-finite coordinates");
  const Eigen::Vector3d centroid = pc.rowwise().mean();
  PointCloud out = pc.colwise() - centroid;
  const double extent = out.colwise().norm().maxCoeff();
  if (!(extent > 0.0)) throw Error("zero extent");
  out /= extent;
  return out;
}

PointCloud sample_points(const PointCloud& pc, int m, std::uint64_t seed) {
  require_nonempty(pc, "sample_points");
  if (m <= 0) throw Error("sample_points: m must be positive, got " + std::to_string(m));
  const int n = static_cast<int>(pc.cols());
  std::mt19937_64 rng(seed);
  PointCloud out(3, m);
  if (m <= n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first m slots end up a uniform m-subset.
    for (int i = 0; i < m; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      out.col(i) = pc.col(idx[static_cast<std::size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int i = 0; i < m; ++i) out.col(i) = pc.col(pick(rng));
  }
  return out;
}

double chamfer(const PointCloud& x, const PointCloud& x2) {
  require_nonempty(x, "chamfer");
  require_nonempty(x2, "chamfer");
  std::vector<double> d1, d2;
  nearest(x, x2, &d1, nullptr);
  nearest(x2, x, &d2, nullptr);
  const double a = std::accumulate(d1.begin(), d1.end(), 0.0) / static_cast<double>(x.cols());
  const double b = std::accumulate(d2.begin(), d2.end(), 0.0) / static_cast<double>(x2.cols());
  return a + b;
}

double chamfer_with_grad(const PointCloud& y, const PointCloud& x, Offsets* grad_y) {
  require_nonempty(y, "chamfer");
  require_nonempty(x, "chamfer");
  std::vector<double> d1, d2;
  std::vector<Eigen::Index> i1, i2;
  nearest(y, x, &d1, &i1);
  nearest(x, y, &d2, &i2);
  const double n = static_cast<double>(y.cols());
  const double m = static_cast<double>(x.cols());
  if (grad_y) {
    grad_y->setZero(3, y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      grad_y->col(j) += (2.0 / n) * (y.col(j) - x.col(i1[static_cast<std::size_t>(j)]));
    }
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      const Eigen::Index j = i2[static_cast<std::size_t>(k)];
      grad_y->col(j) += (2.0 / m) * (y.col(j) - x.col(k));
    }
  }
  return std::accumulate(d1.begin(), d1.end(), 0.0) / n +
         std::accumulate(d2.begin(), d2.end(), 0.0) / m;
}

double hausdorff(const PointCloud& x, const PointCloud& x2, HausdorffVariant variant) {
  require_nonempty(x, "hausdorff");
  require_nonempty(x2, "hausdorff");
  std::vector<double> d1;
  nearest(x, x2, &d1, nullptr);
  const double forward = *std::max_element(d1.begin(), d1.end());
  switch (variant) {
    case HausdorffVariant::kOneSidedSquared: return forward;
    case HausdorffVariant::kOneSided: return std::sqrt(forward);
    case HausdorffVariant::kTwoSidedSquared: break;
  }
  std::vector<double> d2;
  nearest(x2, x, &d2, nullptr);
  return std::max(forward, *std::max_element(d2.begin(), d2.end()));
}

DistanceReport distance_report(const LabeledDataset& clean, const PerturbationSet& deltas,
                               HausdorffVariant variant) {
  check_aligned(clean, deltas);
  DistanceReport r;
  if (clean.empty()) return r;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const PointCloud& x = clean.clouds[i];
    const Offsets& d = deltas.deltas[i];
    const PointCloud poisoned = x + d;
    r.chamfer_mean += chamfer(x, poisoned);
    // Direction for the one-sided variants: poisoned point to its nearest
    // clean point.
    r.hausdorff_mean += hausdorff(poisoned, x, variant);
    if (d.size() > 0) r.linf_max = std::max(r.linf_max, d.cwiseAbs().maxCoeff());
    r.l2_mean += d.norm();
  }
  const double count = static_cast<double>(clean.size());
  r.chamfer_mean /= count;
  r.hausdorff_mean /= count;
  r.l2_mean /= count;
  return r;
}

double min_pairwise_gap(const PointCloud& pc) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < pc.cols(); ++j) {
    for (Eigen::Index k = j + 1; k < pc.cols(); ++k) {
      best = std::min(best, (pc.col(j) - pc.col(k)).squaredNorm());
    }
  }
  return std::sqrt(best);
}

}  // namespace pcpoison
