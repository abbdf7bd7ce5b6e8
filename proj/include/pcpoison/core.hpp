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

#ifndef PCPOISON_CORE_HPP_
#define PCPOISON_CORE_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace pcpoison {

// Base class for every error raised by the library. Validation failures
// (bad arguments, malformed files) derive from it so callers can map them
// to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a numerical procedure cannot continue (non-finite gradient,
// divergence).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A point cloud is a 3 x n matrix; column j is point j. Columns are
// contiguous, which is what the shared per-point MLP wants.
using PointCloud = Eigen::Matrix3Xd;

// Per-point offsets, same layout as PointCloud.
using Offsets = Eigen::Matrix3Xd;

struct LabeledDataset {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
  int num_classes = 0;
  std::uint64_t seed = 0;
  // "clean" or "poisoned(<method>)".
  std::string provenance = "clean";

  [[nodiscard]] std::size_t size() const { return clouds.size(); }
  [[nodiscard]] bool empty() const { return clouds.empty(); }
  // Point count shared by every cloud; 0 for an empty dataset.
  [[nodiscard]] int points_per_cloud() const {
    return clouds.empty() ? 0 : static_cast<int>(clouds.front().cols());
  }

  // Throws Error if clouds/labels disagree in length, clouds differ in size,
  // a coordinate is non-finite or a label falls outside [0, num_classes).
  void validate() const;
};

struct PerturbationSet {
  std::vector<Offsets> deltas;

  [[nodiscard]] std::size_t size() const { return deltas.size(); }

  // All-zero offsets shaped like `dataset`.
  static PerturbationSet zeros_like(const LabeledDataset& dataset);
};

// Throws Error unless `deltas` has one entry per sample with matching shape.
void check_aligned(const LabeledDataset& dataset, const PerturbationSet& deltas);

enum class HausdorffVariant { kTwoSidedSquared, kOneSidedSquared, kOneSided };

HausdorffVariant parse_hausdorff_variant(std::string_view name);
std::string_view to_string(HausdorffVariant variant);

struct DistanceReport {
  double chamfer_mean = 0.0;
  double hausdorff_mean = 0.0;
  double linf_max = 0.0;
  double l2_mean = 0.0;
};

// Centers on the centroid, then scales so the farthest point has norm 1.
// Throws Error("zero extent") when every point coincides.
PointCloud normalize(const PointCloud& pc);

// m points drawn uniformly without replacement (m <= n) or with replacement
// (m > n). Deterministic for a fixed seed.
PointCloud sample_points(const PointCloud& pc, int m, std::uint64_t seed);

// Symmetric Chamfer distance with squared nearest-neighbour distances.
double chamfer(const PointCloud& x, const PointCloud& x2);

// chamfer(y, x) together with its gradient with respect to y. Ties in the
// nearest-neighbour search resolve to the smallest index.
double chamfer_with_grad(const PointCloud& y, const PointCloud& x, Offsets* grad_y);

double hausdorff(const PointCloud& x, const PointCloud& x2,
                 HausdorffVariant variant = HausdorffVariant::kTwoSidedSquared);

// Means over samples of chamfer/hausdorff between x_i and x_i + delta_i,
// plus the largest absolute offset component and the mean per-sample
// Frobenius norm of the offsets.
DistanceReport distance_report(const LabeledDataset& clean, const PerturbationSet& deltas,
                               HausdorffVariant variant = HausdorffVariant::kTwoSidedSquared);

// Smallest pairwise distance between distinct points of `pc`; +inf when n < 2.
double min_pairwise_gap(const PointCloud& pc);

}  // namespace pcpoison

#endif  // PCPOISON_CORE_HPP_
