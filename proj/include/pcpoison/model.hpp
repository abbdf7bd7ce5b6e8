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

#ifndef PCPOISON_MODEL_HPP_
#define PCPOISON_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "pcpoison/core.hpp"

namespace pcpoison {

// Architecture of a point-set classifier: shared per-point MLP widths
// (input 3 is implicit), max-pool to a global feature of the last width,
// then a linear head to `num_classes` logits.
struct ArchDescriptor {
  std::string name;
  std::vector<int> widths;
  int num_classes = 0;

  [[nodiscard]] int feature_dim() const { return widths.empty() ? 0 : widths.back(); }
  // "<name>:<num_classes>", the form stored in checkpoints.
  [[nodiscard]] std::string to_string() const;

  // Registered names: "ref-small" (64-128-256) and "ref-variant" (32-64-128).
  static ArchDescriptor named(std::string_view name, int num_classes);
  static ArchDescriptor parse(std::string_view descriptor);
  static std::vector<std::string> registered_names();
};

// Per-point MLP with ReLU, symmetric max-pool and a linear head. Parameters
// live in one flat double vector so optimizers and checkpoints can treat
// them uniformly; layer matrices are column-major views into it.
class PointNetClassifier {
 public:
  struct Output {
    Eigen::VectorXd features;
    Eigen::VectorXd logits;
  };

  // What backward needs besides the input: for every feature channel, the
  // point index that won the max-pool, or -1 when the channel's winner is
  // not strictly positive before the ReLU (zero gradient).
  struct Trace {
    Eigen::VectorXd features;
    Eigen::VectorXd logits;
    std::vector<Eigen::Index> winner;
  };

  // He-normal hidden layers, zero biases, orthonormal head rows.
  static PointNetClassifier init(std::uint64_t seed, const ArchDescriptor& arch);
  static PointNetClassifier from_params(const ArchDescriptor& arch, Eigen::VectorXd params);

  [[nodiscard]] const ArchDescriptor& arch() const { return arch_; }
  [[nodiscard]] int feature_dim() const { return arch_.feature_dim(); }
  [[nodiscard]] int num_classes() const { return arch_.num_classes; }
  [[nodiscard]] Eigen::Index num_params() const { return params_.size(); }

  [[nodiscard]] const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& mutable_params() { return params_; }

  [[nodiscard]] Output forward(const PointCloud& x) const;
  [[nodiscard]] Trace forward_trace(const PointCloud& x) const;

  // Backpropagates upstream gradients d(loss)/d(logits) and, optionally,
  // d(loss)/d(features). Parameter gradients are added into `grad_params`
  // and input gradients into `grad_x` (either may be null). Max-pool ties
  // route to the smallest point index; ReLU has derivative 0 at 0.
  void backward(const PointCloud& x, const Trace& trace, const Eigen::VectorXd& dlogits,
                const Eigen::VectorXd* dfeatures, Eigen::VectorXd* grad_params,
                Offsets* grad_x) const;

  // C x d head matrix, rows indexed by class.
  [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> head_weights() const;
  [[nodiscard]] Eigen::Map<Eigen::MatrixXd> mutable_head_weights();
  [[nodiscard]] Eigen::Map<Eigen::VectorXd> mutable_head_bias();

  void save(const std::filesystem::path& path) const;
  static PointNetClassifier load(const std::filesystem::path& path);

 private:
  struct LayerOffsets {
    Eigen::Index weight = 0;
    Eigen::Index bias = 0;
    int rows = 0;
    int cols = 0;
  };

  explicit PointNetClassifier(ArchDescriptor arch);
  void check_input(const PointCloud& x) const;

  [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  ArchDescriptor arch_;
  // Hidden layers followed by the head.
  std::vector<LayerOffsets> layers_;
  Eigen::VectorXd params_;
};

// Mean pairwise cosine similarity over all distinct pairs of head rows.
// Throws Error("degenerate head row") if a row is zero.
double last_layer_cosine_stats(const PointNetClassifier& model);
double mean_row_cosine(const Eigen::MatrixXd& rows);

// Linear classifier on flattened inputs, used by the separability analysis.
struct LinearClassifier {
  Eigen::MatrixXd weight;  // C x d

  // Rescales every row to l2 norm sqrt(d). Throws on a zero row.
  void normalize_rows();
  [[nodiscard]] Eigen::VectorXd logits(const Eigen::VectorXd& x) const { return weight * x; }
  // Largest cosine similarity over distinct row pairs.
  [[nodiscard]] double max_row_cosine() const;
};

}  // namespace pcpoison

#endif  // PCPOISON_MODEL_HPP_
