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

#ifndef PCPOISON_DATASETS_HPP_
#define PCPOISON_DATASETS_HPP_

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include "pcpoison/core.hpp"

namespace pcpoison {

enum class ShapeKind { kSphere, kCube, kCylinder, kTorus };
enum class RotationMode { kNone, kUniformSO3 };

std::string_view to_string(ShapeKind kind);

// Fixed shape constants, in units of the raw (pre-normalisation) surface.
inline constexpr double kTorusMajorRadius = 0.7;
inline constexpr double kTorusMinorRadius = 0.25;
inline constexpr double kCylinderHeight = 1.4;
inline constexpr double kCylinderRadius = 0.5;

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  double jitter = 0.02;  // std-dev of isotropic Gaussian point noise
  RotationMode rotation = RotationMode::kUniformSO3;
  int points = 256;
};

// One surface sampling of `spec`, scaled about the shape centre so the
// farthest point has norm 1, coordinates rounded to float32.
PointCloud sample_shape(const ShapeSpec& spec, std::uint64_t seed);

struct Benchmark {
  LabeledDataset train;
  LabeledDataset test;
};

// Class c is generated from specs[c]. Train and test samples draw from
// disjoint seed streams derived from `seed`. Samples are ordered by class.
Benchmark generate_benchmark(const std::vector<ShapeSpec>& specs, int train_per_class,
                             int test_per_class, std::uint64_t seed);

// Sphere, cube, cylinder, torus; 100 train / 50 test per class; n = 256.
Benchmark default_benchmark(std::uint64_t seed, int points = 256, int train_per_class = 100,
                            int test_per_class = 50);

// True when the library was built with HDF5 support.
bool hdf5_available();

// Reads "data" (float32 [N, n, 3]) and "label" (integer [N] or [N, 1]).
// Clouds are normalised; `subsample` > 0 draws that many points per cloud.
LabeledDataset load_hdf5(const std::filesystem::path& path, int subsample = 0,
                         std::uint64_t seed = 0);

// Writes the same layout; used for fixtures and exports.
void save_hdf5(const std::filesystem::path& path, const LabeledDataset& dataset);

}  // namespace pcpoison

#endif  // PCPOISON_DATASETS_HPP_
