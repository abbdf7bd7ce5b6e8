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

// Binary dataset and perturbation files.
//
// PCD1 dataset layout (all integers little-endian):
//   "PCPD" | version u32 | N u32 | n u32 | C u32 | seed u64 |
//   provenance (u32 byte length + UTF-8 bytes) |
//   N x (label u32, n*3 float32, point-major xyz)
//
// PCDD perturbation layout is identical except the magic is "PCDD", the
// provenance field carries the generating method and records have no label.
//
// Coordinates are stored as float32. Values produced by this library are
// rounded to float32 before they are written or used, so a save/load cycle
// reproduces them exactly.

#ifndef PCPOISON_IO_HPP_
#define PCPOISON_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "pcpoison/core.hpp"

namespace pcpoison {

inline constexpr std::uint32_t kFormatVersion = 1;

void save_dataset(const std::filesystem::path& path, const LabeledDataset& dataset);
LabeledDataset load_dataset(const std::filesystem::path& path);

struct PerturbationFileInfo {
  int num_classes = 0;
  std::uint64_t seed = 0;
  std::string method;
};

void save_perturbations(const std::filesystem::path& path, const PerturbationSet& deltas,
                        const PerturbationFileInfo& info);
PerturbationSet load_perturbations(const std::filesystem::path& path,
                                   PerturbationFileInfo* info = nullptr);

// Rounds every coordinate to the nearest float32 value, in place.
void round_to_float(Eigen::Matrix3Xd* m);
void round_to_float(LabeledDataset* dataset);
void round_to_float(PerturbationSet* deltas);

}  // namespace pcpoison

#endif  // PCPOISON_IO_HPP_
