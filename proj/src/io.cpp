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

#include "pcpoison/io.hpp"

#include <array>
#include <vector>

#include "binary_stream.hpp"

namespace pcpoison {

namespace {

constexpr std::array<char, 4> kDatasetMagic = {'P', 'C', 'P', 'D'};
constexpr std::array<char, 4> kDeltaMagic = {'P', 'C', 'D', 'D'};

struct Header {
  std::uint32_t count = 0;
  std::uint32_t points = 0;
  std::uint32_t classes = 0;
  std::uint64_t seed = 0;
  std::string provenance;
};

void write_header(BinaryWriter& w, const std::array<char, 4>& magic, const Header& h) {
  w.bytes(magic.data(), magic.size());
  w.u32(kFormatVersion);
  w.u32(h.count);
  w.u32(h.points);
  w.u32(h.classes);
  w.u64(h.seed);
  w.str(h.provenance);
}

Header read_header(BinaryReader& r, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  r.bytes(got.data(), got.size());
  if (got != magic) {
    throw Error(r.name() + ": bad magic, expected '" + std::string(magic.data(), 4) + "'");
  }
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw Error(r.name() + ": unsupported version " + std::to_string(version));
  }
  Header h;
  h.count = r.u32();
  h.points = r.u32();
  h.classes = r.u32();
  h.seed = r.u64();
  h.provenance = r.str();
  return h;
}

void write_points(BinaryWriter& w, const Eigen::Matrix3Xd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(m(c, j)));
  }
}

Eigen::Matrix3Xd read_points(BinaryReader& r, std::uint32_t n) {
  Eigen::Matrix3Xd m(3, n);
  for (std::uint32_t j = 0; j < n; ++j) {
    for (int c = 0; c < 3; ++c) m(c, j) = static_cast<double>(r.f32());
  }
  return m;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const LabeledDataset& dataset) {
  dataset.validate();
  BinaryWriter w(path);
  write_header(w, kDatasetMagic,
               {static_cast<std::uint32_t>(dataset.size()),
                static_cast<std::uint32_t>(dataset.points_per_cloud()),
                static_cast<std::uint32_t>(dataset.num_classes), dataset.seed,
                dataset.provenance});
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(dataset.labels[i]));
    write_points(w, dataset.clouds[i]);
  }
  w.close();
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  BinaryReader r(path);
  const Header h = read_header(r, kDatasetMagic);
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(h.classes);
  ds.seed = h.seed;
  ds.provenance = h.provenance;
  ds.clouds.reserve(h.count);
  ds.labels.reserve(h.count);
  for (std::uint32_t i = 0; i < h.count; ++i) {
    ds.labels.push_back(static_cast<int>(r.u32()));
    ds.clouds.push_back(read_points(r, h.points));
  }
  r.expect_end();
  ds.validate();
  return ds;
}

void save_perturbations(const std::filesystem::path& path, const PerturbationSet& deltas,
                        const PerturbationFileInfo& info) {
  const std::uint32_t n = deltas.deltas.empty() ? 0u
                                                : static_cast<std::uint32_t>(deltas.deltas[0].cols());
  for (const auto& d : deltas.deltas) {
    if (d.cols() != n) throw Error("save_perturbations: ragged perturbation set");
  }
  BinaryWriter w(path);
  write_header(w, kDeltaMagic,
               {static_cast<std::uint32_t>(deltas.size()), n,
                static_cast<std::uint32_t>(info.num_classes), info.seed, info.method});
  for (const auto& d : deltas.deltas) write_points(w, d);
  w.close();
}

PerturbationSet load_perturbations(const std::filesystem::path& path, PerturbationFileInfo* info) {
  BinaryReader r(path);
  const Header h = read_header(r, kDeltaMagic);
  PerturbationSet out;
  out.deltas.reserve(h.count);
  for (std::uint32_t i = 0; i < h.count; ++i) out.deltas.push_back(read_points(r, h.points));
  r.expect_end();
  if (info) {
    info->num_classes = static_cast<int>(h.classes);
    info->seed = h.seed;
    info->method = h.provenance;
  }
  return out;
}

void round_to_float(Eigen::Matrix3Xd* m) {
  for (Eigen::Index i = 0; i < m->size(); ++i) {
    m->data()[i] = static_cast<double>(static_cast<float>(m->data()[i]));
  }
}

void round_to_float(LabeledDataset* dataset) {
  for (auto& pc : dataset->clouds) round_to_float(&pc);
}

void round_to_float(PerturbationSet* deltas) {
  for (auto& d : deltas->deltas) round_to_float(&d);
}

}  // namespace pcpoison
