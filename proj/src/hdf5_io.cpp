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
#include <string>
#include <vector>

#include "pcpoison/datasets.hpp"
#include "pcpoison/random.hpp"

#ifdef PCPOISON_HAVE_HDF5
#include <hdf5.h>
#endif

namespace pcpoison {

#ifdef PCPOISON_HAVE_HDF5

namespace {

// Owns one hid_t and closes it with the matching H5?close.
class Handle {
 public:
  Handle(hid_t id, herr_t (*closer)(hid_t)) : id_(id), closer_(closer) {}
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (id_ >= 0) closer_(id_);
  }
  [[nodiscard]] hid_t get() const { return id_; }
  [[nodiscard]] bool valid() const { return id_ >= 0; }

 private:
  hid_t id_;
  herr_t (*closer_)(hid_t);
};

// Silences the HDF5 error stack while alive.
class QuietErrors {
 public:
  QuietErrors() {
    H5Eget_auto2(H5E_DEFAULT, &func_, &data_);
    H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  }
  ~QuietErrors() { H5Eset_auto2(H5E_DEFAULT, func_, data_); }

 private:
  H5E_auto2_t func_ = nullptr;
  void* data_ = nullptr;
};

std::vector<hsize_t> dataset_shape(hid_t dset) {
  Handle space(H5Dget_space(dset), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.get());
  std::vector<hsize_t> dims(static_cast<std::size_t>(std::max(rank, 0)));
  H5Sget_simple_extent_dims(space.get(), dims.data(), nullptr);
  return dims;
}

}  // namespace

bool hdf5_available() { return true; }

LabeledDataset load_hdf5(const std::filesystem::path& path, int subsample, std::uint64_t seed) {
  const std::string name = path.string();
  QuietErrors quiet;
  if (!std::filesystem::exists(path)) throw Error("cannot open '" + name + "'");
  Handle file(H5Fopen(name.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw Error("'" + name + "' is not a readable HDF5 file");

  for (const char* required : {"data", "label"}) {
    if (H5Lexists(file.get(), required, H5P_DEFAULT) <= 0) {
      throw Error("'" + name + "': missing dataset \"" + required + "\"");
    }
  }
  Handle data(H5Dopen2(file.get(), "data", H5P_DEFAULT), H5Dclose);
  Handle label(H5Dopen2(file.get(), "label", H5P_DEFAULT), H5Dclose);
  const auto dshape = dataset_shape(data.get());
  const auto lshape = dataset_shape(label.get());
  if (dshape.size() != 3 || dshape[2] != 3) {
    throw Error("'" + name + "': \"data\" must have shape [N, n, 3]");
  }
  if (lshape.empty() || lshape.size() > 2 || (lshape.size() == 2 && lshape[1] != 1)) {
    throw Error("'" + name + "': \"label\" must have shape [N] or [N, 1]");
  }
  const hsize_t count = dshape[0];
  const hsize_t points = dshape[1];
  if (lshape[0] != count) {
    throw Error("'" + name + "': \"data\" has " + std::to_string(count) + " samples but \"label\" has " +
                std::to_string(lshape[0]));
  }
  if (points == 0) throw Error("'" + name + "': clouds have no points");

  std::vector<float> coords(count * points * 3);
  std::vector<int> labels(count);
  if (H5Dread(data.get(), H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, coords.data()) < 0) {
    throw Error("'" + name + "': failed to read \"data\"");
  }
  if (H5Dread(label.get(), H5T_NATIVE_INT, H5S_ALL, H5S_ALL, H5P_DEFAULT, labels.data()) < 0) {
    throw Error("'" + name + "': failed to read \"label\"");
  }

  LabeledDataset ds;
  ds.seed = seed;
  ds.provenance = "clean";
  int max_label = -1;
  for (hsize_t i = 0; i < count; ++i) {
    PointCloud pc(3, static_cast<Eigen::Index>(points));
    for (hsize_t j = 0; j < points; ++j) {
      for (int c = 0; c < 3; ++c) {
        pc(c, static_cast<Eigen::Index>(j)) = coords[(i * points + j) * 3 + static_cast<hsize_t>(c)];
      }
    }
    if (subsample > 0) pc = sample_points(pc, subsample, derive_seed(seed, {i}));
    ds.clouds.push_back(normalize(pc));
    if (labels[i] < 0) throw Error("'" + name + "': negative label");
    max_label = std::max(max_label, labels[i]);
    ds.labels.push_back(labels[i]);
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

void save_hdf5(const std::filesystem::path& path, const LabeledDataset& dataset) {
  dataset.validate();
  const std::string name = path.string();
  QuietErrors quiet;
  Handle file(H5Fcreate(name.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw Error("cannot create '" + name + "'");
  const auto count = static_cast<hsize_t>(dataset.size());
  const auto points = static_cast<hsize_t>(dataset.points_per_cloud());

  std::vector<float> coords;
  coords.reserve(count * points * 3);
  for (const auto& pc : dataset.clouds) {
    for (Eigen::Index j = 0; j < pc.cols(); ++j) {
      for (int c = 0; c < 3; ++c) coords.push_back(static_cast<float>(pc(c, j)));
    }
  }
  const hsize_t ddims[3] = {count, points, 3};
  Handle dspace(H5Screate_simple(3, ddims, nullptr), H5Sclose);
  Handle data(H5Dcreate2(file.get(), "data", H5T_IEEE_F32LE, dspace.get(), H5P_DEFAULT,
                         H5P_DEFAULT, H5P_DEFAULT),
              H5Dclose);
  if (!data.valid() ||
      H5Dwrite(data.get(), H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, coords.data()) < 0) {
    throw Error("'" + name + "': failed to write \"data\"");
  }
  const hsize_t ldims[1] = {count};
  Handle lspace(H5Screate_simple(1, ldims, nullptr), H5Sclose);
  Handle label(H5Dcreate2(file.get(), "label", H5T_STD_I32LE, lspace.get(), H5P_DEFAULT,
                          H5P_DEFAULT, H5P_DEFAULT),
               H5Dclose);
  if (!label.valid() || H5Dwrite(label.get(), H5T_NATIVE_INT, H5S_ALL, H5S_ALL, H5P_DEFAULT,
                                 dataset.labels.data()) < 0) {
    throw Error("'" + name + "': failed to write \"label\"");
  }
}

#else

bool hdf5_available() { return false; }

LabeledDataset load_hdf5(const std::filesystem::path&, int, std::uint64_t) {
  throw Error("this build has no HDF5 support");
}

void save_hdf5(const std::filesystem::path&, const LabeledDataset&) {
  throw Error("this build has no HDF5 support");
}

#endif

}  // namespace pcpoison
