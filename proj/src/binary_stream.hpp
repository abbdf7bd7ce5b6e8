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

// Little-endian primitive readers/writers shared by the file formats.

#ifndef PCPOISON_SRC_BINARY_STREAM_HPP_
#define PCPOISON_SRC_BINARY_STREAM_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "pcpoison/core.hpp"

namespace pcpoison {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot open '" + path.string() + "' for writing");
  }

  void bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close() {
    out_.close();
    if (!out_) throw Error("write to '" + path_.string() + "' failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path)
      : name_(path.string()), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open '" + name_ + "'");
  }

  [[nodiscard]] const std::string& name() const { return name_; }

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size) throw Error(name_ + ": truncated file");
  }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::uint64_t u64() { return read<std::uint64_t>(); }
  float f32() { return read<float>(); }
  double f64() { return read<double>(); }
  std::string str() {
    const std::uint32_t len = u32();
    if (len > (1u << 20)) throw Error(name_ + ": string field too long");
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw Error(name_ + ": trailing bytes");
  }

 private:
  template <typename T>
  T read() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }

  std::string name_;
  std::ifstream in_;
};

}  // namespace pcpoison

#endif  // PCPOISON_SRC_BINARY_STREAM_HPP_
