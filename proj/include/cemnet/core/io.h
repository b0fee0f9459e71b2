// cemnet/core/io.h

// Copyright 2026  CEM-Net Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CEMNET_CORE_IO_H_
#define CEMNET_CORE_IO_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cemnet/core/tensor.h"

namespace cemnet {

// ---- array blobs ----
//
// On-disk array format used by the corpus: 16-byte header (magic "CEMN",
// u32 rank which is always 2, u32 d0, u32 d1) followed by d0*d1 float32
// little-endian values, row-major. Higher-rank arrays are stored flattened
// to two dimensions; meta.json carries the logical shape.
void write_blob(const std::string &path, const Tensor &t);
Tensor read_blob(const std::string &path);

// ---- JSON files ----
nlohmann::json load_json(const std::string &path);
void save_json(const std::string &path, const nlohmann::json &j);

// ---- byte-level helpers ----
std::vector<uint8_t> read_file_bytes(const std::string &path);
void write_file_bytes(const std::string &path,
                      const std::vector<uint8_t> &bytes);

// ---- checkpoints ----
//
// A checkpoint is a directory holding manifest.json and tensors.bin.
// tensors.bin concatenates records of u32 rank, u32 dims[rank], float32
// data. The manifest records module, format_version, seed, free-form meta,
// the tensor index (name, shape, byte offset), and an FNV-1a hash of
// tensors.bin so corruption is detected at load time.
class CheckpointArchive {
 public:
  CheckpointArchive() : meta_(nlohmann::json::object()) {}

  void set_module(const std::string &m) { module_ = m; }
  const std::string &module() const { return module_; }
  void set_seed(uint64_t s) { seed_ = s; }
  uint64_t seed() const { return seed_; }
  nlohmann::json &meta() { return meta_; }
  const nlohmann::json &meta() const { return meta_; }

  void put(const std::string &name, const Tensor &t);
  bool has(const std::string &name) const { return tensors_.count(name) != 0; }
  const Tensor &get(const std::string &name) const;
  const std::map<std::string, Tensor> &tensors() const { return tensors_; }

  void save(const std::string &dir) const;
  static CheckpointArchive load(const std::string &dir);

  static constexpr int kFormatVersion = 1;

 private:
  std::string module_;
  uint64_t seed_ = 0;
  nlohmann::json meta_;
  std::map<std::string, Tensor> tensors_;
};

// ---- PNG (debug output) ----
//
// Writes an 8-bit RGB PNG; rgb is row-major, 3 bytes per pixel.
void write_png(const std::string &path, const std::vector<uint8_t> &rgb,
               int width, int height);

}  // namespace cemnet

#endif  // CEMNET_CORE_IO_H_
