// core/io.cc

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

#include "cemnet/core/io.h"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cemnet/core/error.h"
#include "cemnet/core/rng.h"

namespace cemnet {

namespace fs = std::filesystem;

static_assert(sizeof(float) == 4, "float32 expected");

static void put_u32(std::vector<uint8_t> &buf, uint32_t v) {
  buf.push_back(static_cast<uint8_t>(v & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

static uint32_t get_u32(const uint8_t *p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

static void put_f32(std::vector<uint8_t> &buf, double v) {
  float f = static_cast<float>(v);
  uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(buf, u);
}

static double get_f32(const uint8_t *p) {
  uint32_t u = get_u32(p);
  float f;
  std::memcpy(&f, &u, 4);
  return static_cast<double>(f);
}

std::vector<uint8_t> read_file_bytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  in.seekg(0, std::ios::end);
  std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0 &&
      !in.read(reinterpret_cast<char *>(bytes.data()), size))
    throw FormatError("short read on " + path);
  return bytes;
}

void write_file_bytes(const std::string &path,
                      const std::vector<uint8_t> &bytes) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed on " + path);
}

void write_blob(const std::string &path, const Tensor &t) {
  if (t.rank() != 2) throw FormatError("write_blob: want rank-2 tensor");
  std::vector<uint8_t> buf;
  buf.reserve(16 + static_cast<size_t>(t.numel()) * 4);
  buf.push_back('C');
  buf.push_back('E');
  buf.push_back('M');
  buf.push_back('N');
  put_u32(buf, 2);
  put_u32(buf, static_cast<uint32_t>(t.dim(0)));
  put_u32(buf, static_cast<uint32_t>(t.dim(1)));
  for (int64_t i = 0; i < t.numel(); ++i) put_f32(buf, t[i]);
  write_file_bytes(path, buf);
}

Tensor read_blob(const std::string &path) {
  std::vector<uint8_t> buf = read_file_bytes(path);
  if (buf.size() < 16) throw FormatError(path + ": truncated header");
  if (std::memcmp(buf.data(), "CEMN", 4) != 0)
    throw FormatError(path + ": bad magic");
  const uint32_t rank = get_u32(buf.data() + 4);
  if (rank != 2) throw FormatError(path + ": unsupported rank");
  const uint32_t d0 = get_u32(buf.data() + 8);
  const uint32_t d1 = get_u32(buf.data() + 12);
  const uint64_t want = 16 + static_cast<uint64_t>(d0) * d1 * 4;
  if (buf.size() != want)
    throw FormatError(path + ": payload size mismatch");
  Tensor t({static_cast<int>(d0), static_cast<int>(d1)});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = get_f32(buf.data() + 16 + i * 4);
  return t;
}

nlohmann::json load_json(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(path + ": " + e.what());
  }
  return j;
}

void save_json(const std::string &path, const nlohmann::json &j) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---- checkpoints ----

void CheckpointArchive::put(const std::string &name, const Tensor &t) {
  tensors_[name] = t;
}

const Tensor &CheckpointArchive::get(const std::string &name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw FormatError("checkpoint tensor missing: " + name);
  return it->second;
}

void CheckpointArchive::save(const std::string &dir) const {
  fs::create_directories(dir);
  std::vector<uint8_t> bin;
  nlohmann::json index = nlohmann::json::array();
  for (const auto &kv : tensors_) {
    nlohmann::json entry;
    entry["name"] = kv.first;
    entry["shape"] = kv.second.shape();
    entry["offset"] = bin.size();
    put_u32(bin, static_cast<uint32_t>(kv.second.rank()));
    for (int d : kv.second.shape()) put_u32(bin, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < kv.second.numel(); ++i) put_f32(bin, kv.second[i]);
    index.push_back(entry);
  }
  write_file_bytes(dir + "/tensors.bin", bin);

  std::ostringstream hash;
  hash << std::hex << fnv1a64(bin.data(), bin.size());

  nlohmann::json manifest;
  manifest["kind"] = "cemnet-checkpoint";
  manifest["format_version"] = kFormatVersion;
  manifest["module"] = module_;
  manifest["seed"] = std::to_string(seed_);
  manifest["meta"] = meta_;
  manifest["tensors"] = index;
  manifest["payload_fnv1a"] = hash.str();
  save_json(dir + "/manifest.json", manifest);
}

CheckpointArchive CheckpointArchive::load(const std::string &dir) {
  nlohmann::json manifest = load_json(dir + "/manifest.json");
  if (manifest.value("kind", "") != "cemnet-checkpoint")
    throw FormatError(dir + ": not a checkpoint directory");
  if (manifest.value("format_version", -1) != kFormatVersion)
    throw FormatError(dir + ": unsupported checkpoint format_version");

  std::vector<uint8_t> bin = read_file_bytes(dir + "/tensors.bin");
  std::ostringstream hash;
  hash << std::hex << fnv1a64(bin.data(), bin.size());
  if (manifest.value("payload_fnv1a", "") != hash.str())
    throw FormatError(dir + ": tensor payload hash mismatch");

  CheckpointArchive a;
  a.module_ = manifest.value("module", "");
  a.seed_ = std::stoull(manifest.value("seed", "0"));
  a.meta_ = manifest.value("meta", nlohmann::json::object());
  for (const auto &entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const uint64_t off = entry.at("offset").get<uint64_t>();
    const uint32_t rank = get_u32(bin.data() + off);
    if (rank != shape.size())
      throw FormatError(dir + ": rank mismatch for " + name);
    std::vector<int> dims(rank);
    for (uint32_t i = 0; i < rank; ++i) {
      dims[i] = static_cast<int>(get_u32(bin.data() + off + 4 + 4 * i));
      if (dims[i] != shape[i])
        throw FormatError(dir + ": shape mismatch for " + name);
    }
    Tensor t(dims);
    const uint64_t data_off = off + 4 + 4 * rank;
    if (data_off + static_cast<uint64_t>(t.numel()) * 4 > bin.size())
      throw FormatError(dir + ": truncated tensor " + name);
    for (int64_t i = 0; i < t.numel(); ++i)
      t[i] = get_f32(bin.data() + data_off + i * 4);
    a.tensors_[name] = std::move(t);
  }
  return a;
}

// ---- PNG ----

static void png_chunk(std::vector<uint8_t> &out, const char type[4],
                      const std::vector<uint8_t> &data) {
  put_u32(out, 0);  // length placeholder, fixed below (big endian)
  const size_t len_pos = out.size() - 4;
  const uint32_t len = static_cast<uint32_t>(data.size());
  out[len_pos] = static_cast<uint8_t>((len >> 24) & 0xff);
  out[len_pos + 1] = static_cast<uint8_t>((len >> 16) & 0xff);
  out[len_pos + 2] = static_cast<uint8_t>((len >> 8) & 0xff);
  out[len_pos + 3] = static_cast<uint8_t>(len & 0xff);
  const size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  out.push_back(static_cast<uint8_t>((crc >> 24) & 0xff));
  out.push_back(static_cast<uint8_t>((crc >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((crc >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>(crc & 0xff));
}

void write_png(const std::string &path, const std::vector<uint8_t> &rgb,
               int width, int height) {
  if (static_cast<size_t>(width) * height * 3 != rgb.size())
    throw InputError("write_png: buffer size mismatch");
  // Filter type 0 per scanline.
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (1 + 3 * width));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * width * 3,
               rgb.begin() + static_cast<size_t>(y + 1) * width * 3);
  }
  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw FormatError("write_png: deflate failed");
  comp.resize(comp_size);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  auto be32 = [&](uint32_t v) {
    ihdr.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
    ihdr.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    ihdr.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    ihdr.push_back(static_cast<uint8_t>(v & 0xff));
  };
  be32(static_cast<uint32_t>(width));
  be32(static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", comp);
  png_chunk(out, "IEND", {});
  write_file_bytes(path, out);
}

}  // namespace cemnet
