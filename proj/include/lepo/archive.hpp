// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary container used for checkpoints.
//
//   magic      8 bytes   "LEPOCKPT"
//   version    u32
//   n_meta     u32
//   n_meta x { key: str, value: str }
//   n_tensors  u32
//   n_tensors x { name: str, rank: u32, dims: u64 x rank, data: f64 x prod(dims) }
//   trailer    8 bytes   "LEPO-END"
//
// str is a u32 byte length followed by the bytes. Every integer and float is
// little-endian. See docs/checkpoint_format.md.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lepo/error.hpp"
#include "lepo/tensor.hpp"

namespace lepo {

inline constexpr std::array<char, 8> kArchiveMagic{'L', 'E', 'P', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::array<char, 8> kArchiveTrailer{'L', 'E', 'P', 'O', '-', 'E', 'N', 'D'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct Archive {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set(std::string key, std::string value) { meta.emplace_back(std::move(key), std::move(value)); }
  void add(std::string name, const Tensor& t) { tensors.emplace_back(std::move(name), t.detach()); }

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw FormatError("checkpoint is missing field '" + key + "'");
  }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return true;
    return false;
  }

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw FormatError("checkpoint is missing tensor '" + name + "'");
  }
};

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class ArchiveWriter {
 public:
  explicit ArchiveWriter(std::ostream& os) : os_(os) {}

  template <class T>
  void put(T v) {
    v = to_little(v);
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_raw(const std::array<char, 8>& bytes) { os_.write(bytes.data(), 8); }

 private:
  std::ostream& os_;
};

class ArchiveReader {
 public:
  explicit ArchiveReader(std::istream& is) : is_(is) {}

  template <class T>
  T get(const std::string& field) {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw FormatError("truncated checkpoint while reading " + field);
    return to_little(v);
  }
  std::string get_string(const std::string& field) {
    const auto n = get<std::uint32_t>(field + " length");
    if (n > (1u << 24)) throw FormatError("implausible length for " + field);
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) throw FormatError("truncated checkpoint while reading " + field);
    return s;
  }
  std::array<char, 8> get_raw(const std::string& field) {
    std::array<char, 8> b{};
    is_.read(b.data(), 8);
    if (!is_) throw FormatError("truncated checkpoint while reading " + field);
    return b;
  }

 private:
  std::istream& is_;
};

}  // namespace detail

inline void write_archive(const Archive& archive, std::ostream& os) {
  detail::ArchiveWriter w(os);
  w.put_raw(kArchiveMagic);
  w.put(kArchiveVersion);
  w.put(static_cast<std::uint32_t>(archive.meta.size()));
  for (const auto& [k, v] : archive.meta) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    for (double v : t.data()) w.put(v);
  }
  w.put_raw(kArchiveTrailer);
  if (!os) throw FormatError("failed writing checkpoint");
}

inline Archive read_archive(std::istream& is) {
  detail::ArchiveReader r(is);
  if (r.get_raw("magic") != kArchiveMagic) throw FormatError("bad checkpoint field 'magic'");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kArchiveVersion) {
    throw FormatError("unsupported checkpoint field 'version' = " + std::to_string(version));
  }
  Archive archive;
  const auto n_meta = r.get<std::uint32_t>("meta count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = r.get_string("meta key #" + std::to_string(i));
    auto value = r.get_string("meta value '" + key + "'");
    archive.meta.emplace_back(std::move(key), std::move(value));
  }
  const auto n_tensors = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.get_string("tensor name #" + std::to_string(i));
    const auto rank = r.get<std::uint32_t>("rank of tensor '" + name + "'");
    if (rank > 8) throw FormatError("implausible rank for tensor '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>("shape of tensor '" + name + "'"));
      if (d > (1u << 28)) throw FormatError("implausible shape for tensor '" + name + "'");
    }
    std::vector<double> data(shape_product(shape));
    for (auto& v : data) v = r.get<double>("data of tensor '" + name + "'");
    archive.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.get_raw("trailer") != kArchiveTrailer) throw FormatError("bad checkpoint field 'trailer'");
  return archive;
}

inline void save_archive(const Archive& archive, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + tmp + "' for writing");
    write_archive(archive, os);
  }
  std::filesystem::rename(tmp, path);
}

inline Archive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  return read_archive(is);
}

}  // namespace lepo
