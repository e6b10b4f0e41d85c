#pragma once

// Flat named-tensor archive.
//
//   magic    8 bytes  "GCKPT\0\0\1"
//   version  u32      kCheckpointSchema
//   n_meta   u32, then n_meta x (u32 len, key bytes, u32 len, value bytes)
//   n_tensor u32, then n_tensor x
//            (u32 len, name bytes, u64 rows, u64 cols, rows*cols f64 row-major)
//
// All integers and doubles little-endian.

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "groundchat/errors.hpp"

namespace groundchat {

inline constexpr std::uint32_t kCheckpointSchema = 1;
inline constexpr char kCheckpointMagic[8] = {'G', 'C', 'K', 'P', 'T', 0, 0, 1};

struct TensorArchive {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  const Eigen::MatrixXd& at(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return t;
    throw ParseError("checkpoint has no tensor '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }
};

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline void put_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& o, const std::string& s) {
  put_u32(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& i) {
  std::uint32_t v = 0;
  if (!i.read(reinterpret_cast<char*>(&v), 4)) throw ParseError("truncated checkpoint");
  return v;
}
inline std::uint64_t get_u64(std::istream& i) {
  std::uint64_t v = 0;
  if (!i.read(reinterpret_cast<char*>(&v), 8)) throw ParseError("truncated checkpoint");
  return v;
}
inline std::string get_str(std::istream& i) {
  std::uint32_t n = get_u32(i);
  if (n > (1u << 24)) throw ParseError("corrupt checkpoint string");
  std::string s(n, '\0');
  if (!i.read(s.data(), n)) throw ParseError("truncated checkpoint");
  return s;
}

}  // namespace ckpt_detail

inline void write_archive(const TensorArchive& a, std::ostream& out) {
  using namespace ckpt_detail;
  out.write(kCheckpointMagic, 8);
  put_u32(out, kCheckpointSchema);
  put_u32(out, static_cast<std::uint32_t>(a.meta.size()));
  for (auto& [k, v] : a.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(a.tensors.size()));
  for (auto& [name, t] : a.tensors) {
    put_str(out, name);
    put_u64(out, static_cast<std::uint64_t>(t.rows()));
    put_u64(out, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        double v = t(r, c);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
}

inline void save_archive(const TensorArchive& a, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BackendError("cannot write checkpoint " + path);
  write_archive(a, out);
}

inline TensorArchive read_archive(std::istream& in) {
  using namespace ckpt_detail;
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError("not a checkpoint archive");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointSchema)
    throw ParseError("unsupported checkpoint schema " + std::to_string(version));
  TensorArchive a;
  for (std::uint32_t i = 0, n = get_u32(in); i < n; ++i) {
    std::string k = get_str(in);
    a.meta[k] = get_str(in);
  }
  for (std::uint32_t i = 0, n = get_u32(in); i < n; ++i) {
    std::string name = get_str(in);
    const std::uint64_t rows = get_u64(in), cols = get_u64(in);
    if (rows * cols > (1ull << 32)) throw ParseError("corrupt tensor shape for " + name);
    Eigen::MatrixXd t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        double v;
        if (!in.read(reinterpret_cast<char*>(&v), 8)) throw ParseError("truncated checkpoint");
        t(r, c) = v;
      }
    a.tensors.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

inline TensorArchive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BackendError("cannot read checkpoint " + path);
  return read_archive(in);
}

}  // namespace groundchat
