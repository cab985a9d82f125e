#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "intuit/tensor.hpp"

namespace intuit {

// Versioned little-endian container: magic "INTUIT1", format version,
// head shape (rows x cols, zero for headless policy checkpoints), then
// named parameter arrays as 32-bit reals with shape headers.
namespace checkpoint {

constexpr char kMagic[8] = {'I', 'N', 'T', 'U', 'I', 'T', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(os, v);
}

inline float read_f32(std::istream& is) {
  std::uint32_t v = read_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

struct HeadShape {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

inline void save(const std::string& path,
                 const std::vector<std::pair<std::string, Tensor>>& params,
                 HeadShape head = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TensorError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 8);
  detail::write_u32(os, kVersion);
  detail::write_u32(os, head.rows);
  detail::write_u32(os, head.cols);
  detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<long>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape())
      detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.values())
      detail::write_f32(os, static_cast<float>(v));
  }
  if (!os) throw TensorError("checkpoint: write failed for " + path);
}

struct Loaded {
  HeadShape head;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw TensorError("checkpoint: missing parameter " + name);
  }
};

inline Loaded load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw TensorError("checkpoint: bad magic in " + path);
  std::uint32_t version = detail::read_u32(is);
  if (version != kVersion)
    throw TensorError("checkpoint: unsupported version " +
                      std::to_string(version) + " in " + path);
  Loaded out;
  out.head.rows = detail::read_u32(is);
  out.head.cols = detail::read_u32(is);
  std::uint32_t count = detail::read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t ndim = detail::read_u32(is);
    std::vector<std::size_t> shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape[d] = detail::read_u32(is);
    Tensor t(shape, true);
    for (std::size_t j = 0; j < t.numel(); ++j)
      t.at(j) = static_cast<double>(detail::read_f32(is));
    if (!is) throw TensorError("checkpoint: truncated file " + path);
    out.params.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

// Copies loaded values into an existing parameter set, shape-checked.
inline void restore(std::vector<std::pair<std::string, Tensor>> params,
                    const Loaded& loaded) {
  for (auto& [name, t] : params) {
    const Tensor& src = loaded.find(name);
    if (src.shape() != t.shape())
      throw DimensionError("checkpoint: shape mismatch for " + name);
    t.values() = src.values();
  }
}

}  // namespace checkpoint
}  // namespace intuit
