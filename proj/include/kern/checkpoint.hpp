#pragma once

// Versioned binary checkpoint container. Layout, all integers
// little-endian:
//   magic "KERN" | u32 version=1 | u32 tensor_count
//   per tensor: u32 name_len | name | u8 dtype | u8 rank | u64 dims[rank]
//               | row-major payload
//   u32 json_len | UTF-8 JSON config snapshot
// dtype: 0 = f32, 1 = f64, 2 = i64. Save/load round-trips are bit-exact;
// writes go through a temp file + rename.

#include <cstdint>
#include <string>
#include <vector>

#include "kern/common.hpp"
#include "kern/tensor.hpp"

namespace kern::io {

enum class Dtype : std::uint8_t { kF32 = 0, kF64 = 1, kI64 = 2 };

inline std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
    case Dtype::kI64: return 8;
  }
  throw FormatError("unknown dtype");
}

struct RawTensor {
  Dtype dtype = Dtype::kF32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> data;  // little-endian payload

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (const auto d : dims) n *= d;
    return n;
  }
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::vector<std::pair<std::string, RawTensor>> tensors;  // insertion order
  std::string config_json;

  const RawTensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
  void add(std::string name, RawTensor tensor) {
    tensors.emplace_back(std::move(name), std::move(tensor));
  }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

template <typename S>
constexpr Dtype dtype_of() {
  if constexpr (sizeof(S) == 4)
    return Dtype::kF32;
  else
    return Dtype::kF64;
}

template <typename S>
RawTensor to_raw(const nn::Tensor<S>& t) {
  RawTensor raw;
  raw.dtype = dtype_of<S>();
  for (const int d : t.shape())
    raw.dims.push_back(static_cast<std::uint64_t>(d));
  raw.data.resize(t.numel() * sizeof(S));
  std::memcpy(raw.data.data(), t.values().data(), raw.data.size());
  return raw;
}

// Strict: dtype and shape must match the destination tensor.
template <typename S>
void from_raw(const std::string& name, const RawTensor& raw, nn::Tensor<S>& dst) {
  if (raw.dtype != dtype_of<S>())
    throw FormatError("checkpoint tensor " + name + " has wrong dtype");
  if (raw.dims.size() != static_cast<std::size_t>(dst.rank()))
    throw FormatError("checkpoint tensor " + name + " has rank " +
                      std::to_string(raw.dims.size()) + ", expected " +
                      std::to_string(dst.rank()));
  for (int i = 0; i < dst.rank(); ++i)
    if (raw.dims[static_cast<std::size_t>(i)] !=
        static_cast<std::uint64_t>(dst.dim(i)))
      throw FormatError("checkpoint tensor " + name + " dimension mismatch");
  if (raw.data.size() != dst.numel() * sizeof(S))
    throw FormatError("checkpoint tensor " + name + " payload size mismatch");
  std::memcpy(dst.values().data(), raw.data.data(), raw.data.size());
}

}  // namespace kern::io
