#include "kern/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "kern/io_util.hpp"

namespace kern::io {

namespace {

constexpr char kMagic[4] = {'K', 'E', 'R', 'N'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  std::uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated checkpoint while reading " + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in, const std::string& what) {
  std::uint8_t b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("truncated checkpoint while reading " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  atomic_write(path, [&](std::ostream& out) {
    out.write(kMagic, 4);
    put_u32(out, ckpt.version);
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
      put_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const std::uint8_t dtype = static_cast<std::uint8_t>(tensor.dtype);
      const std::uint8_t rank = static_cast<std::uint8_t>(tensor.dims.size());
      out.write(reinterpret_cast<const char*>(&dtype), 1);
      out.write(reinterpret_cast<const char*>(&rank), 1);
      for (const auto d : tensor.dims) put_u64(out, d);
      if (tensor.data.size() != tensor.numel() * dtype_size(tensor.dtype))
        throw FormatError("tensor " + name + " payload size mismatch on save");
      out.write(reinterpret_cast<const char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size()));
    }
    put_u32(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
    out.write(ckpt.config_json.data(),
              static_cast<std::streamsize>(ckpt.config_json.size()));
  });
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  Checkpoint ckpt;
  ckpt.version = get_u32(in, "version");
  if (ckpt.version != Checkpoint::kVersion)
    throw VersionError("checkpoint version " + std::to_string(ckpt.version) +
                       " unsupported (expected " +
                       std::to_string(Checkpoint::kVersion) + ")");
  const std::uint32_t count = get_u32(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw FormatError("truncated checkpoint while reading tensor name");
    std::uint8_t dtype_byte = 0, rank = 0;
    if (!in.read(reinterpret_cast<char*>(&dtype_byte), 1) ||
        !in.read(reinterpret_cast<char*>(&rank), 1))
      throw FormatError("truncated checkpoint while reading tensor header");
    if (dtype_byte > 2)
      throw FormatError("unknown dtype " + std::to_string(dtype_byte) +
                        " for tensor " + name);
    RawTensor tensor;
    tensor.dtype = static_cast<Dtype>(dtype_byte);
    for (std::uint8_t d = 0; d < rank; ++d)
      tensor.dims.push_back(get_u64(in, "tensor dims"));
    const std::uint64_t bytes = tensor.numel() * dtype_size(tensor.dtype);
    tensor.data.resize(bytes);
    if (!in.read(reinterpret_cast<char*>(tensor.data.data()),
                 static_cast<std::streamsize>(bytes)))
      throw FormatError("truncated checkpoint while reading tensor " + name);
    ckpt.add(std::move(name), std::move(tensor));
  }
  const std::uint32_t json_len = get_u32(in, "config length");
  ckpt.config_json.resize(json_len);
  if (!in.read(ckpt.config_json.data(), json_len))
    throw FormatError("truncated checkpoint while reading config snapshot");
  return ckpt;
}

}  // namespace kern::io
