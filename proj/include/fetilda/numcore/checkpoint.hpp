#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fetilda/numcore/tensor.hpp"

namespace fetilda {

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Layout: 8-byte magic "FTLDCKPT", version byte, then records until EOF:
//   u64 name length, name bytes, u64 rank, rank x u64 dims, f64 payload.
// All integers and doubles little-endian.
inline constexpr char kCheckpointMagic[8] = {'F', 'T', 'L', 'D', 'C', 'K', 'P', 'T'};
inline constexpr unsigned char kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over names, shapes and the raw bytes of every value.
std::uint64_t checksum(const std::vector<NamedTensor>& tensors);

}  // namespace fetilda
