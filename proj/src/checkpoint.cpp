#include "fetilda/numcore/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "fetilda/binary_io.hpp"

namespace fetilda {

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  os.put(static_cast<char>(kCheckpointVersion));
  for (const auto& [name, t] : tensors) {
    binio::write_le<std::uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_le<std::uint64_t>(os, t.rank());
    for (auto d : t.shape()) binio::write_le<std::uint64_t>(os, d);
    for (double v : t.data()) binio::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic): " + path.string());
  }
  const int version = is.get();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = binio::read_le<std::uint64_t>(is, "name length");
    if (len > (1u << 20)) throw std::runtime_error("checkpoint name length implausible");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("truncated name");
    const auto rank = binio::read_le<std::uint64_t>(is, "rank");
    if (rank > 8) throw std::runtime_error("checkpoint rank implausible for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = binio::read_le<std::uint64_t>(is, "dims");
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = binio::read_f64(is, "payload");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

std::uint64_t checksum(const std::vector<NamedTensor>& tensors) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xFFu;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    for (unsigned char ch : name) feed(ch);
    for (auto d : t.shape()) feed(d);
    for (double v : t.data()) feed(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace fetilda
