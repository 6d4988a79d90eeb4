#include "rat/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace rat {

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

// Caps that reject garbage lengths before allocating.
constexpr std::uint64_t kMaxNameLen = 1 << 16;
constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors) {
  out.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint64_t>(out, tensor.dim());
    for (auto d : tensor.shape()) put_le<std::uint64_t>(out, d);
    for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw FormatError("failed writing checkpoint stream");
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("checkpoint truncated while reading magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("bad checkpoint magic (expected \"RATN\")");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto count = get_le<std::uint64_t>(in, "tensor count");
  std::vector<NamedTensor> result;
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name_len = get_le<std::uint32_t>(in, "name length");
    if (name_len > kMaxNameLen) throw FormatError("checkpoint name length is implausible");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("checkpoint truncated in tensor name");
    const auto rank = get_le<std::uint64_t>(in, "rank");
    if (rank == 0 || rank > kMaxRank)
      throw FormatError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const auto d = get_le<std::uint64_t>(in, "shape");
      if (d == 0 || d > kMaxElements || n * d > kMaxElements)
        throw FormatError("tensor '" + name + "' has an implausible shape");
      n *= d;
      shape.push_back(d);
    }
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in, "tensor data"));
    result.push_back({std::move(name), Tensor::from(std::move(shape), std::move(data))});
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("trailing bytes after checkpoint payload");
  return result;
}

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensors(in);
}

}  // namespace rat
