#include "rat/rng.hpp"

#include <cmath>
#include <numbers>

namespace rat {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_key(std::uint64_t parent, std::string_view label) {
  return mix64(mix64(parent ^ kGolden) ^ fnv1a64(label));
}

}  // namespace

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RngStream::RngStream(std::uint64_t seed, std::string_view stream_id)
    : seed_(seed), key_(derive_key(mix64(seed), stream_id)) {}

RngStream RngStream::split(std::string_view child_id) const {
  return RngStream(seed_, derive_key(key_, child_id));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t c = counter_++;
  // Two rounds keyed on both halves so that nearby keys and counters decorrelate.
  return mix64(mix64(key_ + c * kGolden) ^ (key_ >> 17 | key_ << 47));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

double RngStream::normal(double mean, double stddev) {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace rat
