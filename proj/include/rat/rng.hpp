#pragma once

#include <cstdint>
#include <string_view>

namespace rat {

/// Counter-based random stream.
///
/// Draw i of stream (seed, id) is a pure function of (seed, id, i), so the same
/// draws come out on every platform and run. Child streams derive their key
/// from the parent key and a label, which keeps them independent by
/// construction rather than by sequence spacing.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream_id);

  RngStream split(std::string_view child_id) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Box-Muller; consumes two draws per call.
  double normal(double mean, double stddev);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  RngStream(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t fnv1a64(std::string_view text);

}  // namespace rat
