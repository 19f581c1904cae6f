#pragma once

#include <cstdint>
#include <limits>
#include <span>

namespace bipoint {

/// SplitMix64 step; used to expand a single 64-bit seed into generator state
/// and to derive independent per-sample seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a base seed with a stream index into a new, well-separated seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// xoshiro256** (Blackman & Vigna). The algorithm and its constants are fixed
/// here so every random draw in the project is reproducible across platforms;
/// the standard library distributions are deliberately not used.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next(); }
  std::uint64_t next();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal draw (Marsaglia polar method, second value cached).
  double normal();
  /// Unbiased integer in [0, bound) via rejection (Lemire).
  std::uint64_t below(std::uint64_t bound);
  /// Fair coin.
  bool coin() { return (next() >> 63) != 0; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace bipoint
