#pragma once

// Counter-based random streams. Every random draw in the library is keyed by
// a tuple such as (seed, purpose, step, sample), so results do not depend on
// call order, worker count, or whether a run was resumed.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

namespace droppos {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Stream purposes; part of every key so that, e.g., patch masks and
/// augmentation crops of the same sample are independent.
enum class Stream : std::uint64_t {
  kInit = 1,
  kPatchMask = 2,
  kPositionMask = 3,
  kAugment = 4,
  kShuffle = 5,
  kSynthetic = 6,
  kProbe = 7,
};

class KeyedRng {
 public:
  KeyedRng(std::initializer_list<std::uint64_t> key) noexcept {
    std::uint64_t h = 0x6A09E667F3BCC909ULL;
    for (auto k : key) h = splitmix64(h ^ splitmix64(k));
    state_ = h;
  }
  KeyedRng(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) noexcept
      : KeyedRng({seed, static_cast<std::uint64_t>(s), a, b}) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound), bias-free (Lemire's multiply-shift with rejection).
  std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  double normal() noexcept {
    // Box-Muller, one value per call; the sibling is discarded to keep the
    // stream position a pure function of the number of calls.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Normal(0, std) resampled until it falls inside [-2 std, 2 std].
  double truncated_normal(double stddev) noexcept {
    for (;;) {
      const double z = normal();
      if (z >= -2.0 && z <= 2.0) return z * stddev;
    }
  }

  template <class U>
  void shuffle(std::span<U> v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) noexcept {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(p));
    return p;
  }

 private:
  std::uint64_t state_;
};

}  // namespace droppos
