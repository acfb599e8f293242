#ifndef VIGAT_RANDOM_HPP
#define VIGAT_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace vigat {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a list of integers into a single 64-bit stream key.
inline std::uint64_t mix_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// Seeded generator with platform-independent uniform and normal draws.
/// Distributions are computed here rather than through <random> adaptors,
/// whose outputs differ between standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(i)]);
    return p;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Counter-based uniform stream: the i-th draw depends only on (key, i).
class CounterStream {
 public:
  explicit CounterStream(std::uint64_t key) : key_(key) {}

  double uniform() {
    const std::uint64_t v = splitmix64(key_ ^ splitmix64(counter_++));
    return static_cast<double>(v >> 11) * 0x1.0p-53;
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace vigat

#endif  // VIGAT_RANDOM_HPP
