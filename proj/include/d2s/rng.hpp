#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace d2s {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

// Deterministic generator (splitmix64 core). Identical seed gives an
// identical draw stream on every run. Independent streams for distinct
// purposes are derived from the *root* seed, never from drawn state:
//   stream(name)  -> seed' = mix(seed ^ fnv1a(name))
//   stream(index) -> seed' = mix(seed ^ (index + 1) * 0x9e3779b97f4a7c15)
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // Uniform draw in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Prng stream(std::string_view purpose) const {
    std::uint64_t s = seed_ ^ detail::fnv1a(purpose);
    return Prng(detail::splitmix64(s));
  }

  Prng stream(std::uint64_t index) const {
    std::uint64_t s = seed_ ^ ((index + 1) * 0x9e3779b97f4a7c15ull);
    return Prng(detail::splitmix64(s));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace d2s
