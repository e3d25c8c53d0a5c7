#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace bagknot {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Mixes a base seed with a list of tags into an independent stream seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                           std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = splitmix64(seed ^ 0x5DEECE66DULL);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
  return h;
}

/// Maps a 64-bit hash to [0, 1) using its top 53 bits.
inline constexpr double unit_interval(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(derive_seed(seed, tags));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double uniform01(Rng& rng) { return unit_interval(rng()); }

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// 64-bit FNV-1a, used for content and configuration hashes.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001B3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) noexcept { return update(s.data(), s.size()); }
  template <class T>
  Fnv1a& update_span(std::span<const T> s) noexcept {
    return update(s.data(), s.size_bytes());
  }
  std::uint64_t digest() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::string hex64(std::uint64_t h) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return s;
}

}  // namespace bagknot
