#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "vscreen/errors.hpp"

namespace vscreen {

// Counter-based generator built on the SplitMix64 finalizer
// (constants from Steele/Lea/Vigna, "Fast splittable pseudorandom number
// generators"). The i-th output word of a stream is a pure function of
// (stream_seed, i):
//
//   word(i) = mix64(stream_seed + (i + 1) * 0x9E3779B97F4A7C15)
//
// which makes every draw random-access, reproducible across runs and
// platforms, and safe to split into independent substreams by hashing
// stream identifiers into the seed. All floating-point derivations below
// use only IEEE add/mul, never libm.

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// FNV-1a, for folding string identifiers into stream seeds.
constexpr std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  // Derives an independent substream; ids may be integers or strings.
  template <typename... Ids>
  Rng stream(Ids... ids) const {
    std::uint64_t s = seed_;
    ((s = mix64(s ^ mix64(to_id(ids)))), ...);
    return Rng(s);
  }

  std::uint64_t word_at(std::uint64_t i) const { return mix64(seed_ + (i + 1) * kGolden); }

  std::uint64_t next_u64() { return word_at(counter_++); }

  // Uniform double in [0, 1), 53-bit resolution.
  double real64() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) via the 128-bit multiply-shift map.
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw ValueError("Rng::index: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * real64(); }

  // Approximate standard normal as the Irwin-Hall 12-sum; avoids libm so the
  // value is a deterministic function of the integer stream alone.
  double gauss() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += real64();
    return s - 6.0;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(index(i));
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static constexpr std::uint64_t to_id(std::uint64_t v) { return v; }
  static constexpr std::uint64_t to_id(std::int64_t v) { return static_cast<std::uint64_t>(v); }
  static constexpr std::uint64_t to_id(int v) { return static_cast<std::uint64_t>(v); }
  static constexpr std::uint64_t to_id(unsigned v) { return v; }
  static constexpr std::uint64_t to_id(std::string_view s) { return hash_str(s); }
  static constexpr std::uint64_t to_id(const char* s) { return hash_str(s); }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace vscreen
