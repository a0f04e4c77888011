#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace al2 {

// All randomness in the library flows through this header. std::mt19937_64 has a
// standard-specified output sequence, but the std distributions do not, so the
// value derivations below are written out by hand. Identical seeds therefore give
// identical streams on any conforming platform.

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Child-stream seed from a root seed, a purpose tag, and an index. Distinct tags
// give uncorrelated streams even when roots collide across purposes.
inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t index = 0) {
  uint64_t state = root ^ fnv1a64(tag);
  state += 0xD1B54A32D192ED03ULL * (index + 1);
  uint64_t a = splitmix64(state);
  uint64_t b = splitmix64(state);
  return a ^ (b << 1) ^ (b >> 63);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0,n) by rejection.
  uint64_t below(uint64_t n) {
    const uint64_t limit = (UINT64_MAX / n) * n;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Fisher-Yates; the loop order is part of the determinism contract.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (uint64_t i = v.size(); i > 1; --i) {
      uint64_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(n);
    for (int64_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace al2
