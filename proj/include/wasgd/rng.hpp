#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace wasgd {

// splitmix64: the 64-bit counter-based generator used everywhere seeds matter.
// Fixing the generator (rather than std::mt19937 + distributions, whose
// outputs are implementation-defined) makes every seeded permutation
// reproducible bit-for-bit across platforms and languages. The recipe is:
//
//   state += 0x9E3779B97F4A7C15
//   z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
//   z = (z ^ z>>27) * 0x94D049BB133111EB;  output z ^ z>>31
//
//   uniform01 = (next_u64() >> 11) * 2^-53            (in [0, 1))
//   below(n)  = next_u64() % n
//   shuffle   = Fisher-Yates, i = n-1..1, j = below(i+1)
//   gaussian  = Box-Muller on two uniforms, cosine branch first
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  uint64_t below(uint64_t n) { return next_u64() % n; }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - u keeps the log argument in (0, 1]
    double r = std::sqrt(-2.0 * std::log(1.0 - uniform01()));
    double t = 2.0 * std::numbers::pi * uniform01();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Mixes a value through the splitmix64 finalizer (stateless).
inline uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Per-worker / per-purpose seed streams derived from one base seed.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return mix64(mix64(base) ^ mix64(stream + 1));
}

// The identity permutation shuffled with Fisher-Yates under a fresh Rng(seed).
// (seed, n) fully determines the result.
inline std::vector<uint32_t> seeded_permutation(uint64_t seed, size_t n) {
  std::vector<uint32_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = static_cast<uint32_t>(i);
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) {
    size_t j = static_cast<size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace wasgd
