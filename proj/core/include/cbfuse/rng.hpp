#pragma once

#include <cstdint>
#include <random>

namespace cbfuse {

// splitmix64; used for seed derivation and per-voxel hash noise so that
// parallel generation stays independent of thread count.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_u64(uint64_t a, uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL));
}

// uniform double in [0,1) from a hash, 53-bit resolution
inline double hash_unit(uint64_t a, uint64_t b) {
  return static_cast<double>(hash_u64(a, b) >> 11) * 0x1.0p-53;
}

// Seeded generator with a pinned uniform mapping. std::uniform_real_distribution
// is implementation-defined, so draws go through our own scaling to keep
// sequences identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0,1)
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // [lo,hi); degenerate lo==hi returns lo exactly (still consumes a draw)
  double uniform(double lo, double hi) {
    double u = unit();
    return lo + u * (hi - lo);
  }

  // inclusive integer range
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(unit() * static_cast<double>(hi - lo + 1));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cbfuse
