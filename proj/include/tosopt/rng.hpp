#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace tosopt {

/// SplitMix64: 64-bit-state generator (Steele, Lea, Flood 2014). Chosen as the
/// artifact's sampling PRNG so batches are reproducible from a single u64 seed
/// in any implementation of the same algorithm.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  double next_unit() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n) via rejection sampling (no modulo bias).
  std::uint64_t bounded(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

 private:
  std::uint64_t state_;
};

/// Stateless finalizer of SplitMix64; used for counter-based streams
/// (dropout masks, per-index hashes) that must not depend on thread count.
inline std::uint64_t hash64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return hash64(seed ^ hash64(salt));
}

/// k distinct indices drawn uniformly from [0, pool) via partial Fisher-Yates.
/// Order of the result is the draw order.
std::vector<std::size_t> sample_indices(std::size_t pool, std::size_t k, SplitMix64& rng);

template <typename T>
void shuffle_inplace(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.bounded(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace tosopt
