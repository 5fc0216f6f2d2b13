#pragma once

#include <cstdint>
#include <random>

namespace gridnas {

// Seed-derivation mixer (splitmix64). Only used to turn (root seed, stream
// label, index) triples into independent engine seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Named sub-stream labels. Every random draw in a run flows from one root
// seed through these, so e.g. adding workers never perturbs dataset
// generation and per-task streams can be pinned independently.
namespace stream {
inline constexpr std::uint64_t kWeightInit = 0x11;
inline constexpr std::uint64_t kDataset = 0x22;
inline constexpr std::uint64_t kBatch = 0x33;
inline constexpr std::uint64_t kTaskSample = 0x44;  // per (task, worker)
inline constexpr std::uint64_t kProxySample = 0x55; // per worker
inline constexpr std::uint64_t kTaskSeed = 0x66;    // default per-task root
}  // namespace stream

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag,
                                 std::uint64_t index = 0) {
  std::uint64_t s = root;
  (void)splitmix64(s);
  s ^= (tag + 1) * 0x85ebca6b0bd1e995ull;
  (void)splitmix64(s);
  s ^= (index + 1) * 0xc2b2ae3d27d4eb4full;
  return splitmix64(s);
}

// mt19937_64 gives a standard-specified (hence bit-stable) stream; the
// derived doubles below avoid std::*_distribution, whose sequences are
// implementation-defined and would break byte-identical artifacts.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform in [0, n). Bias from the float path is ~2^-53, irrelevant at
  // the mixture sizes used here.
  int uniform_int(int n) {
    int v = static_cast<int>(uniform() * static_cast<double>(n));
    return v < n ? v : n - 1;
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gridnas
