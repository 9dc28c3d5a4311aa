#pragma once

#include <cstdint>
#include <random>

namespace kalm {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Splittable PRNG: one root seed, independent child streams derived by
// hashing (seed, stream). Every source of randomness in the artifact
// (init, shuffling, dropout masks, corruption sampling) takes its own
// stream so adding a consumer never perturbs the others.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(mix(seed, 0)) {}
  Rng(uint64_t seed, uint64_t stream) : seed_(seed), eng_(mix(seed, stream)) {}

  Rng child(uint64_t stream) const { return Rng(mix(seed_, stream), 1); }

  uint64_t seed() const { return seed_; }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }
  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    std::uniform_int_distribution<uint64_t> d(0, n - 1);
    return d(eng_);
  }
  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(eng_);
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  static uint64_t mix(uint64_t seed, uint64_t stream) {
    uint64_t s = seed ^ (0xd1b54a32d192ed03ULL * (stream + 1));
    return splitmix64(s);
  }

  uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace kalm
