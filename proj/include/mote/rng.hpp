#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace mote {

// Deterministic splitmix64 stream. All randomness in the library goes through
// this type so that runs are reproducible bit-for-bit across platforms; the
// standard <random> distributions are implementation-defined and avoided.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  static Rng substream(uint64_t seed, uint64_t stream) {
    Rng mix(seed);
    mix.next_u64();
    mix.state_ ^= 0x9e3779b97f4a7c15ull * (stream + 1);
    mix.next_u64();
    return mix;
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Modulo bias is irrelevant at the n used here.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Box-Muller; consumes exactly two uniforms per call.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Normal(0, std) truncated to +-cut standard deviations by rejection.
  double trunc_normal(double std_dev, double cut = 2.0) {
    for (;;) {
      double z = normal();
      if (z >= -cut && z <= cut) return z * std_dev;
    }
  }

  // Knuth's method; fine for the lambdas used by the synthetic generator.
  int poisson(double lambda) {
    double limit = std::exp(-lambda);
    double p = 1.0;
    int k = 0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace mote
