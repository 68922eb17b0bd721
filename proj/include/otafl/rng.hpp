// Counter-based keyed RNG for reproducible simulation.
//
// Every random draw in a run is addressed by (master_seed, stream, a, b, c)
// rather than by position in a shared sequence, so draws for distinct
// devices/rounds/slots are independent and a run is reproducible bit-for-bit
// regardless of evaluation order or thread count.

#pragma once

#include <cmath>
#include <cstdint>

namespace otafl {

// Logical sub-streams of the master seed. Values are part of the
// reproducibility contract: renumbering changes every trace.
enum class Stream : uint64_t {
  Channel = 1,    // fading coefficient, keyed (device, round)
  Noise = 2,      // additive receiver noise, keyed (round, slot)
  Perturbation = 3,  // shared direction, keyed (round)
  Sample = 4,     // local data sampling, keyed (device, round)
  Partition = 5,  // dataset shuffle for device shards
  Teacher = 6,    // synthetic-task label hyperplane
  Init = 7,       // model initialization
  AsyncSplit = 8, // per-round late-device subset
  Trial = 9,      // Monte-Carlo trial index
};

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes the key tuple into a 64-bit generator state. Feeding each component
// through splitmix keeps nearby keys (round k vs k+1) uncorrelated.
inline uint64_t mix_key(uint64_t seed, Stream stream, uint64_t a = 0,
                        uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = seed;
  uint64_t h = splitmix64(s);
  s ^= static_cast<uint64_t>(stream) + 0x9e3779b97f4a7c15ULL;
  h ^= splitmix64(s);
  s ^= a + 0xd1b54a32d192ed03ULL;
  h ^= splitmix64(s);
  s ^= b + 0x8cb92ba72f3d8dd7ULL;
  h ^= splitmix64(s);
  s ^= c + 0xeb44accab455d165ULL;
  h ^= splitmix64(s);
  return h;
}

// Small keyed generator. next_u64 is a splitmix sequence from the mixed key;
// Gaussians use Box-Muller so output is identical on every platform
// (std::normal_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t state) : state_(state) {}
  Rng(uint64_t seed, Stream stream, uint64_t a = 0, uint64_t b = 0,
      uint64_t c = 0)
      : state_(mix_key(seed, stream, a, b, c)) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Uniform integer in [0, n). n must be > 0; modulo bias is negligible for
  // the dataset-scale n used here.
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller. Consumes two uniforms per value and
  // caches the second, so one call may consume zero uniforms.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  // Rademacher sign, +1 or -1 with equal probability.
  double sign() { return (next_u64() >> 63) ? 1.0 : -1.0; }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace otafl
