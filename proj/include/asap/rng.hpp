#pragma once

#include <cmath>
#include <cstdint>

namespace asap {

// SplitMix64-based generator. std::mt19937 plus the standard distributions is
// implementation-defined, which would break byte-identical dataset manifests
// across platforms; this generator produces the same stream everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
  uint64_t below(uint64_t n) { return next() % n; }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the Marsaglia polar method (no libm distribution
  // objects, so the stream stays portable).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Derives an independent stream id from (base seed, index).
  static uint64_t substream(uint64_t seed, uint64_t index) {
    Rng r(seed ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    r.next();
    return r.next();
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace asap
