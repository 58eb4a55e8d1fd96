#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace votebody {

// Deterministic random source. mt19937 output is fixed by the standard, but
// the std distributions are not, so the float draws are derived here by hand
// to keep every platform on the same stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

  // Derive an independent stream, e.g. per sample index.
  static Rng fork(uint64_t seed, uint64_t stream) {
    return Rng(mix(seed, stream));
  }

  uint32_t next_u32() { return engine_(); }

  // Uniform in [0, 1) with 24 bits of resolution.
  double uniform() {
    return static_cast<double>(next_u32() >> 8) * (1.0 / 16777216.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  int64_t below(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Box-Muller; one value per call, no cached spare (keeps the stream simple).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-12) u1 = 1e-12;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Unit vector, uniform over the sphere.
  void unit_vector(double out[3]) {
    const double z = uniform(-1.0, 1.0);
    const double phi = uniform(0.0, 6.283185307179586);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    out[0] = r * std::cos(phi);
    out[1] = r * std::sin(phi);
    out[2] = z;
  }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a * 0x9e3779b97f4a7c15ull + b + 0xbf58476d1ce4e5b9ull;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  std::mt19937 engine_;
};

}  // namespace votebody
