#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace vcm {

// Deterministic random stream backed by splitmix64. Chosen because it is
// tiny, well studied, and splittable: derive(salt) yields an independent
// substream, so per-user noise lanes do not depend on thread scheduling or
// batch order. Identical seed => identical draw sequence.
//
// Normal variates use Box-Muller on 53-bit uniforms, so the sequence is
// fully pinned by (seed, call order) with no dependence on the C++ standard
// library's distribution internals.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithmId = "splitmix64";

  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal draw. Box-Muller produces pairs; the second value is
  // cached and returned on the next call.
  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * kPi * u2;
    cached_ = radius * std::sin(angle);
    have_cached_ = true;
    return radius * std::cos(angle);
  }

  // Unbiased uniform integer in [0, n). n must be nonzero.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Independent substream addressed by salt. The salt is mixed through the
  // output function so derived streams are decorrelated from the parent and
  // from each other.
  RngStream derive(std::uint64_t salt) const {
    RngStream probe(state_ ^ (0x9e3779b97f4a7c15ULL * (salt + 0x632be59bd9b4e019ULL)));
    return RngStream(probe.next_u64());
  }

 private:
  static constexpr double kPi = 3.14159265358979323846264338327950288;

  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Seeded Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.next_below(i)]);
  }
}

}  // namespace vcm
