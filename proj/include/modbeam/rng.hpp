#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace modbeam {

/// Self-contained xoshiro256++ generator with splitmix64 seeding.
/// The standard-library distributions are implementation-defined, so all
/// randomness in the library goes through this class to keep datasets and
/// experiments reproducible bit-for-bit for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0,1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard real normal via Box-Muller (pairs cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  /// Circularly-symmetric complex normal, unit variance per complex entry.
  std::complex<double> cnormal() {
    const double re = normal();
    const double im = normal();
    return {re * kInvSqrt2, im * kInvSqrt2};
  }

  /// Derives a decorrelated child seed; used to give every sample / purpose
  /// its own independent stream.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return splitmix64(x);
  }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;
  static constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490393;

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::uint64_t state_[4] = {};
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace modbeam
