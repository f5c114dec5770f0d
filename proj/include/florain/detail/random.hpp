#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace florain::detail {

/// Portable Gaussian source: std::mt19937_64 (bit-exact across standard
/// libraries) feeding Box-Muller. std::normal_distribution is avoided because
/// its algorithm is implementation-defined.
///
/// uniform() = ((x >> 11) + 0.5) * 2^-53, in (0, 1).
/// normal()  = sqrt(-2 ln u1) * cos(2 pi u2), one draw per two uniforms.
class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
    return (static_cast<double>(engine_() >> 11) + 0.5) * scale;
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace florain::detail
