#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace afvol {

/// Seeded generator shared by simulation and initialisation.
///
/// Engine is std::mt19937_64, whose output sequence is fixed by the standard.
/// Uniforms take the top 53 bits of one draw; normals use the Box-Muller
/// transform on two uniforms and cache the second variate. Distribution code
/// is written out here instead of using <random> distributions, whose output
/// differs between standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace afvol
