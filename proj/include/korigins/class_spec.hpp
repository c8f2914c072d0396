#pragma once

namespace korigins {

/// Gaussian intensity distribution of one class on the 16-bit scale.
struct ClassSpec {
  double mu = 0.0;
  double sigma = 0.0;

  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

}  // namespace korigins
