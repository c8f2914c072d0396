#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "korigins/rng.hpp"
#include "korigins/tensor.hpp"

namespace testing {

using korigins::Rng;
using korigins::Tensor;

inline Tensor random_tensor(Rng& rng, std::vector<std::size_t> dims, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

inline std::vector<double> random_values(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return v;
}

/// Central differences of a scalar function with respect to every entry of `values`.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> values,
                                            double step = 1e-4) {
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = f();
    values[i] = saved - step;
    const double down = f();
    values[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// Largest elementwise |a - n| / max(|a|, |n|). Entries where both are
/// below `floor` times the largest magnitude are compared absolutely
/// against that floor.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-8) {
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor * scale, 1e-300});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// ||a - n|| / max(||a||, ||n||) over the whole vector.
inline double norm_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline double weighted_sum(const Tensor& t, const Tensor& weights) { return korigins::dot(t, weights); }

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("korigins_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
