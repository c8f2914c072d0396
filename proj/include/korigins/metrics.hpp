#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "korigins/class_spec.hpp"
#include "korigins/tensor.hpp"

namespace korigins {

/// Hellinger distance between N(mu1, sigma1^2) and N(mu2, sigma2^2).
///
/// Degenerate sigmas use the limiting values: two point masses give 0 when
/// the means agree and 1 otherwise; a point mass against a proper Gaussian
/// gives 1. Negative sigma is an ArgumentError.
double hellinger(double mu1, double sigma1, double mu2, double sigma2);

/// grid[i][j] = hellinger(ref.mu, ref.sigma, ref.mu + delta_mus[j], ref.sigma + delta_sigmas[i]).
std::vector<std::vector<double>> hd_grid(const ClassSpec& reference, std::span<const double> delta_mus,
                                         std::span<const double> delta_sigmas);

/// Per-class pixel counts for the Jaccard-style accuracy.
struct ConfusionCounts {
  std::vector<std::uint64_t> tp, fp, fn;

  explicit ConfusionCounts(std::size_t class_count = 2)
      : tp(class_count, 0), fp(class_count, 0), fn(class_count, 0) {}

  std::size_t class_count() const { return tp.size(); }
  ConfusionCounts& operator+=(const ConfusionCounts& other);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Adds the hard-label comparison of one image to `counts`.
void accumulate_confusion(ConfusionCounts& counts, std::span<const std::uint8_t> predicted,
                          std::span<const std::uint8_t> truth);
ConfusionCounts accumulate_confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth,
                                     std::size_t class_count);

/// Mean over non-background classes of TP / (TP + FP + FN). A class absent
/// from both prediction and truth counts as 1.
double macc(const ConfusionCounts& counts);

/// Per-pixel argmax over channels of a [C,H,W] tensor; ties go to the
/// lowest class index.
std::vector<std::uint8_t> argmax_labels(const Tensor& probs);

}  // namespace korigins
