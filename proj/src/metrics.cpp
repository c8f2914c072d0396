#include "korigins/metrics.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "korigins/error.hpp"

namespace korigins {

double hellinger(double mu1, double sigma1, double mu2, double sigma2) {
  if (!(sigma1 >= 0.0) || !(sigma2 >= 0.0)) {
    throw ArgumentError("hellinger: sigmas must be >= 0 (got " + std::to_string(sigma1) + ", " +
                        std::to_string(sigma2) + ")");
  }
  if (sigma1 == 0.0 && sigma2 == 0.0) return mu1 == mu2 ? 0.0 : 1.0;
  if (sigma1 == 0.0 || sigma2 == 0.0) return 1.0;
  // Fixed operand order keeps the result bit-symmetric under contraction.
  if (sigma1 > sigma2 || (sigma1 == sigma2 && mu1 > mu2)) {
    std::swap(mu1, mu2);
    std::swap(sigma1, sigma2);
  }
  const double var_sum = sigma1 * sigma1 + sigma2 * sigma2;
  const double dmu = mu1 - mu2;
  const double bc = std::sqrt(2.0 * (sigma1 * sigma2) / var_sum) * std::exp(-0.25 * dmu * dmu / var_sum);
  return std::sqrt(std::max(0.0, 1.0 - bc));
}

std::vector<std::vector<double>> hd_grid(const ClassSpec& reference, std::span<const double> delta_mus,
                                         std::span<const double> delta_sigmas) {
  std::vector<std::vector<double>> grid;
  grid.reserve(delta_sigmas.size());
  for (double ds : delta_sigmas) {
    std::vector<double> row;
    row.reserve(delta_mus.size());
    for (double dm : delta_mus) row.push_back(hellinger(reference.mu, reference.sigma, reference.mu + dm, reference.sigma + ds));
    grid.push_back(std::move(row));
  }
  return grid;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (other.class_count() != class_count()) throw ArgumentError("confusion counts: class count mismatch");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    tp[i] += other.tp[i];
    fp[i] += other.fp[i];
    fn[i] += other.fn[i];
  }
  return *this;
}

void accumulate_confusion(ConfusionCounts& counts, std::span<const std::uint8_t> predicted,
                          std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accumulate_confusion: label maps differ in size");
  const std::size_t c = counts.class_count();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto p = predicted[i], t = truth[i];
    if (p >= c || t >= c) {
      throw ArgumentError("accumulate_confusion: label " + std::to_string(std::max(p, t)) + " >= class count " +
                          std::to_string(c));
    }
    if (p == t) {
      ++counts.tp[t];
    } else {
      ++counts.fp[p];
      ++counts.fn[t];
    }
  }
}

ConfusionCounts accumulate_confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth,
                                     std::size_t class_count) {
  ConfusionCounts counts(class_count);
  accumulate_confusion(counts, predicted, truth);
  return counts;
}

double macc(const ConfusionCounts& counts) {
  const std::size_t c = counts.class_count();
  if (c < 2) throw ArgumentError("macc needs at least two classes");
  double total = 0.0;
  for (std::size_t i = 1; i < c; ++i) {
    const std::uint64_t denom = counts.tp[i] + counts.fp[i] + counts.fn[i];
    total += denom == 0 ? 1.0 : static_cast<double>(counts.tp[i]) / static_cast<double>(denom);
  }
  return total / static_cast<double>(c - 1);
}

std::vector<std::uint8_t> argmax_labels(const Tensor& probs) {
  require_rank(probs, 3, "argmax_labels");
  const std::size_t c = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
  if (c > 255) throw ShapeError("argmax_labels: too many classes");
  std::vector<std::uint8_t> labels(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    double best = probs[p];
    for (std::size_t ch = 1; ch < c; ++ch) {
      if (probs[ch * plane + p] > best) {
        best = probs[ch * plane + p];
        labels[p] = static_cast<std::uint8_t>(ch);
      }
    }
  }
  return labels;
}

}  // namespace korigins
