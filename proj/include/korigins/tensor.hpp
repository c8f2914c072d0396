#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace korigins {

/// Dense row-major tensor of rank 1..4 with 64-bit storage.
///
/// Image tensors use the channel x height x width layout; a leading batch
/// dimension is allowed but layers operate on one image at a time.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // (c, y, x) access for rank-3 tensors.
  double& at(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }

  void fill(double value);
  Tensor& operator+=(const Tensor& other);
  bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }
  bool all_finite() const noexcept;

  std::string shape_string() const;

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

using TensorPtr = std::shared_ptr<const Tensor>;

/// Throws ShapeError unless `t` has exactly `rank` dimensions.
void require_rank(const Tensor& t, std::size_t rank, const char* what);

double dot(const Tensor& a, const Tensor& b);

}  // namespace korigins
