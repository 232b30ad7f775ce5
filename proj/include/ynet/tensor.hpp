#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ynet {

using Shape = std::vector<int64_t>;

std::string to_string(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with shape metadata.
///
/// Image-like tensors are laid out N x C x H x W. A scalar is shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const noexcept { return static_cast<int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 4-D accessors (N x C x H x W).
  double& at(int64_t n, int64_t c, int64_t h, int64_t w);
  double at(int64_t n, int64_t c, int64_t h, int64_t w) const;

  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  // Bitwise equality of shape and values.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws ShapeError unless `t` has the given rank.
void expect_rank(const Tensor& t, int rank, const char* what);

}  // namespace ynet
