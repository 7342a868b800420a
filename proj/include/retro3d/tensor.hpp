#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retro3d {

using Shape = std::vector<std::size_t>;

/// Raised whenever a computation produces NaN or Inf. Never propagated silently.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Immutable once built: copies share storage,
/// so passing tensors between threads or capturing them in backward rules is cheap.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_->size(); }
  /// Product of every dimension except the last.
  std::size_t rows() const noexcept { return size() / cols(); }
  std::size_t cols() const noexcept { return shape_.back(); }

  std::span<const double> data() const noexcept { return {data_->data(), data_->size()}; }
  double operator[](std::size_t i) const noexcept { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool bit_equal(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

}  // namespace retro3d
