#include "retro3d/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace retro3d {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_.empty()) throw DimensionError("tensor rank must be at least 1");
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != data.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor of shape " + shape_string(shape_));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range");
  return shape_[axis];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (c >= cols() || r >= rows()) throw DimensionError("index out of range");
  return (*data_)[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         std::memcmp(data_->data(), other.data_->data(), size() * sizeof(double)) == 0;
}

}  // namespace retro3d
