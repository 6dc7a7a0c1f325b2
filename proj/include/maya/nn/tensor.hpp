#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace maya::nn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t element_count(const Shape& shape);
/// "48x48x64" style rendering, as in architecture tables.
std::string to_string(const Shape& shape);

/// Dense row-major tensor. Images are stored height x width x channels.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t height() const { return shape_.at(0); }
  std::size_t width() const { return shape_.at(1); }
  std::size_t channels() const { return shape_.at(2); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element (row, col, channel) of a rank-3 tensor.
  double& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * shape_[1] + x) * shape_[2] + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data_[(y * shape_[1] + x) * shape_[2] + c]; }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace maya::nn
