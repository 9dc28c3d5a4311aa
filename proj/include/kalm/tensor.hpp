#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace kalm {

// Dense row-major tensor of doubles. The model only needs vectors and
// matrices, so rank is restricted to 1 or 2.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(size_t n) { return Tensor({n}, 0.0); }
  static Tensor zeros(size_t rows, size_t cols) { return Tensor({rows, cols}, 0.0); }
  static Tensor scalar(double v) {
    Tensor t({1}, v);
    return t;
  }

  Tensor(std::vector<size_t> shape, double fill)
      : shape_(std::move(shape)), v_(count(shape_), fill) {}
  Tensor(std::vector<size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), v_(std::move(values)) {
    if (v_.size() != count(shape_)) throw std::logic_error("Tensor: shape/value mismatch");
  }

  size_t rank() const { return shape_.size(); }
  size_t size() const { return v_.size(); }
  const std::vector<size_t>& shape() const { return shape_; }
  size_t rows() const { return shape_.at(0); }
  size_t cols() const { return shape_.at(1); }

  double& operator[](size_t i) { return v_[i]; }
  double operator[](size_t i) const { return v_[i]; }
  double& operator()(size_t i, size_t j) { return v_[i * shape_[1] + j]; }
  double operator()(size_t i, size_t j) const { return v_[i * shape_[1] + j]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  static size_t count(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
      if (d == 0) throw std::logic_error("Tensor: zero dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<size_t> shape_;
  std::vector<double> v_;
};

}  // namespace kalm
