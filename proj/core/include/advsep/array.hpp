#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace advsep {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major f64 array. Vectors are 1-d, matrices 2-d.
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<std::size_t> shape, double fill = 0.0);
  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array vector(std::vector<double> values);
  static Array vector(std::initializer_list<double> values) {
    return vector(std::vector<double>(values));
  }
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t rows() const { return extent(0); }
  std::size_t cols() const { return extent(1); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool all_finite() const;
  // Throws std::domain_error naming `what` when any element is NaN or Inf.
  void require_finite(const std::string& what) const;

  friend bool operator==(const Array&, const Array&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Small span helpers shared by the numeric modules.
double dot(std::span<const double> a, std::span<const double> b);
double norm_l2(std::span<const double> v);
double norm_l1(std::span<const double> v);
double norm_linf(std::span<const double> v);
std::size_t count_nonzero(std::span<const double> v);
// dst += scale * src
void axpy(double scale, std::span<const double> src, std::span<double> dst);

}  // namespace advsep
