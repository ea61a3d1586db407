#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "gapl/errors.hpp"

namespace gapl {

// Dense row-major tensor of doubles. Shapes are immutable after
// construction; data is freely mutable.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {
    count_allocation(data_.size());
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_contract(data_.size() == checked_numel(shape_),
                   "Tensor: data length does not match shape product");
    count_allocation(data_.size());
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vector(std::vector<double> data) {
    std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::size_t rows() const {
    check_contract(rank() == 2, "Tensor: rows() requires rank 2");
    return shape_[0];
  }
  std::size_t cols() const {
    check_contract(rank() == 2, "Tensor: cols() requires rank 2");
    return shape_[1];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const;
  double item() const {
    check_contract(numel() == 1, "Tensor: item() requires a single element");
    return data_[0];
  }

  std::string shape_string() const;

  // Test hook: counts elements allocated by Tensor construction so tests
  // can assert an operation stays within an allocation budget.
  static void reset_allocation_counter();
  static std::uint64_t allocated_elements();

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape);
  static void count_allocation(std::size_t elements);

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

bool near(const Tensor& a, const Tensor& b, double tol);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace gapl
