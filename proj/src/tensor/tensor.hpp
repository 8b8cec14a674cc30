#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace infusion {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({}, std::vector<double>{value}); }
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_.back() + c]; }

  // Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;
  // Index of the first non-finite entry, or size() if none.
  std::size_t first_non_finite() const noexcept;

  void fill(double v);

  // Exact (bitwise for finite values) equality of shape and contents.
  friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Small dense kernels shared by ops, curvature and oracles. All matrices are
// row-major. C (m x n) += A * B with optional transposes of the stored arrays.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double norm2(std::span<const double> a) noexcept;
void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept;

}  // namespace infusion
