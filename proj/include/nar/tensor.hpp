#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nar {

// Dense row-major tensor of doubles. Everything in the library is rank 1 or 2;
// scalars are {1,1}.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value);

  std::int64_t numel() const;
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const { return data[0]; }
};

std::string shape_str(const Tensor& t);
std::string shape_str(const std::vector<int>& shape);

// Value-level kernels shared by the tape forward rules.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transposed(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double l2_norm_squared(const Tensor& a);

}  // namespace nar
