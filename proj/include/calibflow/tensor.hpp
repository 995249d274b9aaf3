#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace calibflow {

// Dense row-major array of 64-bit floats. Shapes are explicit; there is no
// implicit broadcasting beyond what the tape ops define.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s), 0.0); }
  static Tensor full(std::vector<std::size_t> s, double v) { return Tensor(std::move(s), v); }
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);  // 1 x n
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v);
  static Tensor from(std::vector<std::size_t> s, std::vector<double> v);

  std::size_t size() const { return data.size(); }
  bool is_scalar() const { return data.size() == 1; }

  // 2D view: rows = shape[0], cols = product of the rest. Scalars are 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;

  bool all_finite() const;
};

std::size_t shape_product(const std::vector<std::size_t>& s);

}  // namespace calibflow
