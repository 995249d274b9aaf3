#include "calibflow/tensor.hpp"

#include <cmath>
#include <sstream>

#include "calibflow/errors.hpp"

namespace calibflow {

std::size_t shape_product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), data(shape_product(shape), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t({1}, v);
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  Tensor t;
  t.shape = {1, v.size()};
  t.data = std::move(v);
  return t;
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> v) {
  if (v.size() != r * c) throw ShapeError("Tensor::matrix: data size does not match " + std::to_string(r) + "x" + std::to_string(c));
  Tensor t;
  t.shape = {r, c};
  t.data = std::move(v);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> s, std::vector<double> v) {
  if (v.size() != shape_product(s)) throw ShapeError("Tensor::from: data size does not match shape");
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(v);
  return t;
}

std::size_t Tensor::rows() const { return shape.empty() ? 1 : shape[0]; }

std::size_t Tensor::cols() const {
  if (shape.size() <= 1) return 1;
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
  return c;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace calibflow
