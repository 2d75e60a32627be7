#include "roads/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace roads {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

int Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw std::out_of_range("dim index out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(i)];
}

std::size_t Tensor::offset(std::initializer_list<int> index) const {
  if (index.size() != shape_.size()) throw std::invalid_argument("index rank mismatch for " + shape_str(shape_));
  std::size_t off = 0;
  std::size_t k = 0;
  for (int v : index) {
    if (v < 0 || v >= shape_[k]) throw std::out_of_range("index out of range for " + shape_str(shape_));
    off = off * static_cast<std::size_t>(shape_[k]) + static_cast<std::size_t>(v);
    ++k;
  }
  return off;
}

double& Tensor::at(std::initializer_list<int> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<int> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor take_rows(const Tensor& t, std::span<const int> rows) {
  if (t.rank() < 1) throw std::invalid_argument("take_rows: tensor has no first axis");
  Shape shape = t.shape();
  const std::size_t row = t.numel() / static_cast<std::size_t>(shape[0]);
  shape[0] = static_cast<int>(rows.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.dim(0)) throw std::out_of_range("take_rows: row index out of range");
    std::copy_n(t.ptr() + static_cast<std::size_t>(rows[i]) * row, row, out.ptr() + i * row);
  }
  return out;
}

}  // namespace roads
