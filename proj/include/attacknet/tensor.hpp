#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attacknet/errors.hpp"

namespace attacknet {

// Dense row-major tensor of IEEE-754 doubles, rank 1 to 4. The flat data
// length always equals the product of the dimensions; there are no strides,
// views or broadcasting. Tensors handed out by public operations are treated
// as immutable.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::int64_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  static Tensor from_data(std::vector<std::int64_t> shape,
                          std::vector<double> data) {
    Tensor t;
    const std::int64_t n = checked_size(shape);
    if (static_cast<std::int64_t>(data.size()) != n) {
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape product " + std::to_string(n));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<std::int64_t>& shape() const { return shape_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }
  double& operator[](std::int64_t i) {
    return data_[static_cast<std::size_t>(i)];
  }

  double operator()(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double& operator()(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }

  double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& operator()(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  double operator()(std::int64_t i, std::int64_t j, std::int64_t k,
                    std::int64_t l) const {
    return data_[static_cast<std::size_t>(
        ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double& operator()(std::int64_t i, std::int64_t j, std::int64_t k,
                     std::int64_t l) {
    return data_[static_cast<std::size_t>(
        ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i > 0) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static std::int64_t checked_size(const std::vector<std::int64_t>& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw ShapeError("tensor rank must be between 1 and 4, got rank " +
                       std::to_string(shape.size()));
    }
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d < 1) {
        throw ShapeError("tensor dimension must be positive, got " +
                         std::to_string(d));
      }
      if (n > (std::int64_t{1} << 40) / d) {
        throw ShapeError("tensor size overflow");
      }
      n *= d;
    }
    return n;
  }

  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

inline void ensure_all_finite(const Tensor& t, const char* context) {
  const double* p = t.data();
  for (std::int64_t i = 0, n = t.size(); i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string(context) +
                         " produced a non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

// Tensor of the given shape with every element set to `value`.
inline Tensor alloc_filled(std::vector<std::int64_t> shape, double value) {
  if (!std::isfinite(value)) {
    throw NumericError("alloc_filled requires a finite fill value");
  }
  return Tensor(std::move(shape), value);
}

// Elementwise sum; also the residual merge. Shapes must match exactly.
inline Tensor add_elementwise(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add_elementwise shape mismatch: " + a.shape_string() +
                     " vs " + b.shape_string());
  }
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) {
    po[i] = pa[i] + pb[i];
  }
  ensure_all_finite(out, "add_elementwise");
  return out;
}

// Rank-2 matrix product [m,k]x[k,n] -> [m,n]. Each output element
// accumulates over k in ascending order, so results are bit-identical
// across runs.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul requires rank-2 tensors, got " +
                     a.shape_string() + " and " + b.shape_string());
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner dimensions disagree: " + a.shape_string() +
                     " x " + b.shape_string());
  }
  const std::int64_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::int64_t k = 0; k < kk; ++k) {
      const double av = pa[i * kk + k];
      const double* brow = pb + k * n;
      for (std::int64_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  ensure_all_finite(out, "matmul");
  return out;
}

}  // namespace attacknet
