#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "perseg/common.hpp"

namespace perseg {

// Dense row-major tensor. Rank is dynamic; rank-2 views map onto Eigen for
// the matrix products.
template <class T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      check(d >= 0, "tensor dimension must be non-negative");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::int64_t> s, T value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool empty() const { return v.empty(); }

  T& at(std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  const T& at(std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }
  T& at2(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * dim(1) + j)]; }
  const T& at2(std::int64_t i, std::int64_t j) const {
    return v[static_cast<std::size_t>(i * dim(1) + j)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }

  using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  MatMap as2d(std::int64_t rows, std::int64_t cols) {
    check(rows * cols == numel(), "as2d: element count mismatch");
    return MatMap(v.data(), rows, cols);
  }
  ConstMatMap as2d(std::int64_t rows, std::int64_t cols) const {
    check(rows * cols == numel(), "as2d: element count mismatch");
    return ConstMatMap(v.data(), rows, cols);
  }
  MatMap mat() {
    check(rank() == 2, "mat: tensor is not rank-2");
    return as2d(dim(0), dim(1));
  }
  ConstMatMap mat() const {
    check(rank() == 2, "mat: tensor is not rank-2");
    return as2d(dim(0), dim(1));
  }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
  return m;
}

template <class T>
double max_abs(const Tensor<T>& a) {
  double m = 0.0;
  for (const T& x : a.v) m = std::max(m, std::abs(static_cast<double>(x)));
  return m;
}

}  // namespace perseg
