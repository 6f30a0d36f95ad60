#pragma once

/// Minimal dense row-major n-dimensional array of binary64 values plus the
/// plain working-precision kernels used by baselines and gradient math.
/// Rank-0 arrays are scalars with one element.

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcfloat/precision.hpp"

namespace mcf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (const auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

class NdArray {
 public:
  NdArray() : shape_{}, data_(1, 0.0) {}
  explicit NdArray(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  NdArray(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw std::invalid_argument("NdArray: data size does not match shape " +
                                  shape_str(shape_));
    }
  }

  static NdArray scalar(double v) {
    NdArray a;
    a.data_[0] = v;
    return a;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t dim(int i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }
  bool same_shape(const NdArray& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void check_shapes_equal(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
  }
}

inline void check_same_shape(const NdArray& a, const NdArray& b, const char* op) {
  check_shapes_equal(a.shape(), b.shape(), op);
}

template <class P>
inline NdArray round_to(const NdArray& a) {
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = P::round(a[i]);
  return out;
}

template <class P, class Fn>
inline NdArray map(const NdArray& a, Fn&& fn) {
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = P::round(fn(a[i]));
  return out;
}

template <class P>
inline NdArray add(const NdArray& a, const NdArray& b) {
  check_same_shape(a, b, "add");
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = fl_add<P>(a[i], b[i]);
  return out;
}

template <class P>
inline NdArray sub(const NdArray& a, const NdArray& b) {
  check_same_shape(a, b, "sub");
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = fl_sub<P>(a[i], b[i]);
  return out;
}

template <class P>
inline NdArray mul(const NdArray& a, const NdArray& b) {
  check_same_shape(a, b, "mul");
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = fl_mul<P>(a[i], b[i]);
  return out;
}

template <class P>
inline NdArray scale(const NdArray& a, double c) {
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = fl_mul<P>(a[i], c);
  return out;
}

/// Plain left-to-right accumulation; the reference semantics for the
/// working-precision baselines.
template <class P>
inline double sum(const NdArray& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc = fl_add<P>(acc, a[i]);
  return acc;
}

template <class P>
inline double mean(const NdArray& a) {
  return fl_div<P>(sum<P>(a), static_cast<double>(a.numel()));
}

/// Plain 2-D matmul: out[i,j] = sum_k a[i,k] b[k,j], each step rounded,
/// accumulated left to right.
template <class P>
inline NdArray matmul2d(const NdArray& a, const NdArray& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul2d: incompatible shapes " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  NdArray out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        acc = fl_add<P>(acc, fl_mul<P>(a.at(i, t), b.at(t, j)));
      }
      out.at(i, j) = acc;
    }
  }
  return out;
}

inline NdArray transpose2d(const NdArray& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose2d: expected rank 2, got " +
                                shape_str(a.shape()));
  }
  NdArray out(Shape{a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

}  // namespace mcf
