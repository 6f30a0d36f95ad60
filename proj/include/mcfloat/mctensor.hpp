#pragma once

/// MCTensor: an n-dimensional tensor whose every element is an unevaluated,
/// magnitude-ordered sum of `nc` working-precision components,
///   value(x) = x_0 + x_1 + ... + x_{nc-1},  |x_i| >= |x_{i+1}| for nonzero
/// components, with roundoff propagated into the later components.
///
/// Storage puts the components on the trailing axis (component index varies
/// fastest), so elementwise kernels walk one contiguous slice per element.
///
/// MCTensors are immutable values under arithmetic; the optional grad buffer
/// is the one mutable field and belongs to the training loop.

#include <memory>
#include <stdexcept>

#include "mcfloat/ndarray.hpp"
#include "mcfloat/precision.hpp"

namespace mcf {

template <class P>
class MCTensor {
 public:
  using precision = P;

  MCTensor() : nc_(1), data_(1, 0.0) {}

  MCTensor(Shape shape, int nc)
      : shape_(std::move(shape)), nc_(check_nc(nc)),
        data_(shape_numel(shape_) * nc, 0.0) {}

  /// Embeds a working-precision array: component 0 carries t, the rest are
  /// zero, so value(result) == t elementwise.
  static MCTensor from_float(const NdArray& t, int nc) {
    MCTensor out(t.shape(), nc);
    for (std::size_t e = 0; e < t.numel(); ++e) {
      out.data_[e * out.nc_] = P::round(t[e]);
    }
    return out;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t dim(int i) const { return shape_[i]; }
  std::size_t numel() const { return shape_numel(shape_); }
  int nc() const { return nc_; }

  double* comps(std::size_t elem) { return data_.data() + elem * nc_; }
  const double* comps(std::size_t elem) const { return data_.data() + elem * nc_; }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  /// Evaluated sum: components accumulated smallest-first in P arithmetic.
  NdArray approx() const {
    NdArray out(shape_);
    for (std::size_t e = 0; e < numel(); ++e) {
      const double* c = comps(e);
      double acc = c[nc_ - 1];
      for (int i = nc_ - 2; i >= 0; --i) acc = fl_add<P>(acc, c[i]);
      out[e] = acc;
    }
    return out;
  }

  /// First (largest) component; the approximate face of the tensor and the
  /// slot gradients refer to.
  NdArray fc() const { return component(0); }

  NdArray component(int i) const {
    if (i < 0 || i >= nc_) throw std::invalid_argument("component index out of range");
    NdArray out(shape_);
    for (std::size_t e = 0; e < numel(); ++e) out[e] = comps(e)[i];
    return out;
  }

  void set_component(int i, const NdArray& v) {
    if (i < 0 || i >= nc_) throw std::invalid_argument("component index out of range");
    check_shapes_equal(v.shape(), shape_, "set_component");
    for (std::size_t e = 0; e < numel(); ++e) comps(e)[i] = P::round(v[e]);
  }

  // --- gradient buffer -----------------------------------------------------
  bool has_grad() const { return grad_ != nullptr; }
  NdArray& grad() {
    if (!grad_) throw std::runtime_error("MCTensor: gradient not populated");
    return *grad_;
  }
  const NdArray& grad() const {
    if (!grad_) throw std::runtime_error("MCTensor: gradient not populated");
    return *grad_;
  }
  NdArray& ensure_grad() {
    if (!grad_) grad_ = std::make_shared<NdArray>(shape_);
    return *grad_;
  }
  void zero_grad() {
    if (grad_) *grad_ = NdArray(shape_);
  }

 private:
  static int check_nc(int nc) {
    if (nc < 1) throw std::invalid_argument("MCTensor: nc must be >= 1");
    return nc;
  }

  Shape shape_;
  int nc_ = 1;
  std::vector<double> data_;
  std::shared_ptr<NdArray> grad_;  // shared across copies of a parameter
};

}  // namespace mcf
