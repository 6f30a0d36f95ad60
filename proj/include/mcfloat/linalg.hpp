#pragma once

/// Matrix-level operators between an MCTensor and a working-precision
/// operand, mirroring the usual tensor-library semantics (dot, mv, mm, bmm,
/// batched-4d, addmm, and the rank dispatcher matmul).
///
/// Every output element is a reduction: ScalingN in expanded (nc+1) form for
/// the products, Add-MCN chaining at nc+1 for error propagation, and one
/// final renormalization back to nc. The default plan reduces sequentially;
/// a pairwise tree (depth ceil(log2 N)) is available behind a flag.
///
/// Products of two MCTensors are not provided at the matrix level; that
/// route is orders of magnitude slower than MC-by-Tensor scaling and the
/// layer stack never needs it. Attempting one raises unsupported_operation.

#include <stdexcept>
#include <string>

#include "mcfloat/mc_ops.hpp"

namespace mcf {

enum class ReduceStrategy { kSequential, kPairwiseTree };

struct ReductionPlan {
  ReduceStrategy strategy = ReduceStrategy::kSequential;
  int leaf_arity = 1;  // sequential run length at tree leaves
};

struct unsupported_operation : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {

/// Reduction core over one output element. Element k of the virtual term
/// list is x[xa + k*xs] (an nc-component slice) scaled by v[va + k*vs].
template <class P>
struct DotCore {
  const MCTensor<P>& x;
  const NdArray& v;
  std::size_t xa, xs, va, vs;
  int nc;

  // Plain working-precision multiply-accumulate, left to right; this is the
  // nc == 1 degeneracy path and matches the baseline matmul bitwise.
  double plain(std::size_t len) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      acc = fl_add<P>(acc, fl_mul<P>(x.comps(xa + k * xs)[0], v[va + k * vs]));
    }
    return acc;
  }

  void term(std::size_t k, double* out) const {  // nc+1 components
    scale_kernel<P>(x.comps(xa + k * xs), nc, v[va + k * vs], out, nc + 1);
  }

  void reduce_range(std::size_t lo, std::size_t hi, const ReductionPlan& plan,
                    double* acc) const {  // acc: nc+1 components
    if (plan.strategy == ReduceStrategy::kSequential ||
        hi - lo <= static_cast<std::size_t>(std::max(plan.leaf_arity, 1))) {
      term(lo, acc);
      double t[kMaxNc + 1];
      for (std::size_t k = lo + 1; k < hi; ++k) {
        term(k, t);
        add_kernel<P>(acc, nc + 1, t, nc + 1, acc, nc + 1);
      }
      return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    double rhs[kMaxNc + 1];
    reduce_range(lo, mid, plan, acc);
    reduce_range(mid, hi, plan, rhs);
    add_kernel<P>(acc, nc + 1, rhs, nc + 1, acc, nc + 1);
  }

  void run(std::size_t len, const ReductionPlan& plan, double* out) const {
    if (len == 0) {
      for (int i = 0; i < nc; ++i) out[i] = 0.0;
      return;
    }
    if (nc == 1 && plan.strategy == ReduceStrategy::kSequential) {
      out[0] = plain(len);
      return;
    }
    double acc[kMaxNc + 1];
    reduce_range(0, len, plan, acc);
    renorm_kernel<P>(acc, nc + 1, out, nc);
  }
};

inline void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(rank) + ", got " + shape_str(s));
  }
}

}  // namespace detail

/// Inner product of an MC vector with a working-precision vector.
template <class P>
inline MCTensor<P> dot_mcn(const MCTensor<P>& x, const NdArray& v,
                           const ReductionPlan& plan = {}) {
  detail::require_rank(x.shape(), 1, "dot_mcn");
  detail::require_rank(v.shape(), 1, "dot_mcn");
  if (x.dim(0) != v.dim(0)) {
    throw std::invalid_argument("dot_mcn: length mismatch " + shape_str(x.shape()) +
                                " vs " + shape_str(v.shape()));
  }
  detail::check_nc_limit(x.nc() + 1);
  MCTensor<P> out(Shape{}, x.nc());
  detail::DotCore<P>{x, v, 0, 1, 0, 1, x.nc()}.run(x.dim(0), plan, out.comps(0));
  return out;
}

/// Matrix-vector product: per-row reduction over the shared axis.
template <class P>
inline MCTensor<P> mv_mcn(const MCTensor<P>& x, const NdArray& v,
                          const ReductionPlan& plan = {}) {
  detail::require_rank(x.shape(), 2, "mv_mcn");
  detail::require_rank(v.shape(), 1, "mv_mcn");
  if (x.dim(1) != v.dim(0)) {
    throw std::invalid_argument("mv_mcn: incompatible shapes " + shape_str(x.shape()) +
                                " vs " + shape_str(v.shape()));
  }
  detail::check_nc_limit(x.nc() + 1);
  const std::size_t m = x.dim(0), k = x.dim(1);
  MCTensor<P> out(Shape{m}, x.nc());
  for (std::size_t i = 0; i < m; ++i) {
    detail::DotCore<P>{x, v, i * k, 1, 0, 1, x.nc()}.run(k, plan, out.comps(i));
  }
  return out;
}

/// Matrix-matrix product; column j carries the mv_mcn(x, w[:,j]) semantics.
template <class P>
inline MCTensor<P> mm_mcn(const MCTensor<P>& x, const NdArray& w,
                          const ReductionPlan& plan = {}) {
  detail::require_rank(x.shape(), 2, "mm_mcn");
  detail::require_rank(w.shape(), 2, "mm_mcn");
  if (x.dim(1) != w.dim(0)) {
    throw std::invalid_argument("mm_mcn: incompatible shapes " + shape_str(x.shape()) +
                                " vs " + shape_str(w.shape()));
  }
  detail::check_nc_limit(x.nc() + 1);
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  MCTensor<P> out(Shape{m, n}, x.nc());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      detail::DotCore<P>{x, w, i * k, 1, j, n, x.nc()}.run(
          k, plan, out.comps(i * n + j));
    }
  }
  return out;
}

/// MCTensor-by-MCTensor matrix products are intentionally unsupported.
template <class P>
inline MCTensor<P> mm_mcn(const MCTensor<P>&, const MCTensor<P>&,
                          const ReductionPlan& = {}) {
  throw unsupported_operation(
      "mm_mcn: matrix products of two MCTensors are not supported; convert "
      "one operand to a working-precision tensor first");
}

namespace detail {

template <class P>
inline void copy_batch(const MCTensor<P>& src, MCTensor<P>& dst,
                       std::size_t elems, std::size_t src_off, std::size_t dst_off) {
  for (std::size_t e = 0; e < elems; ++e) {
    const double* s = src.comps(src_off + e);
    double* d = dst.comps(dst_off + e);
    for (int c = 0; c < src.nc(); ++c) d[c] = s[c];
  }
}

/// Shared batched-mm loop: iterates `batches`, slicing x per batch and w per
/// batch unless w is unbatched (broadcast).
template <class P>
inline MCTensor<P> batched_mm(const MCTensor<P>& x, const NdArray& w,
                              std::size_t batches, std::size_t m, std::size_t k,
                              std::size_t n, bool w_batched, Shape out_shape,
                              const ReductionPlan& plan) {
  check_nc_limit(x.nc() + 1);
  MCTensor<P> out(std::move(out_shape), x.nc());
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t xoff = b * m * k;
    const std::size_t woff = w_batched ? b * k * n : 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        DotCore<P>{x, w, xoff + i * k, 1, woff + j, n, x.nc()}.run(
            k, plan, out.comps(b * m * n + i * n + j));
      }
    }
  }
  return out;
}

}  // namespace detail

/// Batched matrix product over one leading batch axis.
template <class P>
inline MCTensor<P> bmm_mcn(const MCTensor<P>& x, const NdArray& w,
                           const ReductionPlan& plan = {}) {
  detail::require_rank(x.shape(), 3, "bmm_mcn");
  detail::require_rank(w.shape(), 3, "bmm_mcn");
  if (x.dim(0) != w.dim(0) || x.dim(2) != w.dim(1)) {
    throw std::invalid_argument("bmm_mcn: incompatible shapes " + shape_str(x.shape()) +
                                " vs " + shape_str(w.shape()));
  }
  return detail::batched_mm(x, w, x.dim(0), x.dim(1), x.dim(2), w.dim(2), true,
                            Shape{x.dim(0), x.dim(1), w.dim(2)}, plan);
}

/// Batched matrix product over two leading batch axes.
template <class P>
inline MCTensor<P> mm4d_mcn(const MCTensor<P>& x, const NdArray& w,
                            const ReductionPlan& plan = {}) {
  detail::require_rank(x.shape(), 4, "mm4d_mcn");
  detail::require_rank(w.shape(), 4, "mm4d_mcn");
  if (x.dim(0) != w.dim(0) || x.dim(1) != w.dim(1) || x.dim(3) != w.dim(2)) {
    throw std::invalid_argument("mm4d_mcn: incompatible shapes " + shape_str(x.shape()) +
                                " vs " + shape_str(w.shape()));
  }
  return detail::batched_mm(x, w, x.dim(0) * x.dim(1), x.dim(2), x.dim(3),
                            w.dim(3), true,
                            Shape{x.dim(0), x.dim(1), x.dim(2), w.dim(3)}, plan);
}

/// beta*bias + alpha*(x @ w); scalar factors applied through ScalingN.
template <class P>
inline MCTensor<P> addmm_mcn(const MCTensor<P>& bias, const MCTensor<P>& x,
                             const NdArray& w, double alpha = 1.0, double beta = 1.0,
                             const ReductionPlan& plan = {}) {
  MCTensor<P> prod = mm_mcn(x, w, plan);
  if (alpha != 1.0) prod = scaling_n(prod, NdArray::scalar(P::round(alpha)));
  MCTensor<P> scaled_bias =
      beta != 1.0 ? scaling_n(bias, NdArray::scalar(P::round(beta))) : bias;
  // bias broadcasts across leading rows of the product
  if (scaled_bias.shape() == prod.shape()) return add_mcn(scaled_bias, prod);
  detail::check_suffix_broadcast(prod.shape(), scaled_bias.shape(), "addmm_mcn");
  MCTensor<P> expanded(prod.shape(), scaled_bias.nc());
  const std::size_t bn = scaled_bias.numel();
  for (std::size_t e = 0; e < prod.numel(); ++e) {
    const double* s = scaled_bias.comps(e % bn);
    double* d = expanded.comps(e);
    for (int c = 0; c < scaled_bias.nc(); ++c) d[c] = s[c];
  }
  return add_mcn(expanded, prod);
}

/// Rank dispatcher mirroring standard matmul semantics for the supported
/// rank pairs; the working-precision operand broadcasts across batch axes
/// when given unbatched.
template <class P>
inline MCTensor<P> matmul_mcn(const MCTensor<P>& x, const NdArray& w,
                              const ReductionPlan& plan = {}) {
  const int rx = x.rank(), rw = w.rank();
  if (rx == 1 && rw == 1) return dot_mcn(x, w, plan);
  if (rx == 2 && rw == 1) return mv_mcn(x, w, plan);
  if (rx == 1 && rw == 2) {
    // row-vector times matrix
    if (x.dim(0) != w.dim(0)) {
      throw std::invalid_argument("matmul_mcn: incompatible shapes " +
                                  shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    }
    MCTensor<P> row(Shape{1, x.dim(0)}, x.nc());
    detail::copy_batch(x, row, x.numel(), 0, 0);
    MCTensor<P> prod = mm_mcn(row, w, plan);
    MCTensor<P> out(Shape{w.dim(1)}, x.nc());
    detail::copy_batch(prod, out, prod.numel(), 0, 0);
    return out;
  }
  if (rx == 2 && rw == 2) return mm_mcn(x, w, plan);
  if (rx == 3 && rw == 3) return bmm_mcn(x, w, plan);
  if (rx == 3 && rw == 2) {
    if (x.dim(2) != w.dim(0)) {
      throw std::invalid_argument("matmul_mcn: incompatible shapes " +
                                  shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    }
    return detail::batched_mm(x, w, x.dim(0), x.dim(1), x.dim(2), w.dim(1), false,
                              Shape{x.dim(0), x.dim(1), w.dim(1)}, plan);
  }
  if (rx == 4 && rw == 4) return mm4d_mcn(x, w, plan);
  if (rx == 4 && rw == 2) {
    if (x.dim(3) != w.dim(0)) {
      throw std::invalid_argument("matmul_mcn: incompatible shapes " +
                                  shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    }
    return detail::batched_mm(x, w, x.dim(0) * x.dim(1), x.dim(2), x.dim(3),
                              w.dim(1), false,
                              Shape{x.dim(0), x.dim(1), x.dim(2), w.dim(1)}, plan);
  }
  throw std::invalid_argument("matmul_mcn: unsupported rank pair for shapes " +
                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
}

/// Component-preserving 2-D transpose.
template <class P>
inline MCTensor<P> mc_transpose2d(const MCTensor<P>& x) {
  detail::require_rank(x.shape(), 2, "mc_transpose2d");
  const std::size_t m = x.dim(0), n = x.dim(1);
  MCTensor<P> out(Shape{n, m}, x.nc());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* s = x.comps(i * n + j);
      double* d = out.comps(j * m + i);
      for (int c = 0; c < x.nc(); ++c) d[c] = s[c];
    }
  }
  return out;
}

}  // namespace mcf
