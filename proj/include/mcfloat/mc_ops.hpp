#pragma once

/// Scalar-level multi-component operators and their elementwise tensor
/// wrappers.
///
/// Conventions shared by every operator:
///  - inputs satisfy the ordering/nonoverlap invariant; outputs restore it
///    through renormalization,
///  - binary operators return the same nc as their (padded) inputs,
///  - nc == 1 degenerates bitwise to plain working-precision arithmetic,
///  - NaN/Inf propagate as usual; division by a zero-valued tensor yields
///    Inf/NaN except where a zero fast-path is specified (mul_mcn).
///
/// The working-precision operand of grow_expn / scaling_n / div_n may be a
/// scalar or any trailing-suffix shape of the tensor operand.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mcfloat/eft.hpp"
#include "mcfloat/mctensor.hpp"

namespace mcf {

/// Hard cap on the component count; keeps every kernel allocation-free.
inline constexpr int kMaxNc = 8;

namespace detail {

inline constexpr int kStage = 4 * kMaxNc * kMaxNc;  // worst-case staging slots

inline void check_nc_limit(int nc) {
  if (nc < 1 || nc > kMaxNc) {
    throw std::invalid_argument("MCTensor ops support 1 <= nc <= 8");
  }
}

/// Stable insertion sort by decreasing magnitude (ties keep input order, so
/// equal-magnitude components stay reproducible).
inline void sort_by_magnitude(double* h, int n) {
  for (int i = 1; i < n; ++i) {
    const double v = h[i];
    const double m = std::fabs(v);
    int j = i - 1;
    while (j >= 0 && std::fabs(h[j]) < m) {
      h[j + 1] = h[j];
      --j;
    }
    h[j + 1] = v;
  }
}

/// True when every component absorbs the next one under fl-addition; this is
/// the testable nonoverlap predicate (|x_{i+1}| <= ulp(|x_i|)).
template <class P>
inline bool is_compressed(const double* h, int n) {
  for (int i = 0; i + 1 < n; ++i) {
    if (fl_add<P>(h[i], h[i + 1]) != h[i]) return false;
  }
  return true;
}

/// Priest-style renormalization: magnitude sort, then error-free two_sum
/// sweeps (smallest pair first) until each component absorbs its successor;
/// zeros compact out between sweeps. Truncation to r_nc drops components no
/// larger than one ulp of the last kept one.
template <class P>
inline void renorm_kernel(const double* in, int n, double* out, int r_nc) {
  double h[kStage];
  int m = 0;
  for (int i = 0; i < n; ++i) {
    if (in[i] != 0.0) h[m++] = in[i];
  }
  if (m > 1) {
    sort_by_magnitude(h, m);
    for (int pass = 0; pass < m + 4 && !is_compressed<P>(h, m); ++pass) {
      for (int i = m - 2; i >= 0; --i) {
        const auto r = two_sum<P>(h[i], h[i + 1]);
        h[i] = r.value;
        h[i + 1] = r.error;
      }
      int k = 0;
      for (int i = 0; i < m; ++i) {
        if (h[i] != 0.0) h[k++] = h[i];
      }
      m = k;
      if (m <= 1) break;
    }
  }
  for (int i = 0; i < r_nc; ++i) out[i] = i < m ? h[i] : 0.0;
}

/// Zero-compacting renormalization: nonzero components keep their order,
/// zeros move to the trailing suffix, then truncate/pad to r_nc.
template <class P>
inline void simple_renorm_kernel(const double* in, int n, double* out, int r_nc) {
  int k = 0;
  for (int i = 0; i < n && k < r_nc; ++i) {
    if (in[i] != 0.0) out[k++] = in[i];
  }
  for (; k < r_nc; ++k) out[k] = 0.0;
}

template <class P>
inline double approx_kernel(const double* x, int nc) {
  double acc = x[nc - 1];
  for (int i = nc - 2; i >= 0; --i) acc = fl_add<P>(acc, x[i]);
  return acc;
}

/// Grow expansion with normalization: Q starts at v, two_sum climbs from the
/// smallest component to the largest, and the grown nc+1 sequence is
/// compacted back to nc components. When v cancels against the leading
/// components the ladder can leave an error term larger than the shrunken
/// head, which zero-compaction alone cannot repair; that corner falls back
/// to the full renormalization so the ordering invariant always holds.
template <class P>
inline void grow_kernel(const double* x, int nc, double v, double* out) {
  double h[kMaxNc + 1];
  double q = v;
  for (int k = nc; k >= 1; --k) {
    const auto r = two_sum<P>(x[k - 1], q);
    q = r.value;
    h[k] = r.error;
  }
  h[0] = q;
  double compact[kMaxNc + 1];
  int m = 0;
  for (int i = 0; i <= nc; ++i) {
    if (h[i] != 0.0) compact[m++] = h[i];
  }
  if (is_compressed<P>(compact, m)) {
    for (int i = 0; i < nc; ++i) out[i] = i < m ? compact[i] : 0.0;
  } else {
    renorm_kernel<P>(h, nc + 1, out, nc);
  }
}

/// Exact product of an expansion by one float: every component goes through
/// two_prod and the error terms chain through two_sum, producing a 2*nc-term
/// expansion that sums to x*v exactly (barring residual underflow).
template <class P>
inline int scale_raw(const double* x, int nc, double v, double* out) {
  auto [q, h0] = two_prod<P>(x[nc - 1], v);
  out[0] = h0;
  int k = 1;
  for (int i = nc - 2; i >= 0; --i) {
    const auto [t, tl] = two_prod<P>(x[i], v);
    const auto s1 = two_sum<P>(q, tl);
    out[k++] = s1.error;
    const auto s2 = two_sum<P>(t, s1.value);
    out[k++] = s2.error;
    q = s2.value;
  }
  out[k++] = q;
  return k;  // == 2 * nc
}

template <class P>
inline void scale_kernel(const double* x, int nc, double v, double* out, int out_nc) {
  if (nc == 1 && out_nc == 1) {
    out[0] = fl_mul<P>(x[0], v);
    return;
  }
  double stage[2 * kMaxNc];
  const int m = scale_raw<P>(x, nc, v, stage);
  renorm_kernel<P>(stage, m, out, out_nc);
}

/// Merge both component lists by decreasing magnitude (x wins ties so the
/// result is reproducible), then renormalize.
template <class P>
inline void add_kernel(const double* x, int ncx, const double* y, int ncy,
                       double* out, int out_nc) {
  double h[2 * kMaxNc + 2];
  int i = 0, j = 0, k = 0;
  while (i < ncx && j < ncy) {
    h[k++] = std::fabs(x[i]) >= std::fabs(y[j]) ? x[i++] : y[j++];
  }
  while (i < ncx) h[k++] = x[i++];
  while (j < ncy) h[k++] = y[j++];
  renorm_kernel<P>(h, k, out, out_nc);
}

/// Long division: nc quotient digits plus one guard digit, each digit the
/// rounded ratio of the running residual's lead component by y_0.
template <class P>
inline void div_kernel(const double* x, const double* y, int nc, double* out) {
  if (nc == 1) {
    out[0] = fl_div<P>(x[0], y[0]);
    return;
  }
  double q[kMaxNc + 1] = {};
  double r[kMaxNc] = {};
  double stage[2 * kMaxNc];
  double scaled[kMaxNc];
  for (int i = 0; i < nc; ++i) r[i] = x[i];
  for (int d = 0;; ++d) {
    q[d] = fl_div<P>(r[0], y[0]);
    if (d == nc) break;
    const int m = scale_raw<P>(y, nc, -q[d], stage);
    renorm_kernel<P>(stage, m, scaled, nc);
    add_kernel<P>(r, nc, scaled, nc, r, nc);
  }
  renorm_kernel<P>(q, nc + 1, out, nc);
}

template <class P>
inline bool is_zero_value(const double* x, int nc) {
  return approx_kernel<P>(x, nc) == 0.0;
}

/// Fast multiplication through two divisions: x / (1 / y). A zero-valued y
/// short-circuits to zero because the reciprocal route is undefined there.
template <class P>
inline void mul_fast_kernel(const double* x, const double* y, int nc, double* out) {
  if (nc == 1) {
    out[0] = fl_mul<P>(x[0], y[0]);
    return;
  }
  if (is_zero_value<P>(y, nc) || is_zero_value<P>(x, nc)) {
    for (int i = 0; i < nc; ++i) out[i] = 0.0;
    return;
  }
  double one[kMaxNc] = {1.0};
  double recip[kMaxNc];
  div_kernel<P>(one, y, nc, recip);
  div_kernel<P>(x, recip, nc, out);
}

/// Direct product-of-components multiplication: exact partial products for
/// i + j < nc plus plain guard products at i + j == nc, then renormalize.
template <class P>
inline void mul_slow_kernel(const double* x, const double* y, int nc, double* out) {
  if (nc == 1) {
    out[0] = fl_mul<P>(x[0], y[0]);
    return;
  }
  double h[kStage];
  int m = 0;
  for (int i = 0; i < nc; ++i) {
    for (int j = 0; i + j < nc; ++j) {
      const auto [p, e] = two_prod<P>(x[i], y[j]);
      h[m++] = p;
      h[m++] = e;
    }
  }
  for (int i = 1; i < nc; ++i) h[m++] = fl_mul<P>(x[i], y[nc - i]);
  renorm_kernel<P>(h, m, out, nc);
}

/// Square as the symmetric specialization of the slow product: off-diagonal
/// partial products are doubled (exactly) instead of computed twice.
template <class P>
inline void square_kernel(const double* x, int nc, double* out) {
  if (nc == 1) {
    out[0] = fl_mul<P>(x[0], x[0]);
    return;
  }
  double h[kStage];
  int m = 0;
  for (int i = 0; i < nc; ++i) {
    for (int j = i; i + j < nc; ++j) {
      const auto [p, e] = two_prod<P>(x[i], x[j]);
      if (i == j) {
        h[m++] = p;
        h[m++] = e;
      } else {
        h[m++] = 2.0 * p;
        h[m++] = 2.0 * e;
      }
    }
  }
  for (int i = 1; i < nc; ++i) {
    const int j = nc - i;
    if (j < i) break;
    const double p = fl_mul<P>(x[i], x[j]);
    h[m++] = i == j ? p : 2.0 * p;
  }
  renorm_kernel<P>(h, m, out, nc);
}

/// Greedy conversion of one binary64 value into an nc-term P expansion; the
/// running remainder is exact because consecutive rounds cancel.
template <class P>
inline void expansion_of_double(double v, double* out, int nc) {
  double rem = v;
  for (int i = 0; i < nc; ++i) {
    out[i] = P::round(rem);
    if (!std::isfinite(out[i])) {
      for (int j = i + 1; j < nc; ++j) out[j] = 0.0;
      return;
    }
    rem -= out[i];
  }
}

/// exp via factorization exp(x_0) * exp(x_1) * ...: the lead factor is the
/// binary64 exponential spread over nc components, later factors are single
/// rounded exponentials applied through scaling. Largest component first, so
/// the later factors sit near 1.
template <class P>
inline void exp_kernel(const double* x, int nc, double* out) {
  expansion_of_double<P>(std::exp(x[0]), out, nc);
  for (int i = 1; i < nc; ++i) {
    if (x[i] == 0.0) continue;
    const double f = fl_exp<P>(x[i]);
    double tmp[kMaxNc];
    scale_kernel<P>(out, nc, f, tmp, nc);
    for (int j = 0; j < nc; ++j) out[j] = tmp[j];
  }
}

/// Maps `elem` of the tensor operand onto the broadcast working-precision
/// operand (scalar or trailing-suffix shape).
inline void check_suffix_broadcast(const Shape& x, const Shape& v, const char* op) {
  if (shape_numel(v) == 1) return;
  if (v.size() > x.size()) {
    throw std::invalid_argument(std::string(op) + ": operand shape " + shape_str(v) +
                                " does not broadcast over " + shape_str(x));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[v.size() - 1 - i] != x[x.size() - 1 - i]) {
      throw std::invalid_argument(std::string(op) + ": operand shape " + shape_str(v) +
                                  " is not a trailing suffix of " + shape_str(x));
    }
  }
}

/// In-place apply of a working-precision delta through grow_expn; keeps the
/// tensor's grad buffer attached.
template <class P>
inline void apply_update(MCTensor<P>& param, const NdArray& delta);

}  // namespace detail

/// Renormalizes a raw expansion (any component count) to r_nc components.
template <class P>
inline MCTensor<P> renormalize(const MCTensor<P>& h, int r_nc) {
  detail::check_nc_limit(h.nc());
  detail::check_nc_limit(r_nc);
  MCTensor<P> out(h.shape(), r_nc);
  for (std::size_t e = 0; e < h.numel(); ++e) {
    detail::renorm_kernel<P>(h.comps(e), h.nc(), out.comps(e), r_nc);
  }
  return out;
}

template <class P>
inline MCTensor<P> simple_renorm(const MCTensor<P>& h, int r_nc) {
  detail::check_nc_limit(h.nc());
  detail::check_nc_limit(r_nc);
  MCTensor<P> out(h.shape(), r_nc);
  for (std::size_t e = 0; e < h.numel(); ++e) {
    detail::simple_renorm_kernel<P>(h.comps(e), h.nc(), out.comps(e), r_nc);
  }
  return out;
}

/// Pads with zero components (used to align mixed-nc operands).
template <class P>
inline MCTensor<P> pad_nc(const MCTensor<P>& x, int nc) {
  if (nc == x.nc()) return x;
  if (nc < x.nc()) throw std::invalid_argument("pad_nc: target nc smaller than input");
  detail::check_nc_limit(nc);
  MCTensor<P> out(x.shape(), nc);
  for (std::size_t e = 0; e < x.numel(); ++e) {
    const double* src = x.comps(e);
    double* dst = out.comps(e);
    for (int i = 0; i < x.nc(); ++i) dst[i] = src[i];
  }
  return out;
}

template <class P>
inline MCTensor<P> negate(const MCTensor<P>& x) {
  MCTensor<P> out(x.shape(), x.nc());
  for (std::size_t i = 0; i < x.raw().size(); ++i) out.raw()[i] = -x.raw()[i];
  return out;
}

/// x + v for a working-precision v (Grow-ExpN).
template <class P>
inline MCTensor<P> grow_expn(const MCTensor<P>& x, const NdArray& v) {
  detail::check_nc_limit(x.nc());
  detail::check_suffix_broadcast(x.shape(), v.shape(), "grow_expn");
  MCTensor<P> out(x.shape(), x.nc());
  const std::size_t vn = v.numel();
  for (std::size_t e = 0; e < x.numel(); ++e) {
    detail::grow_kernel<P>(x.comps(e), x.nc(), v[e % vn], out.comps(e));
  }
  return out;
}

/// x * v for a working-precision v (ScalingN); expanded=true returns nc+1
/// components for callers that reduce afterwards.
template <class P>
inline MCTensor<P> scaling_n(const MCTensor<P>& x, const NdArray& v, bool expanded = false) {
  detail::check_nc_limit(x.nc());
  detail::check_suffix_broadcast(x.shape(), v.shape(), "scaling_n");
  const int out_nc = expanded ? x.nc() + 1 : x.nc();
  detail::check_nc_limit(out_nc);
  MCTensor<P> out(x.shape(), out_nc);
  const std::size_t vn = v.numel();
  for (std::size_t e = 0; e < x.numel(); ++e) {
    detail::scale_kernel<P>(x.comps(e), x.nc(), v[e % vn], out.comps(e), out_nc);
  }
  return out;
}

namespace detail {

template <class P, class Kernel>
inline MCTensor<P> binary_op(const MCTensor<P>& x, const MCTensor<P>& y,
                             const char* name, Kernel&& kernel) {
  check_shapes_equal(x.shape(), y.shape(), name);
  const int nc = std::max(x.nc(), y.nc());
  check_nc_limit(nc);
  MCTensor<P> xpad, ypad;
  const MCTensor<P>* xp = &x;
  const MCTensor<P>* yp = &y;
  if (x.nc() != nc) {
    xpad = pad_nc(x, nc);
    xp = &xpad;
  }
  if (y.nc() != nc) {
    ypad = pad_nc(y, nc);
    yp = &ypad;
  }
  MCTensor<P> out(x.shape(), nc);
  for (std::size_t e = 0; e < x.numel(); ++e) {
    kernel(xp->comps(e), yp->comps(e), nc, out.comps(e));
  }
  return out;
}

}  // namespace detail

template <class P>
inline MCTensor<P> add_mcn(const MCTensor<P>& x, const MCTensor<P>& y) {
  return detail::binary_op(x, y, "add_mcn",
                           [](const double* a, const double* b, int nc, double* out) {
                             detail::add_kernel<P>(a, nc, b, nc, out, nc);
                           });
}

template <class P>
inline MCTensor<P> div_mcn(const MCTensor<P>& x, const MCTensor<P>& y) {
  return detail::binary_op(x, y, "div_mcn",
                           [](const double* a, const double* b, int nc, double* out) {
                             detail::div_kernel<P>(a, b, nc, out);
                           });
}

template <class P>
inline MCTensor<P> mul_mcn(const MCTensor<P>& x, const MCTensor<P>& y) {
  return detail::binary_op(x, y, "mul_mcn",
                           [](const double* a, const double* b, int nc, double* out) {
                             detail::mul_fast_kernel<P>(a, b, nc, out);
                           });
}

template <class P>
inline MCTensor<P> mul_mcn_slow(const MCTensor<P>& x, const MCTensor<P>& y) {
  return detail::binary_op(x, y, "mul_mcn_slow",
                           [](const double* a, const double* b, int nc, double* out) {
                             detail::mul_slow_kernel<P>(a, b, nc, out);
                           });
}

template <class P>
inline MCTensor<P> square_mcn(const MCTensor<P>& x) {
  detail::check_nc_limit(x.nc());
  MCTensor<P> out(x.shape(), x.nc());
  for (std::size_t e = 0; e < x.numel(); ++e) {
    detail::square_kernel<P>(x.comps(e), x.nc(), out.comps(e));
  }
  return out;
}

template <class P>
inline MCTensor<P> exp_mcn(const MCTensor<P>& x) {
  detail::check_nc_limit(x.nc());
  MCTensor<P> out(x.shape(), x.nc());
  for (std::size_t e = 0; e < x.numel(); ++e) {
    detail::exp_kernel<P>(x.comps(e), x.nc(), out.comps(e));
  }
  return out;
}

/// v / y for a working-precision v: v is embedded as an nc-MCTensor by
/// appending zero components, then divided.
template <class P>
inline MCTensor<P> div_n(const NdArray& v, const MCTensor<P>& y) {
  detail::check_nc_limit(y.nc());
  detail::check_suffix_broadcast(y.shape(), v.shape(), "div_n");
  MCTensor<P> out(y.shape(), y.nc());
  const std::size_t vn = v.numel();
  double num[kMaxNc] = {0.0};
  for (std::size_t e = 0; e < y.numel(); ++e) {
    num[0] = P::round(v[e % vn]);
    for (int i = 1; i < y.nc(); ++i) num[i] = 0.0;
    detail::div_kernel<P>(num, y.comps(e), y.nc(), out.comps(e));
  }
  return out;
}

template <class P>
inline void detail::apply_update(MCTensor<P>& param, const NdArray& delta) {
  const MCTensor<P> grown = grow_expn(param, delta);
  param.raw() = grown.raw();
}

/// Elementwise comparisons on the evaluated sums.
template <class P>
inline std::vector<bool> approx_less(const MCTensor<P>& x, const MCTensor<P>& y) {
  check_shapes_equal(x.shape(), y.shape(), "approx_less");
  const NdArray a = x.approx(), b = y.approx();
  std::vector<bool> out(a.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] < b[i];
  return out;
}

template <class P>
inline std::vector<bool> approx_equal(const MCTensor<P>& x, const MCTensor<P>& y) {
  check_shapes_equal(x.shape(), y.shape(), "approx_equal");
  const NdArray a = x.approx(), b = y.approx();
  std::vector<bool> out(a.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] == b[i];
  return out;
}

/// Invariant audit used by tests: magnitude ordering, pairwise nonoverlap,
/// zeros only as a trailing suffix, and no nonzero component below the
/// subnormal quantum of P.
template <class P>
inline bool satisfies_invariants(const MCTensor<P>& x) {
  for (std::size_t e = 0; e < x.numel(); ++e) {
    const double* c = x.comps(e);
    bool seen_zero = false;
    for (int i = 0; i < x.nc(); ++i) {
      if (!std::isfinite(c[i])) return false;
      if (c[i] == 0.0) {
        seen_zero = true;
        continue;
      }
      if (seen_zero) return false;                        // interleaved zero
      if (std::fabs(c[i]) < P::min_pos) return false;     // below the floor
      if (i > 0 && std::fabs(c[i]) > ulp<P>(c[i - 1])) return false;
    }
  }
  return true;
}

}  // namespace mcf
