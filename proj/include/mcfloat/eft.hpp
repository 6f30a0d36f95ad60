#pragma once

/// Error-free transformations: the only layer where rounding error is split
/// out exactly. For finite inputs without overflow,
///   two_sum:  s + e == a + b   with s = fl(a+b)
///   two_prod: p + e == a * b   with p = fl(a*b), barring underflow of e
/// Non-finite inputs propagate NaN/Inf; nothing traps.

#include <atomic>
#include <cstddef>
#include <utility>
#include <vector>

#include "mcfloat/precision.hpp"

namespace mcf {

struct EftResult {
  double value;
  double error;
};

/// Runtime switch between the fma product transform and Dekker splitting.
/// std::fma is a guaranteed fused operation, so the fma path is the default.
inline std::atomic<bool>& fma_enabled() {
  static std::atomic<bool> enabled{true};
  return enabled;
}

/// Knuth two-sum: 6 rounded operations, valid for any ordering of |a|, |b|.
template <class P>
inline EftResult two_sum(double a, double b) {
  const double s = fl_add<P>(a, b);
  const double bb = fl_sub<P>(s, a);
  const double err =
      fl_add<P>(fl_sub<P>(a, fl_sub<P>(s, bb)), fl_sub<P>(b, bb));
  return {s, err};
}

/// Dekker fast-two-sum; requires exponent(a) >= exponent(b) (or a == 0).
template <class P>
inline EftResult fast_two_sum(double a, double b) {
  const double s = fl_add<P>(a, b);
  const double err = fl_sub<P>(b, fl_sub<P>(s, a));
  return {s, err};
}

/// Veltkamp splitting with constant 2^ceil(p/2) + 1. hi carries the leading
/// p-s significand bits and |lo| fits in s-1 bits, so all cross products of
/// two splits are exact in P (also for the odd p = 11 of binary16).
template <class P>
inline EftResult split(double a) {
  constexpr int s = (P::significand_bits + 1) / 2;
  constexpr double splitter = static_cast<double>((1ULL << s) + 1);
  const double c = fl_mul<P>(splitter, a);
  const double hi = fl_sub<P>(c, fl_sub<P>(c, a));
  const double lo = fl_sub<P>(a, hi);
  return {hi, lo};
}

/// Dekker product transform via splitting.
template <class P>
inline EftResult two_prod_split(double a, double b) {
  const double p = fl_mul<P>(a, b);
  const auto [ah, al] = split<P>(a);
  const auto [bh, bl] = split<P>(b);
  const double e1 = fl_sub<P>(fl_mul<P>(ah, bh), p);
  const double e2 = fl_add<P>(e1, fl_mul<P>(ah, bl));
  const double e3 = fl_add<P>(e2, fl_mul<P>(al, bh));
  const double err = fl_add<P>(e3, fl_mul<P>(al, bl));
  return {p, err};
}

/// Product transform with a fused multiply-add: p = fl(a*b), e = fma(a,b,-p).
template <class P>
inline EftResult two_prod_fma(double a, double b) {
  const double p = fl_mul<P>(a, b);
  const double err = fl_fma<P>(a, b, -p);
  return {p, err};
}

template <class P>
inline EftResult two_prod(double a, double b) {
  return fma_enabled().load(std::memory_order_relaxed) ? two_prod_fma<P>(a, b)
                                                       : two_prod_split<P>(a, b);
}

/// Elementwise array forms; each element agrees with the scalar transform.
template <class P>
inline void two_sum(const std::vector<double>& a, const std::vector<double>& b,
                    std::vector<double>& s, std::vector<double>& e) {
  s.resize(a.size());
  e.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto r = two_sum<P>(a[i], b[i]);
    s[i] = r.value;
    e[i] = r.error;
  }
}

template <class P>
inline void two_prod(const std::vector<double>& a, const std::vector<double>& b,
                     std::vector<double>& p, std::vector<double>& e) {
  p.resize(a.size());
  e.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto r = two_prod<P>(a[i], b[i]);
    p[i] = r.value;
    e[i] = r.error;
  }
}

}  // namespace mcf
