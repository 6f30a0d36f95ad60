#pragma once

/// Ground-truth reference arithmetic for tests and error profiling.
///
/// ExactScalar is an arbitrary-precision rational, so +, -, *, / and
/// comparisons are exact and every finite float converts exactly; a whole
/// class of reference error disappears compared to grading against a big
/// floating-point type. Transcendentals are graded through hp_* evaluators
/// with an explicit bit budget (default 160), far beyond anything measured.
///
/// Never call the oracle from a training loop; it is reference machinery.

#include <gmpxx.h>
#include <mpfr.h>

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcfloat/mc_ops.hpp"
#include "mcfloat/mctensor.hpp"
#include "mcfloat/precision.hpp"
#include "mcfloat/rng.hpp"

namespace mcf {

class ExactScalar {
 public:
  ExactScalar() : v_(0) {}
  explicit ExactScalar(double d) : v_(make_from_double(d)) {}
  explicit ExactScalar(long n) : v_(n) {}
  ExactScalar(long num, unsigned long den) : v_(num, den) { v_.canonicalize(); }
  explicit ExactScalar(mpq_class v) : v_(std::move(v)) {}

  /// 2^k for any integer k (including negative).
  static ExactScalar pow2(long k) {
    mpq_class q(1);
    if (k >= 0) {
      mpz_mul_2exp(q.get_num_mpz_t(), q.get_num_mpz_t(), k);
    } else {
      mpz_mul_2exp(q.get_den_mpz_t(), q.get_den_mpz_t(), -k);
    }
    return ExactScalar(std::move(q));
  }

  ExactScalar operator+(const ExactScalar& o) const { return ExactScalar(mpq_class(v_ + o.v_)); }
  ExactScalar operator-(const ExactScalar& o) const { return ExactScalar(mpq_class(v_ - o.v_)); }
  ExactScalar operator*(const ExactScalar& o) const { return ExactScalar(mpq_class(v_ * o.v_)); }
  ExactScalar operator/(const ExactScalar& o) const {
    if (o.is_zero()) throw std::domain_error("ExactScalar: division by zero");
    return ExactScalar(mpq_class(v_ / o.v_));
  }
  ExactScalar operator-() const { return ExactScalar(mpq_class(-v_)); }

  bool operator==(const ExactScalar& o) const { return v_ == o.v_; }
  bool operator!=(const ExactScalar& o) const { return v_ != o.v_; }
  bool operator<(const ExactScalar& o) const { return v_ < o.v_; }
  bool operator<=(const ExactScalar& o) const { return v_ <= o.v_; }
  bool operator>(const ExactScalar& o) const { return v_ > o.v_; }
  bool operator>=(const ExactScalar& o) const { return v_ >= o.v_; }

  ExactScalar abs() const { return ExactScalar(mpq_class(::abs(v_))); }
  bool is_zero() const { return sgn(v_) == 0; }

  ExactScalar pow_int(int e) const {
    ExactScalar r(1L);
    ExactScalar base = *this;
    int n = e < 0 ? -e : e;
    for (; n > 0; n >>= 1) {
      if (n & 1) r = r * base;
      base = base * base;
    }
    if (e < 0) r = ExactScalar(1L) / r;
    return r;
  }

  /// Nearest double (round to nearest even via MPFR; mpq_get_d truncates).
  double to_double() const;

  std::string to_string() const { return v_.get_str(); }
  const mpq_class& raw() const { return v_; }

 private:
  static mpq_class make_from_double(double d) {
    if (!std::isfinite(d)) {
      throw std::invalid_argument("ExactScalar: non-finite double");
    }
    return mpq_class(d);  // exact
  }

  mpq_class v_;
};

namespace detail {

/// MPFR exponent range and rounding state is process-global; serialize use.
inline std::mutex& mpfr_mutex() {
  static std::mutex m;
  return m;
}

struct MpfrFormat {
  int precision;
  long emin;
  long emax;
};

template <class P>
constexpr MpfrFormat mpfr_format() {
  if constexpr (P::significand_bits == 11) return {11, -23, 16};
  else if constexpr (P::significand_bits == 24) return {24, -148, 128};
  else return {53, -1073, 1024};
}

inline ExactScalar exact_from_mpfr(const mpfr_t x) {
  if (mpfr_zero_p(x)) return ExactScalar(0L);
  mpz_class mant;
  const mpfr_exp_t e = mpfr_get_z_2exp(mant.get_mpz_t(), x);
  mpq_class q(mant);
  if (e >= 0) {
    mpz_mul_2exp(q.get_num_mpz_t(), q.get_num_mpz_t(), e);
  } else {
    mpz_mul_2exp(q.get_den_mpz_t(), q.get_den_mpz_t(), -e);
  }
  q.canonicalize();
  return ExactScalar(std::move(q));
}

}  // namespace detail

inline double ExactScalar::to_double() const {
  std::lock_guard<std::mutex> lock(detail::mpfr_mutex());
  mpfr_t t;
  mpfr_init2(t, 53);
  mpfr_set_q(t, v_.get_mpq_t(), MPFR_RNDN);
  const double d = mpfr_get_d(t, MPFR_RNDN);
  mpfr_clear(t);
  return d;
}

/// Correctly rounds a rational to precision P (round to nearest even,
/// IEEE subnormals and overflow included), returned as a double.
template <class P>
inline double round_rational(const ExactScalar& x) {
  constexpr auto fmt = detail::mpfr_format<P>();
  std::lock_guard<std::mutex> lock(detail::mpfr_mutex());
  const mpfr_exp_t old_emin = mpfr_get_emin();
  const mpfr_exp_t old_emax = mpfr_get_emax();
  mpfr_set_emin(fmt.emin);
  mpfr_set_emax(fmt.emax);
  mpfr_t t;
  mpfr_init2(t, fmt.precision);
  int ternary = mpfr_set_q(t, x.raw().get_mpq_t(), MPFR_RNDN);
  ternary = mpfr_check_range(t, ternary, MPFR_RNDN);
  mpfr_subnormalize(t, ternary, MPFR_RNDN);
  double d = mpfr_get_d(t, MPFR_RNDN);  // exact: t fits in a double
  if (mpfr_inf_p(t)) {
    d = mpfr_sgn(t) > 0 ? std::numeric_limits<double>::infinity()
                        : -std::numeric_limits<double>::infinity();
  }
  mpfr_clear(t);
  mpfr_set_emin(old_emin);
  mpfr_set_emax(old_emax);
  return d;
}

/// |approx - truth| / |truth|, or |approx| when truth == 0.
inline ExactScalar rel_error(const ExactScalar& approx, const ExactScalar& truth) {
  if (truth.is_zero()) return (approx - truth).abs();
  return ((approx - truth) / truth).abs();
}

enum class HpFn { kExp, kLog, kArcosh, kSqrt };

/// Transcendental evaluated to `bits` bits of precision; the correctly
/// rounded MPFR result carries a relative error of at most 2^-(bits-2)
/// around the exact value of the rational argument.
inline ExactScalar hp_transcendental(HpFn fn, const ExactScalar& x, int bits = 160) {
  if (bits < 8) throw std::invalid_argument("hp_transcendental: bits too small");
  std::lock_guard<std::mutex> lock(detail::mpfr_mutex());
  mpfr_t a, r;
  mpfr_init2(a, bits + 64);
  mpfr_init2(r, bits);
  mpfr_set_q(a, x.raw().get_mpq_t(), MPFR_RNDN);
  int bad = 0;
  switch (fn) {
    case HpFn::kExp:
      mpfr_exp(r, a, MPFR_RNDN);
      break;
    case HpFn::kLog:
      bad = mpfr_sgn(a) <= 0;
      if (!bad) mpfr_log(r, a, MPFR_RNDN);
      break;
    case HpFn::kArcosh:
      bad = mpfr_cmp_ui(a, 1) < 0;
      if (!bad) mpfr_acosh(r, a, MPFR_RNDN);
      break;
    case HpFn::kSqrt:
      bad = mpfr_sgn(a) < 0;
      if (!bad) mpfr_sqrt(r, a, MPFR_RNDN);
      break;
  }
  if (bad) {
    mpfr_clear(a);
    mpfr_clear(r);
    throw std::domain_error("hp_transcendental: argument outside domain");
  }
  ExactScalar out = detail::exact_from_mpfr(r);
  mpfr_clear(a);
  mpfr_clear(r);
  return out;
}

inline ExactScalar hp_exp(const ExactScalar& x, int bits = 160) {
  return hp_transcendental(HpFn::kExp, x, bits);
}
inline ExactScalar hp_log(const ExactScalar& x, int bits = 160) {
  return hp_transcendental(HpFn::kLog, x, bits);
}
inline ExactScalar hp_arcosh(const ExactScalar& x, int bits = 160) {
  return hp_transcendental(HpFn::kArcosh, x, bits);
}
inline ExactScalar hp_sqrt(const ExactScalar& x, int bits = 160) {
  return hp_transcendental(HpFn::kSqrt, x, bits);
}

/// Draws a value of magnitude about 10^m via (10 - N(0,1))^m, exactly as a
/// rational; round_rational / expansion conversion quantize it afterwards.
inline ExactScalar sample_magnitude_exact(int m, Rng& rng) {
  const ExactScalar base = ExactScalar(10L) - ExactScalar(rng.normal());
  return base.pow_int(m);
}

/// Same draw rounded into precision P (the float-valued interface).
template <class P>
inline double sample_magnitude(int m, Rng& rng) {
  return round_rational<P>(sample_magnitude_exact(m, rng));
}

/// Exact semantic value of every element: the rational component sum.
template <class P>
inline std::vector<ExactScalar> value_of(const MCTensor<P>& x) {
  std::vector<ExactScalar> out;
  out.reserve(x.numel());
  for (std::size_t e = 0; e < x.numel(); ++e) {
    const double* c = x.comps(e);
    ExactScalar acc;
    for (int i = 0; i < x.nc(); ++i) {
      if (!std::isfinite(c[i])) {
        throw std::invalid_argument("value_of: non-finite component");
      }
      acc = acc + ExactScalar(c[i]);
    }
    out.push_back(std::move(acc));
  }
  return out;
}

template <class P>
inline ExactScalar value_of_scalar(const MCTensor<P>& x, std::size_t elem = 0) {
  const double* c = x.comps(elem);
  ExactScalar acc;
  for (int i = 0; i < x.nc(); ++i) acc = acc + ExactScalar(c[i]);
  return acc;
}

/// Greedy nearest-expansion conversion of a rational into nc components of
/// precision P (the reference way to materialize a sampled value as an
/// MCTensor element). The greedy pass can land a trailing component exactly
/// on the half-ulp tie of its predecessor, which the library's canonical
/// form does not tolerate, so a value-preserving renormalization follows.
template <class P>
inline void expansion_from_exact(const ExactScalar& r, double* out, int nc) {
  ExactScalar rem = r;
  for (int i = 0; i < nc; ++i) {
    const double c = round_rational<P>(rem);
    out[i] = c;
    if (c == 0.0 || !std::isfinite(c)) {
      for (int j = i + 1; j < nc; ++j) out[j] = 0.0;
      if (!std::isnan(c) && c != 0.0) out[i] = c;
      break;
    }
    rem = rem - ExactScalar(c);
  }
  if (std::isfinite(out[0])) {
    double canon[kMaxNc];
    detail::renorm_kernel<P>(out, nc, canon, nc);
    for (int i = 0; i < nc; ++i) out[i] = canon[i];
  }
}

template <class P>
inline MCTensor<P> mct_from_exact(const std::vector<ExactScalar>& values,
                                  const Shape& shape, int nc) {
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("mct_from_exact: value count does not match shape");
  }
  MCTensor<P> out(shape, nc);
  for (std::size_t e = 0; e < values.size(); ++e) {
    expansion_from_exact<P>(values[e], out.comps(e), nc);
  }
  return out;
}

template <class P>
inline MCTensor<P> mct_scalar_from_exact(const ExactScalar& v, int nc) {
  return mct_from_exact<P>({v}, Shape{}, nc);
}

}  // namespace mcf
