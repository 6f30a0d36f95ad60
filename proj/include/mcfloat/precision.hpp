#pragma once

/// Precision policies.
///
/// Every value in this library is stored as a C++ double whose value is
/// exactly representable in the active format (binary16, binary32 or
/// binary64). Arithmetic in a narrower format is emulated by computing the
/// primitive in binary64 and rounding the result to the target format with a
/// single correct round-to-nearest-even conversion. For +, -, *, / and fma
/// this double rounding is innocuous because 53 >= 2*24 + 2 (binary32) and
/// 53 >= 2*11 + 2 (binary16), so the emulated results are bit-identical to
/// native arithmetic in the target format.
///
/// Non-finite values propagate as in ordinary IEEE arithmetic; nothing traps.

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace mcf {

static_assert(std::numeric_limits<double>::is_iec559,
              "binary64 IEEE arithmetic is required");

namespace detail {

/// Correctly rounded double -> binary16 conversion (round to nearest, ties to
/// even), returned as the exactly-representable double. Handles subnormals,
/// signed zero and the 65520 overflow threshold.
inline double round_to_binary16(double x) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  const std::uint64_t sign = bits >> 63;
  const int raw_exp = static_cast<int>((bits >> 52) & 0x7ff);
  const std::uint64_t frac = bits & 0xfffffffffffffULL;

  if (raw_exp == 0x7ff) return x;  // NaN / Inf pass through
  if ((bits & ~(1ULL << 63)) == 0) return x;  // +-0

  const int e = raw_exp - 1023;  // unbiased; raw_exp==0 (double subnormal)
                                 // is far below the binary16 range
  const double mag = std::fabs(x);

  // Values at or beyond halfway between 65504 and 2^16 round to infinity.
  if (mag >= 65520.0) {
    return sign ? -std::numeric_limits<double>::infinity()
                : std::numeric_limits<double>::infinity();
  }
  if (raw_exp == 0 || e < -25) return sign ? -0.0 : 0.0;

  const std::uint64_t m53 = (1ULL << 52) | frac;  // 53-bit significand

  auto round_shift = [](std::uint64_t m, int s) -> std::uint64_t {
    // m >> s with round-to-nearest-even on the discarded bits; s in [1,63].
    const std::uint64_t q = m >> s;
    const std::uint64_t rem = m & ((1ULL << s) - 1);
    const std::uint64_t half = 1ULL << (s - 1);
    if (rem > half || (rem == half && (q & 1))) return q + 1;
    return q;
  };

  double result;
  if (e >= -14) {
    // Normal binary16 range: keep 11 significand bits.
    std::uint64_t q = round_shift(m53, 42);
    int eo = e;
    if (q == (1ULL << 11)) {  // rounding carried into the next binade
      q >>= 1;
      ++eo;
    }
    result = std::ldexp(static_cast<double>(q), eo - 10);
  } else {
    // Subnormal range: quantum is 2^-24.
    const int shift = 52 - (e + 24);  // bits below the quantum
    std::uint64_t q = shift >= 63 ? 0 : round_shift(m53, shift);
    result = std::ldexp(static_cast<double>(q), -24);
  }
  return sign ? -result : result;
}

}  // namespace detail

/// binary64: the native working precision.
struct B64 {
  static constexpr const char* name = "b64";
  static constexpr int significand_bits = 53;
  static constexpr double min_pos = 0x1p-1074;     // smallest positive subnormal
  static constexpr double min_normal = 0x1p-1022;
  static constexpr double max_finite = std::numeric_limits<double>::max();
  using bits_type = std::uint64_t;

  static double round(double x) { return x; }
  static bits_type to_bits(double x) { return std::bit_cast<std::uint64_t>(x); }
  static double from_bits(bits_type b) { return std::bit_cast<double>(b); }
};

/// binary32 emulated over double; round() is exact by hardware conversion.
struct B32 {
  static constexpr const char* name = "b32";
  static constexpr int significand_bits = 24;
  static constexpr double min_pos = 0x1p-149;
  static constexpr double min_normal = 0x1p-126;
  static constexpr double max_finite = 0x1.fffffep127;
  using bits_type = std::uint32_t;

  static double round(double x) {
    return static_cast<double>(static_cast<float>(x));
  }
  static bits_type to_bits(double x) {
    return std::bit_cast<std::uint32_t>(static_cast<float>(x));
  }
  static double from_bits(bits_type b) {
    return static_cast<double>(std::bit_cast<float>(b));
  }
};

/// binary16 emulated over double with a software round-to-nearest-even.
struct B16 {
  static constexpr const char* name = "b16";
  static constexpr int significand_bits = 11;
  static constexpr double min_pos = 0x1p-24;
  static constexpr double min_normal = 0x1p-14;
  static constexpr double max_finite = 65504.0;
  using bits_type = std::uint16_t;

  static double round(double x) { return detail::round_to_binary16(x); }

  static bits_type to_bits(double x) {
    // x must already be a binary16 value (as produced by round()).
    const std::uint64_t b = std::bit_cast<std::uint64_t>(x);
    const std::uint16_t sign = static_cast<std::uint16_t>((b >> 48) & 0x8000);
    if (std::isnan(x)) return static_cast<std::uint16_t>(sign | 0x7e00);
    if (std::isinf(x)) return static_cast<std::uint16_t>(sign | 0x7c00);
    const double mag = std::fabs(x);
    if (mag == 0.0) return sign;
    int e;
    const double m = std::frexp(mag, &e);  // mag = m * 2^e, m in [0.5, 1)
    if (e - 1 >= -14) {
      const auto q = static_cast<std::uint16_t>(std::ldexp(m, 11));  // [1024,2048)
      return static_cast<std::uint16_t>(
          sign | ((e - 1 + 15) << 10) | (q & 0x3ff));
    }
    const auto q = static_cast<std::uint16_t>(std::ldexp(mag, 24));
    return static_cast<std::uint16_t>(sign | q);
  }

  static double from_bits(bits_type b) {
    const int sign = (b >> 15) & 1;
    const int exp = (b >> 10) & 0x1f;
    const int frac = b & 0x3ff;
    double mag;
    if (exp == 0x1f) {
      mag = frac ? std::numeric_limits<double>::quiet_NaN()
                 : std::numeric_limits<double>::infinity();
    } else if (exp == 0) {
      mag = std::ldexp(static_cast<double>(frac), -24);
    } else {
      mag = std::ldexp(static_cast<double>(1024 + frac), exp - 25);
    }
    return sign ? -mag : mag;
  }
};

/// Rounded primitives. Inputs are assumed to be values of P.
template <class P>
inline double fl_add(double a, double b) { return P::round(a + b); }
template <class P>
inline double fl_sub(double a, double b) { return P::round(a - b); }
template <class P>
inline double fl_mul(double a, double b) { return P::round(a * b); }
template <class P>
inline double fl_div(double a, double b) { return P::round(a / b); }
template <class P>
inline double fl_sqrt(double a) { return P::round(std::sqrt(a)); }

/// Fused multiply-add in P: a*b + c with a single rounding.
template <class P>
inline double fl_fma(double a, double b, double c) {
  if constexpr (P::significand_bits == 53) {
    return std::fma(a, b, c);
  } else {
    // a*b is exact in binary64 (at most 2*24 significand bits), so the
    // addition below performs the single binary64 rounding; narrowing to P
    // afterwards is innocuous.
    return P::round(a * b + c);
  }
}

// Transcendentals: binary64 libm result rounded to P. Not claimed correctly
// rounded in the last ulp of binary64; at 24 bits and below they are.
template <class P>
inline double fl_exp(double a) { return P::round(std::exp(a)); }
template <class P>
inline double fl_log(double a) { return P::round(std::log(a)); }
template <class P>
inline double fl_tanh(double a) { return P::round(std::tanh(a)); }

/// Spacing of P at |x| (the value of one unit in the last place), clamped to
/// the subnormal quantum.
template <class P>
inline double ulp(double x) {
  if (x == 0.0 || !std::isfinite(x)) return P::min_pos;
  const int e = std::ilogb(x);
  const double spacing = std::ldexp(1.0, e - (P::significand_bits - 1));
  return spacing < P::min_pos ? P::min_pos : spacing;
}

/// Precision selected at run time (CLI surface); library code is templated.
enum class PrecisionKind { kB16, kB32, kB64 };

inline const char* precision_name(PrecisionKind k) {
  switch (k) {
    case PrecisionKind::kB16: return B16::name;
    case PrecisionKind::kB32: return B32::name;
    default: return B64::name;
  }
}

/// Calls fn.template operator()<P>() for the policy matching `kind`.
template <class Fn>
decltype(auto) with_precision(PrecisionKind kind, Fn&& fn) {
  switch (kind) {
    case PrecisionKind::kB16: return fn.template operator()<B16>();
    case PrecisionKind::kB32: return fn.template operator()<B32>();
    default: return fn.template operator()<B64>();
  }
}

}  // namespace mcf
