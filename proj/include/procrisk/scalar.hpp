#pragma once

#include <boost/multiprecision/gmp.hpp>
#include <boost/multiprecision/eigen.hpp>
#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <string>
#include <string_view>

namespace procrisk {

/// Exact rational scalar (GMP backed). Default for the filtration,
/// decomposition and primal risk-measure checks.
using Rational = boost::multiprecision::number<boost::multiprecision::gmp_rational, boost::multiprecision::et_off>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
inline constexpr bool is_exact_v = std::same_as<Scalar, Rational>;

template <typename Scalar>
Scalar from_rational(const Rational& q) {
  if constexpr (is_exact_v<Scalar>) {
    return q;
  } else {
    return static_cast<Scalar>(q.convert_to<double>());
  }
}

/// Exact for rationals (every finite double is a dyadic rational).
template <typename Scalar>
Scalar from_double(double x) {
  if constexpr (is_exact_v<Scalar>) {
    return Rational(x);
  } else {
    return static_cast<Scalar>(x);
  }
}

inline double to_double(const Rational& q) { return q.convert_to<double>(); }
inline double to_double(double x) { return x; }

template <typename Scalar>
Scalar abs_value(const Scalar& x) {
  if constexpr (is_exact_v<Scalar>) {
    return boost::multiprecision::abs(x);
  } else {
    return std::abs(x);
  }
}

/// |a - b| <= tol, exact comparison when tol == 0.
template <typename Scalar>
bool nearly_equal(const Scalar& a, const Scalar& b, double tol) {
  if (tol == 0.0) return a == b;
  return to_double(abs_value<Scalar>(a - b)) <= tol;
}

/// Lossless text form: "num/den" for rationals (plain integer when den == 1),
/// shortest round-trip decimal for doubles.
std::string to_text(const Rational& q);
std::string to_text(double x);

/// Accepts "3", "-1/4", "0.25" (decimal strings are converted exactly).
Rational parse_rational(std::string_view text);

}  // namespace procrisk
