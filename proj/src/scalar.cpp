#include "procrisk/scalar.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace procrisk {

std::string to_text(const Rational& q) {
  const auto num = numerator(q);
  const auto den = denominator(q);
  if (den == 1) return num.str();
  return num.str() + "/" + den.str();
}

std::string to_text(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) throw std::runtime_error("to_text: formatting failed");
  return std::string(buf, end);
}

namespace {

boost::multiprecision::number<boost::multiprecision::gmp_int, boost::multiprecision::et_off> parse_integer(std::string_view s) {
  if (s.empty()) throw std::invalid_argument("parse_rational: empty integer");
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) throw std::invalid_argument("parse_rational: sign without digits");
  for (std::size_t j = i; j < s.size(); ++j) {
    if (s[j] < '0' || s[j] > '9') {
      throw std::invalid_argument("parse_rational: bad digit in '" + std::string(s) + "'");
    }
  }
  return boost::multiprecision::number<boost::multiprecision::gmp_int, boost::multiprecision::et_off>(std::string(s));
}

}  // namespace

Rational parse_rational(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) throw std::invalid_argument("parse_rational: empty string");

  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    auto num = parse_integer(text.substr(0, slash));
    auto den = parse_integer(text.substr(slash + 1));
    if (den == 0) throw std::invalid_argument("parse_rational: zero denominator");
    return Rational(num, den);
  }
  if (auto dot = text.find('.'); dot != std::string_view::npos) {
    std::string digits(text.substr(0, dot));
    std::string frac(text.substr(dot + 1));
    boost::multiprecision::number<boost::multiprecision::gmp_int, boost::multiprecision::et_off> scale = 1;
    for (std::size_t k = 0; k < frac.size(); ++k) scale *= 10;
    if (digits.empty() || digits == "-" || digits == "+") digits += "0";
    const bool negative = !digits.empty() && digits[0] == '-';
    auto whole = parse_integer(digits);
    auto part = frac.empty() ? boost::multiprecision::number<boost::multiprecision::gmp_int, boost::multiprecision::et_off>(0) : parse_integer(frac);
    Rational r(whole);
    Rational f(part, scale);
    return negative ? r - f : r + f;
  }
  return Rational(parse_integer(text));
}

}  // namespace procrisk
