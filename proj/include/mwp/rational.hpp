#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mwp {

// Thrown when a rational operation exceeds 128-bit intermediate range.
struct RationalOverflow : std::runtime_error {
  RationalOverflow() : std::runtime_error("rational overflow") {}
};

// Exact rational number over signed 128-bit integers, always normalized
// (denominator > 0, gcd(num, den) = 1). Arithmetic throws RationalOverflow
// instead of wrapping.
class Rational {
 public:
  using Int = __int128;

  Rational() : num_(0), den_(1) {}
  Rational(long long n) : num_(n), den_(1) {}
  Rational(Int num, Int den);

  static Rational parse(const std::string& text);  // "12", "-3.5", "7/2"

  Rational operator+(const Rational& o) const;
  Rational operator-(const Rational& o) const;
  Rational operator*(const Rational& o) const;
  Rational operator-() const;
  // Multiplicative inverse; caller must rule out zero first.
  Rational inverse() const;

  bool operator==(const Rational& o) const { return num_ == o.num_ && den_ == o.den_; }
  bool operator!=(const Rational& o) const { return !(*this == o); }
  bool operator<(const Rational& o) const;

  bool is_zero() const { return num_ == 0; }
  bool is_negative() const { return num_ < 0; }
  bool is_integer() const { return den_ == 1; }

  double to_double() const;
  // Minimal text form: integer, terminating decimal, or "num/den".
  std::string to_string() const;

  Int num() const { return num_; }
  Int den() const { return den_; }

 private:
  Int num_, den_;
};

}  // namespace mwp
