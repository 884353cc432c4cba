#include "mwp/rational.hpp"

#include <cmath>
#include <cstdlib>

namespace mwp {

namespace {

using Int = Rational::Int;

Int abs128(Int v) { return v < 0 ? -v : v; }

Int gcd128(Int a, Int b) {
  a = abs128(a);
  b = abs128(b);
  while (b != 0) {
    Int t = a % b;
    a = b;
    b = t;
  }
  return a;
}

Int checked_mul(Int a, Int b) {
  Int r;
  if (__builtin_mul_overflow(a, b, &r)) throw RationalOverflow();
  return r;
}

Int checked_add(Int a, Int b) {
  Int r;
  if (__builtin_add_overflow(a, b, &r)) throw RationalOverflow();
  return r;
}

}  // namespace

Rational::Rational(Int num, Int den) {
  if (den == 0) throw std::invalid_argument("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  Int g = gcd128(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  num_ = num;
  den_ = den;
}

Rational Rational::parse(const std::string& text) {
  std::string s = text;
  bool neg = false;
  size_t pos = 0;
  if (pos < s.size() && (s[pos] == '-' || s[pos] == '+')) {
    neg = s[pos] == '-';
    ++pos;
  }
  auto slash = s.find('/');
  if (slash != std::string::npos) {
    Rational a = parse(s.substr(pos, slash - pos));
    Rational b = parse(s.substr(slash + 1));
    if (b.is_zero()) throw std::invalid_argument("rational with zero denominator");
    Rational r = a * b.inverse();
    return neg ? -r : r;
  }
  Int num = 0;
  Int den = 1;
  bool saw_digit = false;
  bool in_frac = false;
  for (; pos < s.size(); ++pos) {
    char c = s[pos];
    if (c == '.') {
      if (in_frac) throw std::invalid_argument("bad number: " + text);
      in_frac = true;
      continue;
    }
    if (c < '0' || c > '9') throw std::invalid_argument("bad number: " + text);
    saw_digit = true;
    num = checked_add(checked_mul(num, 10), c - '0');
    if (in_frac) den = checked_mul(den, 10);
  }
  if (!saw_digit) throw std::invalid_argument("bad number: " + text);
  return Rational(neg ? -num : num, den);
}

Rational Rational::operator+(const Rational& o) const {
  // Reduce cross terms by gcd of denominators to keep intermediates small.
  Int g = gcd128(den_, o.den_);
  Int da = den_ / g;
  Int db = o.den_ / g;
  Int num = checked_add(checked_mul(num_, db), checked_mul(o.num_, da));
  Int den = checked_mul(checked_mul(da, db), g);
  return Rational(num, den);
}

Rational Rational::operator-(const Rational& o) const { return *this + (-o); }

Rational Rational::operator*(const Rational& o) const {
  Int g1 = gcd128(num_, o.den_);
  Int g2 = gcd128(o.num_, den_);
  Int num = checked_mul(num_ / g1, o.num_ / g2);
  Int den = checked_mul(den_ / g2, o.den_ / g1);
  return Rational(num, den);
}

Rational Rational::operator-() const {
  Rational r;
  r.num_ = -num_;
  r.den_ = den_;
  return r;
}

Rational Rational::inverse() const {
  if (num_ == 0) throw std::invalid_argument("inverse of zero");
  return Rational(den_, num_);
}

bool Rational::operator<(const Rational& o) const {
  // num_/den_ < o.num_/o.den_ with positive denominators.
  return checked_mul(num_, o.den_) < checked_mul(o.num_, den_);
}

double Rational::to_double() const {
  return static_cast<double>(static_cast<long double>(num_) / static_cast<long double>(den_));
}

std::string Rational::to_string() const {
  auto int_str = [](Int v) {
    if (v == 0) return std::string("0");
    bool neg = v < 0;
    Int a = neg ? -v : v;
    std::string s;
    while (a > 0) {
      s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(a % 10)));
      a /= 10;
    }
    return neg ? "-" + s : s;
  };
  if (den_ == 1) return int_str(num_);
  // Terminating decimal when den = 2^a * 5^b.
  Int d = den_;
  int twos = 0, fives = 0;
  while (d % 2 == 0) {
    d /= 2;
    ++twos;
  }
  while (d % 5 == 0) {
    d /= 5;
    ++fives;
  }
  if (d == 1 && twos <= 30 && fives <= 30) {
    int digits = twos > fives ? twos : fives;
    Int scale = 1;
    for (int i = 0; i < digits; ++i) scale *= 10;
    Int scaled = num_ * (scale / den_);
    std::string body = int_str(scaled < 0 ? -scaled : scaled);
    while (static_cast<int>(body.size()) <= digits) body.insert(body.begin(), '0');
    body.insert(body.size() - digits, ".");
    return (num_ < 0 ? "-" : "") + body;
  }
  return int_str(num_) + "/" + int_str(den_);
}

}  // namespace mwp
