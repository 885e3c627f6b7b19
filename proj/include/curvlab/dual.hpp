#pragma once

#include <cmath>

namespace curvlab {

// First-order forward-mode number: val + tan * e with e^2 = 0. Running the
// reverse-mode tape over Dual values yields directional derivatives of the
// gradient, i.e. Hessian-vector products.
struct Dual {
  double val = 0.0;
  double tan = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double v) : val(v) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(double v, double t) : val(v), tan(t) {}

  Dual& operator+=(const Dual& o) {
    val += o.val;
    tan += o.tan;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    val -= o.val;
    tan -= o.tan;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    tan = tan * o.val + val * o.tan;
    val *= o.val;
    return *this;
  }

  friend bool operator==(const Dual&, const Dual&) = default;
};

inline Dual operator-(const Dual& a) { return {-a.val, -a.tan}; }
inline Dual operator+(const Dual& a, const Dual& b) { return {a.val + b.val, a.tan + b.tan}; }
inline Dual operator-(const Dual& a, const Dual& b) { return {a.val - b.val, a.tan - b.tan}; }
inline Dual operator*(const Dual& a, const Dual& b) {
  return {a.val * b.val, a.tan * b.val + a.val * b.tan};
}
inline Dual operator/(const Dual& a, const Dual& b) {
  const double q = a.val / b.val;
  return {q, (a.tan - q * b.tan) / b.val};
}

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.val);
  return {e, e * a.tan};
}
inline Dual log(const Dual& a) { return {std::log(a.val), a.tan / a.val}; }
inline Dual sqrt(const Dual& a) {
  const double s = std::sqrt(a.val);
  return {s, a.tan / (2.0 * s)};
}
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.val);
  return {t, (1.0 - t * t) * a.tan};
}
inline Dual pow(const Dual& a, double p) {
  const double v = std::pow(a.val, p);
  return {v, p * std::pow(a.val, p - 1.0) * a.tan};
}

inline bool isfinite(const Dual& a) { return std::isfinite(a.val) && std::isfinite(a.tan); }

inline double primal(double x) { return x; }
inline double primal(const Dual& x) { return x.val; }

}  // namespace curvlab
