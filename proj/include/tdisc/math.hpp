#pragma once

// Scalar kernels written once for both eager doubles and tape-tracked Vars.
// The double and Var overloads perform the same floating-point operations in
// the same order, so a recorded computation reproduces its eager value exactly.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>

#include "tdisc/grad.hpp"

namespace tdisc {

template <class T>
concept Scalar = std::same_as<T, double> || std::same_as<T, grad::Var>;

template <class T>
using Vec2 = std::array<T, 2>;

using Point = Vec2<double>;

inline double value_of(double x) { return x; }
inline double value_of(const grad::Var& x) { return x.value(); }

template <class T>
Point value_of(const Vec2<T>& v) {
  return {value_of(v[0]), value_of(v[1])};
}

namespace math {

inline double exp(double x) { return std::exp(x); }
inline double log(double x) {
  if (!(x > 0.0)) throw std::domain_error("log of non-positive value");
  return std::log(x);
}
inline double tanh(double x) { return std::tanh(x); }
inline double sqrt(double x) {
  if (!(x > 0.0)) throw std::domain_error("sqrt of non-positive value");
  return std::sqrt(x);
}
inline double relu(double x) { return x >= 0.0 ? x : 0.0; }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double pow(double x, double p) { return std::pow(x, p); }
inline double max(double a, double b) { return a >= b ? a : b; }
inline double min(double a, double b) { return a <= b ? a : b; }

inline double sum(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  double m = xs[0];
  for (double x : xs) m = x > m ? x : m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

using grad::dot;
using grad::exp;
using grad::log;
using grad::log_sum_exp;
using grad::max;
using grad::min;
using grad::pow;
using grad::relu;
using grad::sigmoid;
using grad::sqrt;
using grad::sum;
using grad::tanh;

template <Scalar T>
T clamp(const T& x, double lo, double hi) {
  // Ties keep x, so the gradient flows through an active bound.
  return max(min(x, T(hi)), T(lo));
}

}  // namespace math
}  // namespace tdisc
