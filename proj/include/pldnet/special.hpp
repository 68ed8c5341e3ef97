#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "pldnet/error.hpp"

namespace pldnet {

// Exponential integral E1(x) = int_x^inf exp(-t)/t dt for x > 0.
// Power series below 1, modified Lentz continued fraction above.
inline double expint_e1(double x) {
  if (!(x > 0.0)) {
    if (x == 0.0) return std::numeric_limits<double>::infinity();
    throw InvalidInput("expint_e1: argument must be positive");
  }
  if (x < 1.0) {
    double sum = 0.0;
    double term = 1.0;
    for (int k = 1; k < 200; ++k) {
      term *= -x / static_cast<double>(k);
      const double add = term / static_cast<double>(k);
      sum += add;
      if (std::abs(add) < 1e-17 * std::abs(sum)) break;
    }
    return -std::numbers::egamma - std::log(x) - sum;
  }
  constexpr double tiny = 1e-300;
  double b = x + 1.0;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double a = -static_cast<double>(i) * static_cast<double>(i);
    b += 2.0;
    d = 1.0 / (a * d + b);
    c = b + a / c;
    const double del = c * d;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x);
}

}  // namespace pldnet
