#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ursm {

inline constexpr const char* kVersion = "0.1.0";

constexpr double kPi = 3.14159265358979323846;

/// Numerically stable logistic function 1 / (1 + exp(-x)).
inline double logistic(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of the logistic function; p must lie in (0, 1).
inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("logit: argument must be in (0, 1)");
  }
  return std::log(p / (1.0 - p));
}

/// Digamma function via recurrence + asymptotic series.
/// Accurate to ~1e-12 for x >= 1e-3 (arguments below that are shifted up).
inline double digamma(double x) {
  if (!(x > 0.0)) {
    throw std::invalid_argument("digamma: argument must be positive");
  }
  double result = 0.0;
  // Shift to x >= 6 where the asymptotic expansion converges fast.
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // log(x) - 1/(2x) - sum B_{2n} / (2n x^{2n})
  result += std::log(x) - 0.5 * inv
            - inv2 * (1.0 / 12.0
                      - inv2 * (1.0 / 120.0
                                - inv2 * (1.0 / 252.0
                                          - inv2 * (1.0 / 240.0
                                                    - inv2 * (1.0 / 132.0)))));
  return result;
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) {
    throw std::invalid_argument(msg);
  }
}

inline bool nearly_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol;
}

}  // namespace ursm
