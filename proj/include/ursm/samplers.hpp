#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ursm/common.hpp"
#include "ursm/rng.hpp"

namespace ursm {

// All Bernoulli-logistic conditionals in the model are PG(1, c), so only the
// unit-shape sampler is provided.
namespace detail {

constexpr double kPgTrunc = 0.64;

/// log of the standard normal CDF, stable for very negative arguments.
inline double log_norm_cdf(double x) {
  if (x < -10.0) {
    // Asymptotic: Phi(x) ~ phi(x)/(-x) * (1 - 1/x^2 + 3/x^4)
    const double x2 = x * x;
    return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * kPi)
           + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
  }
  return std::log(0.5 * std::erfc(-x / std::sqrt(2.0)));
}

/// Piecewise coefficients a_n(x) of the alternating series for the
/// Jacobi-type density targeted by the PG(1, z) sampler.
inline double pg_coef(int n, double x) {
  const double k = n + 0.5;
  if (x > kPgTrunc) {
    const double kpi = k * kPi;
    return kpi * std::exp(-0.5 * kpi * kpi * x);
  }
  return kPi * k * std::pow(2.0 / (kPi * x), 1.5) * std::exp(-2.0 * k * k / x);
}

/// Probability of proposing from the exponential tail (vs the truncated
/// inverse-Gaussian body) in the two-piece proposal.
inline double pg_mass_texpon(double z) {
  const double t = kPgTrunc;
  const double fz = kPi * kPi / 8.0 + 0.5 * z * z;
  const double b = std::sqrt(1.0 / t) * (t * z - 1.0);
  const double a = -std::sqrt(1.0 / t) * (t * z + 1.0);
  const double x0 = std::log(fz) + fz * t;
  const double xb = x0 - z + log_norm_cdf(b);
  const double xa = x0 + z + log_norm_cdf(a);
  const double q_over_p = 4.0 / kPi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + q_over_p);
}

/// Inverse-Gaussian(1/z, 1) truncated to (0, kPgTrunc].
inline double pg_rtigauss(RngStream& rng, double z) {
  const double t = kPgTrunc;
  double x = t + 1.0;
  if (t * z < 1.0) {
    // mu > t: rejection from a right-truncated inverse chi-square.
    for (;;) {
      double e1 = rng.exponential();
      double e2 = rng.exponential();
      while (e1 * e1 > 2.0 * e2 / t) {
        e1 = rng.exponential();
        e2 = rng.exponential();
      }
      x = t / ((1.0 + t * e1) * (1.0 + t * e1));
      if (rng.uniform() <= std::exp(-0.5 * z * z * x)) break;
    }
  } else {
    const double mu = 1.0 / z;
    do {
      const double v = rng.normal();
      const double y2 = v * v;
      const double muy = mu * y2;
      x = mu + 0.5 * mu * muy - 0.5 * mu * std::sqrt(4.0 * muy + muy * muy);
      if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
    } while (x > t);
  }
  return x;
}

/// Multinomial draw from unnormalized nonnegative weights, written into a
/// caller-provided buffer. Assumes trusted inputs (wsum = sum of weights > 0).
inline void multinomial_weights_draw(RngStream& rng, std::int64_t trials,
                                     const double* weights, double wsum, int k,
                                     std::int64_t* out) {
  for (int i = 0; i < k; ++i) out[i] = 0;
  std::int64_t remaining = trials;
  double rest = wsum;
  for (int i = 0; i + 1 < k && remaining > 0 && rest > 0.0; ++i) {
    const double p = std::clamp(weights[i] / rest, 0.0, 1.0);
    std::binomial_distribution<std::int64_t> bin(remaining, p);
    out[i] += bin(rng);
    remaining -= out[i];
    rest -= weights[i];
  }
  out[k - 1] += remaining;
}

/// Dirichlet draw into a caller-provided buffer; params assumed positive.
inline void dirichlet_draw_into(RngStream& rng, const double* params, int k,
                                double* out) {
  for (int retry = 0; retry < 100; ++retry) {
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
      out[i] = rng.gamma(params[i]);
      total += out[i];
    }
    if (total > 0.0) {
      for (int i = 0; i < k; ++i) out[i] /= total;
      return;
    }
  }
  throw std::runtime_error("dirichlet_draw: gamma draws underflowed to zero");
}

}  // namespace detail

/// Exact draw from the Polya-Gamma PG(1, c) distribution by alternating-series
/// rejection on the two-piece proposal (exponential tail + truncated
/// inverse-Gaussian body). Mean tanh(c/2) / (2c), value 1/4 at c = 0.
inline double pg_draw(RngStream& rng, double c) {
  if (!std::isfinite(c)) {
    throw std::invalid_argument("pg_draw: tilt must be finite");
  }
  const double z = 0.5 * std::abs(c);
  const double rate = kPi * kPi / 8.0 + 0.5 * z * z;
  const double p_tail = detail::pg_mass_texpon(z);
  for (;;) {
    double x;
    if (rng.uniform() < p_tail) {
      x = detail::kPgTrunc + rng.exponential() / rate;
    } else {
      x = detail::pg_rtigauss(rng, z);
    }
    // Squeeze/accept on the partial sums of the alternating series.
    double s = detail::pg_coef(0, x);
    const double y = rng.uniform() * s;
    int n = 0;
    bool accept = false;
    for (;;) {
      ++n;
      if (n & 1) {
        s -= detail::pg_coef(n, x);
        if (y <= s) {
          accept = true;
          break;
        }
      } else {
        s += detail::pg_coef(n, x);
        if (y > s) break;
      }
      if (n > 1000) {  // series converges in a handful of terms
        accept = true;
        break;
      }
    }
    if (accept) return 0.25 * x;
  }
}

/// Truncated sum-of-gammas representation of PG(1, c); biased low by the
/// dropped tail. Used only to cross-validate the exact sampler.
inline double pg_draw_gamma_series(RngStream& rng, double c, int n_terms = 200) {
  if (!std::isfinite(c)) {
    throw std::invalid_argument("pg_draw_gamma_series: tilt must be finite");
  }
  const double c2 = c * c / (4.0 * kPi * kPi);
  double sum = 0.0;
  for (int k = 1; k <= n_terms; ++k) {
    const double d = (k - 0.5) * (k - 0.5) + c2;
    sum += rng.exponential() / d;
  }
  return sum / (2.0 * kPi * kPi);
}

/// Mean of PG(1, c).
inline double pg_mean(double c) {
  if (std::abs(c) < 1e-8) return 0.25 - c * c / 48.0;
  return std::tanh(0.5 * c) / (2.0 * c);
}

/// Variance of PG(1, c).
inline double pg_variance(double c) {
  if (std::abs(c) < 1e-4) return 1.0 / 24.0;
  const double sech = 1.0 / std::cosh(0.5 * c);
  return sech * sech * (std::sinh(c) - c) / (4.0 * c * c * c);
}

/// Dirichlet draw; params must be strictly positive. Sums to 1 exactly up to
/// the final normalization rounding.
inline Eigen::VectorXd dirichlet_draw(RngStream& rng,
                                      const Eigen::VectorXd& params) {
  const auto k = params.size();
  check(k > 0, "dirichlet_draw: empty parameter vector");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(params[i] > 0.0)) {
      throw std::invalid_argument(
          "dirichlet_draw: parameters must be strictly positive");
    }
  }
  Eigen::VectorXd out(k);
  detail::dirichlet_draw_into(rng, params.data(), static_cast<int>(k),
                              out.data());
  return out;
}

/// Multinomial draw by sequential conditional binomials; components sum to
/// `trials` exactly.
inline Eigen::VectorX<std::int64_t> multinomial_draw(
    RngStream& rng, std::int64_t trials, const Eigen::VectorXd& probs) {
  const auto k = probs.size();
  check(k > 0, "multinomial_draw: empty probability vector");
  check(trials >= 0, "multinomial_draw: negative trial count");
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    check(probs[i] >= 0.0 && std::isfinite(probs[i]),
          "multinomial_draw: probabilities must be finite and nonnegative");
    total += probs[i];
  }
  check(std::abs(total - 1.0) <= 1e-9,
        "multinomial_draw: probabilities must sum to 1");

  Eigen::VectorX<std::int64_t> out(k);
  detail::multinomial_weights_draw(rng, trials, probs.data(), total,
                                   static_cast<int>(k), out.data());
  return out;
}

/// Bivariate normal draw specified by mean and a symmetric positive-definite
/// precision matrix (covariance = precision^{-1}).
inline Eigen::Vector2d mvn2_draw(RngStream& rng, const Eigen::Vector2d& mean,
                                 const Eigen::Matrix2d& precision) {
  check(std::abs(precision(0, 1) - precision(1, 0)) <=
            1e-9 * (1.0 + std::abs(precision(0, 1))),
        "mvn2_draw: precision must be symmetric");
  // Cholesky of the precision: P = L L^T, then x = mean + L^{-T} z.
  const double p00 = precision(0, 0);
  check(p00 > 0.0, "mvn2_draw: precision not positive definite");
  const double l11 = std::sqrt(p00);
  const double l21 = precision(0, 1) / l11;
  const double d = precision(1, 1) - l21 * l21;
  check(d > 0.0, "mvn2_draw: precision not positive definite");
  const double l22 = std::sqrt(d);

  const double z1 = rng.normal();
  const double z2 = rng.normal();
  const double x2 = z2 / l22;
  const double x1 = (z1 - l21 * x2) / l11;
  return mean + Eigen::Vector2d(x1, x2);
}

}  // namespace ursm
