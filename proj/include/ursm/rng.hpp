#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "ursm/common.hpp"

namespace ursm {

/// What a random stream is attached to. Streams for distinct units are
/// statistically independent, so work can be scheduled in any order.
enum class StreamKind : std::uint64_t {
  kGlobal = 1,          // one-off draws
  kSimulate = 4,        // data generation units
  kTest = 5,            // reserved for test code
  kBulkAllocation = 10, // read allocations Ztilde, per bulk sample
  kBulkWeights = 11,    // mixing weights W, per bulk sample
  kCellAux = 12,        // Polya-Gamma auxiliaries, per cell
  kCellCoef = 13,       // dropout coefficients (kappa, tau), per cell
  kCellObs = 14,        // observability indicators S, per cell
};

/// Identifies one logical draw sequence: (unit kind, unit index, sweep index).
struct StreamId {
  StreamKind kind = StreamKind::kGlobal;
  std::uint64_t unit = 0;
  std::uint64_t sweep = 0;
};

namespace detail {

// splitmix64 finalizer (Stafford mix13): full-avalanche 64-bit hash.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-derived random stream. The state is a hash of
/// (master seed, kind, unit, sweep), so identical ids reproduce identical
/// sequences regardless of scheduling, and distinct ids do not collide.
///
/// The generator itself is a splitmix64 sequence, usable directly as a
/// UniformRandomBitGenerator with the std::<distribution> classes.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t master_seed, StreamId id) {
    std::uint64_t h = detail::mix64(master_seed);
    h = detail::mix64(h ^ static_cast<std::uint64_t>(id.kind));
    h = detail::mix64(h ^ id.unit);
    h = detail::mix64(h ^ id.sweep);
    state_ = h;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform draw strictly inside (0, 1).
  double uniform() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (one value per call, no cached spare).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Exponential with unit rate.
  double exponential() { return -std::log(uniform()); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape) {
    if (!(shape > 0.0)) {
      throw std::invalid_argument("gamma: shape must be positive");
    }
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace ursm
