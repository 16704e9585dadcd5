#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ursm/rng.hpp"
#include "ursm/samplers.hpp"

using namespace ursm;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double se_mean = 0.0;
  double se_var = 0.0;
};

Moments sample_moments(const std::vector<double>& draws) {
  const double n = static_cast<double>(draws.size());
  Moments m;
  for (double d : draws) m.mean += d;
  m.mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double d : draws) {
    const double c = d - m.mean;
    m2 += c * c;
    m4 += c * c * c * c;
  }
  m2 /= n;
  m4 /= n;
  m.var = m2;
  m.se_mean = std::sqrt(m2 / n);
  m.se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
  return m;
}

}  // namespace

TEST_CASE("streams are reproducible and distinct") {
  RngStream a(123, {StreamKind::kTest, 7, 3});
  RngStream b(123, {StreamKind::kTest, 7, 3});
  for (int i = 0; i < 100; ++i) REQUIRE(a() == b());

  RngStream c(123, {StreamKind::kTest, 8, 3});
  RngStream d(123, {StreamKind::kTest, 7, 4});
  RngStream e(124, {StreamKind::kTest, 7, 3});
  bool all_equal = true;
  RngStream a2(123, {StreamKind::kTest, 7, 3});
  for (int i = 0; i < 16; ++i) {
    const auto ref = a2();
    all_equal = all_equal && (c() == ref) && (d() == ref) && (e() == ref);
  }
  REQUIRE_FALSE(all_equal);
}

TEST_CASE("uniform draws stay strictly inside (0,1)") {
  RngStream rng(5, {StreamKind::kTest, 0, 0});
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("polya-gamma moments match the analytic values") {
  // E = tanh(c/2)/(2c) (1/4 at c=0), Var = sech^2(c/2)(sinh c - c)/(4c^3).
  const int n = 100000;
  int unit = 0;
  for (double c : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    RngStream rng(42, {StreamKind::kTest, static_cast<std::uint64_t>(unit++), 0});
    std::vector<double> draws(n);
    for (double& d : draws) {
      d = pg_draw(rng, c);
      REQUIRE(d > 0.0);
    }
    const Moments m = sample_moments(draws);
    INFO("c = " << c);
    REQUIRE(std::abs(m.mean - pg_mean(c)) < 4.0 * m.se_mean);
    REQUIRE(std::abs(m.var - pg_variance(c)) < 4.0 * m.se_var);
  }
}

TEST_CASE("polya-gamma mean at c=0 and c=2 (spec values)") {
  REQUIRE(pg_mean(0.0) == Catch::Approx(0.25));
  REQUIRE(pg_mean(2.0) == Catch::Approx(std::tanh(1.0) / 4.0));
  REQUIRE(pg_variance(0.0) == Catch::Approx(1.0 / 24.0));
}

TEST_CASE("gamma-series fallback agrees with the exact sampler") {
  const int n = 50000;
  for (double c : {0.0, 1.5}) {
    RngStream rng(7, {StreamKind::kTest, 99, static_cast<std::uint64_t>(c * 2)});
    std::vector<double> exact(n), series(n);
    for (int i = 0; i < n; ++i) exact[i] = pg_draw(rng, c);
    for (int i = 0; i < n; ++i) series[i] = pg_draw_gamma_series(rng, c);
    const Moments me = sample_moments(exact);
    const Moments ms = sample_moments(series);
    // The 200-term series is biased low by the dropped tail (~1e-4); both
    // must sit within a few standard errors of each other.
    REQUIRE(std::abs(me.mean - ms.mean) <
            4.0 * std::sqrt(me.se_mean * me.se_mean + ms.se_mean * ms.se_mean) +
                3e-4);
  }
}

TEST_CASE("pg_draw rejects non-finite tilt") {
  RngStream rng(1, {StreamKind::kTest, 0, 0});
  REQUIRE_THROWS_AS(pg_draw(rng, std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
}

TEST_CASE("dirichlet draws live on the simplex with the right means") {
  RngStream rng(11, {StreamKind::kTest, 1, 0});
  const int n = 100000;

  SECTION("symmetric (1,1,1)") {
    Eigen::VectorXd params = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd d = dirichlet_draw(rng, params);
      REQUIRE(d.minCoeff() >= 0.0);
      REQUIRE(std::abs(d.sum() - 1.0) < 1e-12);
      mean += d;
    }
    mean /= n;
    // Var of each component = (1/3)(2/3)/4 = 1/18.
    const double se = std::sqrt((1.0 / 18.0) / n);
    for (int k = 0; k < 3; ++k) {
      REQUIRE(std::abs(mean[k] - 1.0 / 3.0) < 3.0 * se);
    }
  }

  SECTION("asymmetric (4,2) has mean (2/3, 1/3)") {
    Eigen::VectorXd params(2);
    params << 4.0, 2.0;
    double mean0 = 0.0;
    for (int i = 0; i < n; ++i) mean0 += dirichlet_draw(rng, params)[0];
    mean0 /= n;
    const double var0 = (2.0 / 3.0) * (1.0 / 3.0) / 7.0;
    REQUIRE(std::abs(mean0 - 2.0 / 3.0) < 3.0 * std::sqrt(var0 / n));
  }

  SECTION("nonpositive parameter is rejected") {
    Eigen::VectorXd params(2);
    params << 1.0, 0.0;
    REQUIRE_THROWS_AS(dirichlet_draw(rng, params), std::invalid_argument);
  }
}

TEST_CASE("multinomial draws preserve the trial count") {
  RngStream rng(13, {StreamKind::kTest, 2, 0});

  SECTION("zero trials") {
    Eigen::VectorXd probs(3);
    probs << 0.2, 0.3, 0.5;
    const auto d = multinomial_draw(rng, 0, probs);
    REQUIRE(d.sum() == 0);
  }

  SECTION("degenerate probabilities") {
    Eigen::VectorXd probs(2);
    probs << 1.0, 0.0;
    const auto d = multinomial_draw(rng, 5, probs);
    REQUIRE(d[0] == 5);
    REQUIRE(d[1] == 0);
  }

  SECTION("binomial mean at n = 1e5") {
    Eigen::VectorXd probs(2);
    probs << 0.2, 0.8;
    const auto d = multinomial_draw(rng, 100000, probs);
    REQUIRE(d.sum() == 100000);
    const double se = std::sqrt(100000 * 0.2 * 0.8);
    REQUIRE(std::abs(static_cast<double>(d[0]) - 20000.0) < 3.0 * se);
  }

  SECTION("domain errors") {
    Eigen::VectorXd probs(2);
    probs << 0.2, 0.8;
    REQUIRE_THROWS_AS(multinomial_draw(rng, -1, probs), std::invalid_argument);
    Eigen::VectorXd bad(2);
    bad << 0.2, 0.3;
    REQUIRE_THROWS_AS(multinomial_draw(rng, 10, bad), std::invalid_argument);
  }
}

TEST_CASE("bivariate normal draws match mean and covariance") {
  const int n = 100000;

  SECTION("identity precision") {
    RngStream rng(17, {StreamKind::kTest, 3, 0});
    Eigen::Vector2d mean(0.0, 0.0);
    Eigen::Matrix2d prec = Eigen::Matrix2d::Identity();
    double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d d = mvn2_draw(rng, mean, prec);
      s1 += d[0];
      s2 += d[1];
      s11 += d[0] * d[0];
      s22 += d[1] * d[1];
      s12 += d[0] * d[1];
    }
    const double se_mean = std::sqrt(1.0 / n);
    const double se_cov = std::sqrt(2.0 / n);  // var of x^2 for unit normal
    REQUIRE(std::abs(s1 / n) < 3.0 * se_mean);
    REQUIRE(std::abs(s2 / n) < 3.0 * se_mean);
    REQUIRE(std::abs(s11 / n - 1.0) < 3.0 * se_cov);
    REQUIRE(std::abs(s22 / n - 1.0) < 3.0 * se_cov);
    REQUIRE(std::abs(s12 / n) < 3.0 * se_mean);
  }

  SECTION("conditional-posterior instance: mean (1/6, 1/6), precision [[2,1],[1,2]]") {
    RngStream rng(17, {StreamKind::kTest, 4, 0});
    Eigen::Vector2d mean(1.0 / 6.0, 1.0 / 6.0);
    Eigen::Matrix2d prec;
    prec << 2.0, 1.0, 1.0, 2.0;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    for (int i = 0; i < n; ++i) sum += mvn2_draw(rng, mean, prec);
    // Covariance = prec^{-1} has diagonal 2/3.
    const double se = std::sqrt((2.0 / 3.0) / n);
    REQUIRE(std::abs(sum[0] / n - 1.0 / 6.0) < 3.0 * se);
    REQUIRE(std::abs(sum[1] / n - 1.0 / 6.0) < 3.0 * se);
  }

  SECTION("indefinite precision is rejected") {
    RngStream rng(17, {StreamKind::kTest, 5, 0});
    Eigen::Matrix2d prec;
    prec << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3, -1
    REQUIRE_THROWS_AS(mvn2_draw(rng, Eigen::Vector2d::Zero(), prec),
                      std::invalid_argument);
  }
}
