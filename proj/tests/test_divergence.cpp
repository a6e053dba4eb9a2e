#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "robustcp/divergence.hpp"
#include "robustcp/random.hpp"
#include "robustcp/scores.hpp"

using namespace robustcp;

namespace {

double chi_square_closed_form(double rho, double beta) {
  const double v = beta - std::sqrt(2.0 * rho * beta * (1.0 - beta));
  return std::max(v, 0.0);
}

// Independent oracle: scan z upward on a fine grid and report the first
// feasible point of the two-point problem.
double grid_search_mass(const DivergenceSpec& f, double rho, double beta, double step) {
  for (double z = 0.0; z <= beta + step; z += step) {
    const double zc = std::min(z, beta);
    if (two_point_divergence(f, beta, zc) <= rho) return zc;
    if (zc == beta) break;
  }
  return beta;
}

}  // namespace

TEST_CASE("two-point divergence boundary conventions") {
  const DivergenceSpec f = DivergenceSpec::chi_square();
  CHECK(two_point_divergence(f, 0.0, 0.0) == 0.0);
  CHECK(std::isinf(two_point_divergence(f, 0.0, 0.5)));
  CHECK(two_point_divergence(f, 1.0, 1.0) == 0.0);
  CHECK(two_point_divergence(f, 0.5, 0.5) == Catch::Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(two_point_divergence(f, -0.1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(two_point_divergence(f, 0.5, 1.2), std::invalid_argument);
  // Reweighting (0.6, 0.4) against (0.5, 0.5): 0.5 f(1.2) + 0.5 f(0.8).
  CHECK(two_point_divergence(f, 0.5, 0.6) == Catch::Approx(0.02).margin(1e-15));
}

TEST_CASE("worst-case mass matches the chi-square closed form") {
  const DivergenceSpec f = DivergenceSpec::chi_square();

  SECTION("worked value at rho 0.5, beta 0.95") {
    const double direct = worst_case_mass(f, 0.5, 0.95);
    CHECK(direct == Catch::Approx(chi_square_closed_form(0.5, 0.95)).margin(1e-8));
    const double oracle = grid_search_mass(f, 0.5, 0.95, 1e-7);
    CHECK(direct == Catch::Approx(oracle).margin(1e-6));
  }

  SECTION("beta 0 maps to 0") {
    CHECK(worst_case_mass(f, 0.3, 0.0) == 0.0);
    CHECK(worst_case_mass(DivergenceSpec::kullback_leibler(), 0.3, 0.0) == 0.0);
  }

  SECTION("grid agreement") {
    for (double rho : {1e-4, 0.01, 0.1, 0.5, 1.0, 5.0}) {
      for (int i = 0; i <= 100; ++i) {
        const double beta = i / 100.0;
        CHECK(worst_case_mass(f, rho, beta) ==
              Catch::Approx(chi_square_closed_form(rho, beta)).margin(1e-8));
      }
    }
  }
}

TEST_CASE("worst-case mass for KL agrees with a grid oracle") {
  const DivergenceSpec f = DivergenceSpec::kullback_leibler();
  const double oracle = grid_search_mass(f, 0.1, 0.9, 1e-7);
  CHECK(worst_case_mass(f, 0.1, 0.9) == Catch::Approx(oracle).margin(1e-6));
}

TEST_CASE("worst-case mass inverse") {
  const DivergenceSpec chi2 = DivergenceSpec::chi_square();

  SECTION("rho 0 is the identity") {
    CHECK(worst_case_mass_inverse(chi2, 0.0, 0.95) == 0.95);
  }

  SECTION("round trip recovers the original level") {
    const double tau = worst_case_mass(chi2, 0.5, 0.95);
    CHECK(worst_case_mass_inverse(chi2, 0.5, tau) == Catch::Approx(0.95).margin(1e-6));
  }

  SECTION("tau 1 maps to 1") {
    CHECK(worst_case_mass_inverse(chi2, 0.7, 1.0) == 1.0);
    CHECK(worst_case_mass_inverse(DivergenceSpec::kullback_leibler(), 2.0, 1.0) == 1.0);
  }
}

TEST_CASE("mass and inverse satisfy the duality biconditional") {
  for (const DivergenceSpec& f :
       {DivergenceSpec::chi_square(), DivergenceSpec::kullback_leibler()}) {
    for (double rho : {0.01, 0.25, 1.0}) {
      std::vector<double> g_tau(26), ginv_beta(26);
      for (int i = 0; i <= 25; ++i) g_tau[i] = worst_case_mass(f, rho, i / 25.0);
      for (int j = 0; j <= 25; ++j) ginv_beta[j] = worst_case_mass_inverse(f, rho, j / 25.0);
      for (int i = 0; i <= 25; ++i) {
        const double tau = i / 25.0;
        for (int j = 1; j < 25; ++j) {
          const double beta = j / 25.0;
          if (g_tau[i] >= beta + 1e-8) CHECK(ginv_beta[j] <= tau + 1e-8);
          if (ginv_beta[j] <= tau - 1e-8) CHECK(g_tau[i] >= beta - 1e-8);
        }
      }
    }
  }
}

TEST_CASE("worst-case mass structural properties") {
  for (const DivergenceSpec& f :
       {DivergenceSpec::chi_square(), DivergenceSpec::kullback_leibler()}) {
    for (double rho : {0.01, 0.1, 1.0}) {
      double prev = -1.0;
      for (int i = 0; i <= 40; ++i) {
        const double beta = i / 40.0;
        const double g = worst_case_mass(f, rho, beta);
        CHECK(g <= beta + 1e-12);
        CHECK(g >= prev - 1e-9);
        prev = g;
      }
      CHECK(worst_case_mass(f, rho, 0.0) == 0.0);
      CHECK(worst_case_mass(f, rho, 1.0) == Catch::Approx(1.0).margin(1e-9));
    }
    for (int i = 1; i < 20; ++i) {
      const double beta = i / 20.0;
      CHECK(worst_case_mass(f, 0.5, beta) <= worst_case_mass(f, 0.05, beta) + 1e-9);
      // Midpoint convexity in beta at fixed rho.
      const double lo = std::max(beta - 0.05, 0.0);
      const double hi = std::min(beta + 0.05, 1.0);
      const double mid = worst_case_mass(f, 0.25, 0.5 * (lo + hi));
      CHECK(mid <= 0.5 * (worst_case_mass(f, 0.25, lo) + worst_case_mass(f, 0.25, hi)) + 1e-8);
    }
  }
}

TEST_CASE("worst-case cdf") {
  const DivergenceSpec chi2 = DivergenceSpec::chi_square();

  SECTION("rho 0 reproduces the empirical cdf") {
    const EmpiricalScores scores({0.3, 0.9, 0.1, 0.5});
    for (double t : {0.05, 0.1, 0.2, 0.5, 0.7, 0.9, 1.5}) {
      CHECK(worst_case_cdf(chi2, 0.0, scores, t) == scores.cdf(t));
    }
  }

  SECTION("below the minimum the bound is 0") {
    const EmpiricalScores scores({1.0, 2.0});
    CHECK(worst_case_cdf(chi2, 0.5, scores, 0.5) == 0.0);
  }

  SECTION("worked value") {
    const EmpiricalScores scores({1.0, 2.0, 3.0, 4.0});
    CHECK(worst_case_cdf(chi2, 0.125, scores, 2.0) == Catch::Approx(0.25).margin(1e-8));
  }

  SECTION("lower bounds every reweighted cdf with matching divergence budget") {
    std::mt19937_64 gen(404);
    std::vector<double> scores(30);
    for (double& s : scores) s = uniform01(gen);
    const EmpiricalScores emp(scores);
    const std::size_t n = scores.size();
    for (const DivergenceSpec& f :
         {DivergenceSpec::chi_square(), DivergenceSpec::kullback_leibler()}) {
      for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> p(n);
        double total = 0.0;
        for (double& w : p) {
          w = std::exp(0.3 * standard_normal(gen));
          total += w;
        }
        for (double& w : p) w /= total;
        double rho = 0.0;
        for (double w : p) rho += f(static_cast<double>(n) * w);
        rho /= static_cast<double>(n);
        for (double s : scores) {
          double tilted = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            if (scores[i] <= s) tilted += p[i];
          CHECK(tilted >= worst_case_cdf(f, rho, emp, s) - 1e-8);
        }
      }
    }
  }
}

TEST_CASE("radius for a target threshold") {
  const DivergenceSpec chi2 = DivergenceSpec::chi_square();
  std::vector<double> ladder(100);
  for (int i = 0; i < 100; ++i) ladder[i] = i + 1.0;
  const EmpiricalScores scores(ladder);

  SECTION("threshold at the plain quantile leaves no slack") {
    const ThresholdRadius r = radius_for_threshold(chi2, 0.05, scores, 95.0);
    CHECK_FALSE(r.saturated);
    CHECK_FALSE(r.infeasible_at_zero);
    CHECK(r.rho <= 1e-8);
  }

  SECTION("threshold one step up fills the quantile step exactly") {
    const ThresholdRadius r = radius_for_threshold(chi2, 0.05, scores, 96.0);
    CHECK_FALSE(r.saturated);
    const double level = worst_case_mass_inverse(chi2, r.rho, 0.95);
    CHECK(quantile_rank(100, level) == 96);
    CHECK(empirical_quantile(scores, level) == 96.0);
    // Closed form: the largest feasible radius solves g_inverse = 0.96.
    const double rho_star = 1e-4 / (2.0 * 0.96 * 0.04);
    CHECK(r.rho == Catch::Approx(rho_star).epsilon(1e-5));
    const double bumped = worst_case_mass_inverse(chi2, r.rho * (1.0 + 1e-5) + 1e-12, 0.95);
    CHECK(quantile_rank(100, bumped) > 96);
  }

  SECTION("threshold at or above the maximum saturates") {
    CHECK(radius_for_threshold(chi2, 0.05, scores, 100.0).saturated);
    CHECK(radius_for_threshold(chi2, 0.05, scores, 150.0).saturated);
    CHECK(radius_for_threshold(chi2, 0.05, scores, 100.0).rho == kRadiusCap);
  }

  SECTION("threshold below the plain quantile is infeasible at rho 0") {
    const ThresholdRadius r = radius_for_threshold(chi2, 0.05, scores, 50.0);
    CHECK(r.infeasible_at_zero);
    CHECK(r.rho == 0.0);
  }

  SECTION("uniform draws land on the cdf step containing the threshold") {
    std::mt19937_64 gen(7);
    std::vector<double> draws(100);
    for (double& s : draws) s = uniform01(gen);
    const EmpiricalScores emp(draws);
    const double q = 0.97;
    REQUIRE(q < emp.max());
    REQUIRE(q > emp.min());
    const ThresholdRadius r = radius_for_threshold(chi2, 0.1, emp, q);
    REQUIRE_FALSE(r.saturated);
    const double level = worst_case_mass_inverse(chi2, r.rho, 0.9);
    const double reached = empirical_quantile(emp, level);
    CHECK(reached <= q);
    // Largest score not exceeding the threshold.
    double step_value = emp.min();
    for (std::size_t i = 0; i < emp.size(); ++i)
      if (emp.sorted()[i] <= q) step_value = emp.sorted()[i];
    CHECK(reached == step_value);
  }
}

TEST_CASE("coverage lower bound") {
  const DivergenceSpec chi2 = DivergenceSpec::chi_square();

  SECTION("no test shift reduces to the rank ratio") {
    const double b = coverage_lower_bound(chi2, 0.0, 0.0, 0.05, 99);
    CHECK(b == Catch::Approx(95.0 / 100.0).margin(1e-12));
  }

  SECTION("matched radii keep validity at finite n") {
    const double b = coverage_lower_bound(chi2, 0.1, 0.1, 0.1, 1000);
    const CoverageGapConstant c = coverage_gap_constant(chi2, 0.1, 0.1);
    REQUIRE_FALSE(c.degenerate);
    CHECK(b >= 1.0 - 0.1 - c.value / 1001.0 - 1e-9);
  }
}

TEST_CASE("corrected level") {
  const DivergenceSpec chi2 = DivergenceSpec::chi_square();

  SECTION("rho 0 reproduces the finite-sample inflation") {
    const double a = corrected_level(chi2, 0.0, 0.05, 99);
    CHECK(a == Catch::Approx(1.0 - (1.0 + 1.0 / 99.0) * 0.95).margin(1e-9));
  }

  SECTION("large n recovers alpha") {
    const double a = corrected_level(chi2, 0.0, 0.05, 1000000000);
    CHECK(a == Catch::Approx(0.05).margin(1e-6));
  }

  SECTION("positive radius tightens the level") {
    const double a = corrected_level(chi2, 0.1, 0.1, 500);
    CHECK(a > 0.0);
    CHECK(a < 0.1);
  }

  SECTION("round trip through the inverse") {
    for (double rho : {0.05, 0.1}) {
      const double alpha = 0.1;
      const std::size_t n = 500;
      const double a_n = corrected_level(chi2, rho, alpha, n);
      const double inflated =
          (1.0 + 1.0 / static_cast<double>(n)) * worst_case_mass_inverse(chi2, rho, 1.0 - alpha);
      REQUIRE(inflated < 1.0);
      CHECK(worst_case_mass_inverse(chi2, rho, 1.0 - a_n) ==
            Catch::Approx(inflated).margin(1e-8));
    }
  }
}

TEST_CASE("coverage gap constant") {
  const DivergenceSpec chi2 = DivergenceSpec::chi_square();

  SECTION("finite positive value with a stable finite difference") {
    const CoverageGapConstant c = coverage_gap_constant(chi2, 0.5, 0.05);
    REQUIRE_FALSE(c.degenerate);
    CHECK(c.value > 0.0);
    // Recompute with the production step and a halved step; the derivative
    // estimate must be stable.
    const double level = worst_case_mass_inverse(chi2, 0.5, 0.95);
    auto estimate = [&](double step) {
      const double slope =
          (worst_case_mass(chi2, 0.5, level) - worst_case_mass(chi2, 0.5, level - step)) / step;
      return level * slope;
    };
    const double at_1e6 = estimate(1e-6);
    const double at_5e7 = estimate(5e-7);
    CHECK(std::abs(at_1e6 - at_5e7) / at_1e6 < 1e-3);
    CHECK(c.value == Catch::Approx(at_1e6).margin(1e-9));
  }

  SECTION("vanishing radius approaches one minus alpha") {
    const CoverageGapConstant c = coverage_gap_constant(chi2, 1e-8, 0.05);
    REQUIRE_FALSE(c.degenerate);
    CHECK(c.value == Catch::Approx(0.95).margin(1e-3));
  }

  SECTION("composition at alpha one half") {
    const CoverageGapConstant c = coverage_gap_constant(chi2, 0.125, 0.5);
    REQUIRE_FALSE(c.degenerate);
    const double level = worst_case_mass_inverse(chi2, 0.125, 0.5);
    CHECK(worst_case_mass(chi2, 0.125, level) == Catch::Approx(0.5).margin(1e-8));
    const double slope =
        (worst_case_mass(chi2, 0.125, level) - worst_case_mass(chi2, 0.125, level - 1e-6)) / 1e-6;
    CHECK(c.value == Catch::Approx(level * slope).margin(1e-9));
  }

  SECTION("rho 0 is rejected") {
    CHECK_THROWS_AS(coverage_gap_constant(chi2, 0.0, 0.05), std::invalid_argument);
  }

  SECTION("degenerate flag when the level collapses onto the step") {
    const DivergenceSpec steep =
        DivergenceSpec::custom("steep", [](double t) { return 1e8 * 0.5 * (t - 1.0) * (t - 1.0); });
    const CoverageGapConstant c = coverage_gap_constant(steep, 1e-4, 1.0 - 1e-7);
    CHECK(c.degenerate);
  }
}

TEST_CASE("divergence spec validation") {
  SECTION("custom generators must vanish at one") {
    CHECK_THROWS_AS(DivergenceSpec::custom("offset", [](double t) { return t; }),
                    std::invalid_argument);
  }

  SECTION("custom generators must be convex") {
    CHECK_THROWS_AS(
        DivergenceSpec::custom("concave", [](double t) { return -(t - 1.0) * (t - 1.0); }),
        std::invalid_argument);
  }

  SECTION("custom generators must grow superlinearly") {
    CHECK_THROWS_AS(DivergenceSpec::custom("flat", [](double) { return 0.0; }),
                    std::invalid_argument);
  }

  SECTION("pearson scaling is accepted") {
    const DivergenceSpec pearson =
        DivergenceSpec::custom("pearson", [](double t) { return (t - 1.0) * (t - 1.0); });
    CHECK(pearson(2.0) == 1.0);
  }

  SECTION("invalid radius or level arguments throw") {
    const DivergenceSpec f = DivergenceSpec::chi_square();
    CHECK_THROWS_AS(worst_case_mass(f, -1.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(worst_case_mass(f, 0.1, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(worst_case_mass_inverse(f, 0.1, -0.1), std::invalid_argument);
    CHECK_THROWS_AS((RadiusLevel{0.1, 1.5}.validate()), std::invalid_argument);
  }
}
