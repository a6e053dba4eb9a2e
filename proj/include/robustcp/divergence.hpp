#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "robustcp/scores.hpp"

namespace robustcp {

enum class DivergenceKind { ChiSquare, KullbackLeibler, Custom };

/// Convex divergence generator f with f(1) = 0 and superlinear growth,
/// defining D_f(Q||P) = E_P[f(dQ/dP)].
///
/// ChiSquare uses f(t) = (t-1)^2 / 2, the normalization under which the
/// worst-case mass below has the closed form (beta - sqrt(2 rho beta
/// (1-beta)))_+. The Pearson variant (t-1)^2 is reachable through custom().
/// KullbackLeibler uses f(t) = t log t with f(0) = 0.
class DivergenceSpec {
 public:
  static DivergenceSpec chi_square() {
    return DivergenceSpec(DivergenceKind::ChiSquare, "chi2",
                          [](double t) { return 0.5 * (t - 1.0) * (t - 1.0); });
  }

  static DivergenceSpec kullback_leibler() {
    return DivergenceSpec(DivergenceKind::KullbackLeibler, "kl",
                          [](double t) { return t <= 0.0 ? 0.0 : t * std::log(t); });
  }

  static DivergenceSpec custom(std::string name, std::function<double(double)> generator) {
    return DivergenceSpec(DivergenceKind::Custom, std::move(name), std::move(generator));
  }

  DivergenceKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  /// Generator value f(t), t >= 0.
  double operator()(double t) const { return generator_(t); }

 private:
  DivergenceSpec(DivergenceKind kind, std::string name, std::function<double(double)> generator)
      : kind_(kind), name_(std::move(name)), generator_(std::move(generator)) {
    if (!generator_) throw std::invalid_argument("divergence generator must be callable");
    validate();
  }

  // Probe-grid validation: f(1) = 0, midpoint convexity on {0.05, ..., 20},
  // superlinear growth between t = 1e3 and t = 1e6.
  void validate() const {
    if (std::fabs(generator_(1.0)) > 1e-12) {
      throw std::invalid_argument("divergence generator must satisfy f(1) = 0");
    }
    constexpr double step = 0.05;
    const int points = 400;
    for (int i = 1; i <= points; ++i) {
      const double a = step * i;
      const double fa = generator_(a);
      if (!std::isfinite(fa)) throw std::invalid_argument("divergence generator must be finite on the probe grid");
      for (int j = i; j <= points; ++j) {
        const double b = step * j;
        const double mid = generator_(0.5 * (a + b));
        if (mid > 0.5 * (fa + generator_(b)) + 1e-9) {
          throw std::invalid_argument("divergence generator failed the convexity probe");
        }
      }
    }
    if (!(generator_(1e6) / 1e6 > generator_(1e3) / 1e3)) {
      throw std::invalid_argument("divergence generator failed the coercivity probe");
    }
  }

  DivergenceKind kind_;
  std::string name_;
  std::function<double(double)> generator_;
};

namespace detail {

inline void check_unit_interval(double x, const char* what) {
  if (!(x >= 0.0) || !(x <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
}

inline void check_radius(double rho) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw std::invalid_argument("rho must be finite and nonnegative");
}

}  // namespace detail

/// Divergence of the two-point reweighting (z, 1-z) against (beta, 1-beta):
/// beta f(z/beta) + (1-beta) f((1-z)/(1-beta)), with the conventions
/// 0 * f(0/0) = 0 and 0 * f(c/0) = +infinity for c > 0.
inline double two_point_divergence(const DivergenceSpec& f, double beta, double z) {
  detail::check_unit_interval(beta, "beta");
  detail::check_unit_interval(z, "z");
  const auto term = [&f](double mass, double prob) {
    if (mass == 0.0) return prob == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return mass * f(prob / mass);
  };
  return term(beta, z) + term(1.0 - beta, 1.0 - z);
}

/// Smallest probability a set of P-mass beta can receive under any
/// distribution within f-divergence rho of P. Bisection on the two-point
/// reweighting to absolute tolerance 1e-10; returns the feasible endpoint, so
/// the result always satisfies the divergence constraint.
inline double worst_case_mass(const DivergenceSpec& f, double rho, double beta) {
  detail::check_radius(rho);
  detail::check_unit_interval(beta, "beta");
  if (beta == 0.0) return 0.0;
  if (beta == 1.0) return 1.0;
  if (two_point_divergence(f, beta, 0.0) <= rho) return 0.0;
  double lo = 0.0;
  double hi = beta;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (two_point_divergence(f, beta, mid) <= rho) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

/// Largest nominal mass beta in [tau, 1] that can be deflated to tau within
/// divergence rho; the inflated quantile level satisfying
/// WorstCaseQuantile(tau; P) = Quantile(worst_case_mass_inverse(tau); P).
/// Bisection to absolute tolerance 1e-10, rounded down so the returned level
/// is always feasible.
inline double worst_case_mass_inverse(const DivergenceSpec& f, double rho, double tau) {
  detail::check_radius(rho);
  detail::check_unit_interval(tau, "tau");
  if (tau == 1.0) return 1.0;
  if (two_point_divergence(f, 1.0, tau) <= rho) return 1.0;
  double lo = tau;
  double hi = 1.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (two_point_divergence(f, mid, tau) <= rho) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

/// Worst-case CDF at t over the divergence ball around the empirical score
/// distribution: worst_case_mass applied to the empirical CDF.
inline double worst_case_cdf(const DivergenceSpec& f, double rho, const EmpiricalScores& scores,
                             double t) {
  return worst_case_mass(f, rho, scores.cdf(t));
}

inline constexpr double kRadiusCap = 1e6;

/// Result of inverting the worst-case quantile in the radius.
struct ThresholdRadius {
  double rho = 0.0;
  bool saturated = false;           // q at or above the max score: capped at kRadiusCap
  bool infeasible_at_zero = false;  // q below the plain (1-alpha) quantile
};

/// Largest radius rho at which the worst-case (1-alpha)-quantile of the
/// scores stays <= q. Bracketed doubling plus bisection to 1e-9 relative
/// tolerance, rounded down so the returned radius is feasible.
inline ThresholdRadius radius_for_threshold(const DivergenceSpec& f, double alpha,
                                            const EmpiricalScores& scores, double q) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const double tau = 1.0 - alpha;
  const auto wc_quantile = [&](double rho) {
    return empirical_quantile(scores, worst_case_mass_inverse(f, rho, tau));
  };
  ThresholdRadius out;
  if (q >= scores.max()) {
    out.rho = kRadiusCap;
    out.saturated = true;
    return out;
  }
  if (wc_quantile(0.0) > q) {
    out.infeasible_at_zero = true;
    return out;
  }
  double lo = 0.0;
  double hi = 1.0;
  while (wc_quantile(hi) <= q) {
    lo = hi;
    hi *= 2.0;
    if (hi >= kRadiusCap) {
      out.rho = kRadiusCap;
      out.saturated = true;
      return out;
    }
  }
  while (hi - lo > 1e-9 * std::max(1.0, lo)) {
    const double mid = 0.5 * (lo + hi);
    if (wc_quantile(mid) <= q) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.rho = lo;
  return out;
}

/// Finite-sample lower bound on test coverage for the radius-rho robust
/// threshold calibrated on n scores, when the test distribution sits within
/// radius rho_star of the score distribution.
inline double coverage_lower_bound(const DivergenceSpec& f, double rho, double rho_star,
                                   double alpha, std::size_t n) {
  if (n == 0) throw std::invalid_argument("n must be positive");
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  detail::check_radius(rho_star);
  const double level = worst_case_mass_inverse(f, rho, 1.0 - alpha);
  const double rank = static_cast<double>(quantile_rank(n, level));
  const double arg = std::min(1.0, rank / (static_cast<double>(n) + 1.0));
  return worst_case_mass(f, rho_star, arg);
}

/// Corrected miscoverage level: running the robust threshold at the returned
/// level restores a full 1 - alpha guarantee after the finite-sample rank
/// correction. Clamped to [0, alpha]; the inflated argument is clamped to 1.
inline double corrected_level(const DivergenceSpec& f, double rho, double alpha, std::size_t n) {
  if (n == 0) throw std::invalid_argument("n must be positive");
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const double inflated =
      (1.0 + 1.0 / static_cast<double>(n)) * worst_case_mass_inverse(f, rho, 1.0 - alpha);
  const double alpha_n = 1.0 - worst_case_mass(f, rho, std::min(1.0, inflated));
  return std::clamp(alpha_n, 0.0, alpha);
}

/// First-order coverage gap constant: with matched calibration and test radii
/// the coverage bound reads 1 - alpha - value / (n + 1).
struct CoverageGapConstant {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;  // inflated level leaves no room for the difference step
};

/// Left finite difference (step 1e-6) of the worst-case mass at the inflated
/// level, times the level itself.
inline CoverageGapConstant coverage_gap_constant(const DivergenceSpec& f, double rho,
                                                 double alpha) {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw std::invalid_argument("rho must be positive and finite");
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const double level = worst_case_mass_inverse(f, rho, 1.0 - alpha);
  constexpr double step = 1e-6;
  if (level - step < 0.0) return {std::numeric_limits<double>::quiet_NaN(), true};
  const double slope =
      (worst_case_mass(f, rho, level) - worst_case_mass(f, rho, level - step)) / step;
  return {level * slope, false};
}

/// Divergence radius paired with a miscoverage level.
struct RadiusLevel {
  double rho = 0.0;
  double alpha = 0.05;

  void validate() const {
    detail::check_radius(rho);
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  }
};

}  // namespace robustcp
