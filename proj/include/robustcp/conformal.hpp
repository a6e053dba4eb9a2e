#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

#include "robustcp/divergence.hpp"
#include "robustcp/scores.hpp"

namespace robustcp {

/// Split-conformal threshold: the empirical quantile at the inflated level
/// (1 + 1/n)(1 - alpha). Returns the +infinity sentinel when the inflated
/// rank passes the sample.
inline double split_conformal_threshold(const EmpiricalScores& scores, double alpha) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const double n = static_cast<double>(scores.size());
  return empirical_quantile(scores, (1.0 + 1.0 / n) * (1.0 - alpha));
}

/// One calibrated prediction-set threshold with its provenance.
struct CalibrationResult {
  double threshold = 0.0;        // score-space cutoff; +infinity when the level saturates
  double rho = 0.0;              // divergence radius used
  double alpha = 0.05;           // target miscoverage
  double effective_level = 0.0;  // quantile level applied to the scores
  bool corrected = false;        // finite-sample corrected variant
  std::string divergence;        // generator name
  std::size_t n = 0;             // calibration sample size
};

/// Robust threshold at radius rho: the empirical quantile at the inflated
/// level worst_case_mass_inverse(1 - alpha), or at the corrected level's
/// inflation when corrected is set. At rho = 0 the uncorrected variant is the
/// plain (1 - alpha) quantile and the corrected one lands on the
/// split-conformal rank (clamped to the max score instead of the sentinel).
inline CalibrationResult robust_threshold(const DivergenceSpec& f, const EmpiricalScores& scores,
                                          const RadiusLevel& target, bool corrected = false) {
  target.validate();
  const double alpha_eff =
      corrected ? corrected_level(f, target.rho, target.alpha, scores.size()) : target.alpha;
  const double level = worst_case_mass_inverse(f, target.rho, 1.0 - alpha_eff);
  CalibrationResult out;
  out.threshold = empirical_quantile(scores, level);
  out.rho = target.rho;
  out.alpha = target.alpha;
  out.effective_level = level;
  out.corrected = corrected;
  out.divergence = f.name();
  out.n = scores.size();
  return out;
}

/// Membership test for the prediction set {y : S(x, y) <= threshold}.
inline bool prediction_set_contains(const CalibrationResult& calib, double score) {
  return score <= calib.threshold;
}

/// Fraction of test scores covered by the calibrated set.
inline double empirical_coverage(const CalibrationResult& calib, std::span<const double> test_scores) {
  if (test_scores.empty()) throw std::invalid_argument("test scores must be non-empty");
  std::size_t covered = 0;
  for (double s : test_scores) {
    if (std::isnan(s)) throw std::invalid_argument("test scores must not contain NaN");
    if (prediction_set_contains(calib, s)) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(test_scores.size());
}

/// Coverage bound conditional on the calibrated threshold: the worst-case
/// mass of the event {S <= threshold}, whose probability under the score
/// distribution is f0_cdf_at_threshold, over the radius-rho_star ball.
inline double conditional_coverage_bound(const DivergenceSpec& f, double rho_star,
                                         double f0_cdf_at_threshold) {
  return worst_case_mass(f, rho_star, f0_cdf_at_threshold);
}

}  // namespace robustcp
