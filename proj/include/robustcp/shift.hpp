#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "robustcp/dataset.hpp"
#include "robustcp/divergence.hpp"
#include "robustcp/errors.hpp"
#include "robustcp/linalg.hpp"
#include "robustcp/random.hpp"
#include "robustcp/scores.hpp"
#include "robustcp/worst_coverage.hpp"

namespace robustcp {

/// Sampled-direction shift estimation: protect against the worst region of
/// mass delta along most of k random directions.
struct SamplingConfig {
  std::size_t k = 100;
  double level_v = 0.05;  // tolerated fraction of unprotected directions
  double delta = 0.1;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  RegionFamily family = RegionFamily::Slab;

  void validate() const {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (!(level_v > 0.0) || !(level_v < 1.0)) {
      throw std::invalid_argument("level_v must lie in (0, 1)");
    }
    if (!(delta > 0.0) || !(delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  }
};

/// Fitted-direction shift estimation: learn the direction on one half of the
/// sample, calibrate the threshold and radius on the other.
struct DirectionFitConfig {
  double split_fraction = 0.5;
  double delta = 0.1;
  double alpha = 0.1;
  double ridge = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(split_fraction > 0.0) || !(split_fraction < 1.0)) {
      throw std::invalid_argument("split_fraction must lie in (0, 1)");
    }
    if (!(delta > 0.0) || !(delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (!(ridge >= 0.0)) throw std::invalid_argument("ridge must be nonnegative");
  }
};

struct ShiftEstimate {
  double q_hat = 0.0;
  double rho_hat = 0.0;
  bool rho_saturated = false;
  bool rho_infeasible = false;
  std::vector<double> direction;                // unit norm, fitted-direction paths only
  std::vector<double> per_direction_quantiles;  // sampled path only, one per direction
};

/// k directions drawn i.i.d. uniformly on the unit sphere in d dimensions.
inline std::vector<std::vector<double>> sample_unit_directions(std::size_t d, std::size_t k,
                                                               std::uint64_t seed) {
  if (d < 1 || k < 1) throw std::invalid_argument("d and k must be at least 1");
  std::mt19937_64 gen(seed);
  std::vector<std::vector<double>> out;
  out.reserve(k);
  while (out.size() < k) {
    std::vector<double> v(d);
    for (double& x : v) x = standard_normal(gen);
    if (linalg::normalize(v)) out.push_back(std::move(v));
  }
  return out;
}

namespace detail {

inline ShiftEstimate finish_estimate(const DivergenceSpec& div, double alpha,
                                     const EmpiricalScores& scores, double q_hat) {
  ShiftEstimate est;
  est.q_hat = q_hat;
  const ThresholdRadius tr = radius_for_threshold(div, alpha, scores, q_hat);
  est.rho_hat = tr.rho;
  est.rho_saturated = tr.saturated;
  est.rho_infeasible = tr.infeasible_at_zero;
  return est;
}

/// Shuffled row split: first n1 indices train the direction, the rest
/// calibrate. Deterministic in the seed.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double split_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 gen(seed);
  shuffle_pinned(idx, gen);
  auto n1 = static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(n)));
  n1 = std::clamp<std::size_t>(n1, 1, n - 1);
  std::vector<std::size_t> fit(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n1));
  std::vector<std::size_t> cal(idx.begin() + static_cast<std::ptrdiff_t>(n1), idx.end());
  return {std::move(fit), std::move(cal)};
}

inline TabularDataset subset(const TabularDataset& data, const std::vector<std::size_t>& rows) {
  const std::size_t d = data.dim();
  std::vector<double> feats;
  feats.reserve(rows.size() * d);
  std::vector<double> scs;
  scs.reserve(rows.size());
  for (const std::size_t r : rows) {
    const auto row = data.row(r);
    feats.insert(feats.end(), row.begin(), row.end());
    scs.push_back(data.scores()[r]);
  }
  return TabularDataset(std::move(feats), d, std::move(scs));
}

/// Calibration shared by the fitted-direction estimators: worst quantile
/// along the fitted halfspace direction on the held-out rows, then the
/// matching radius on the held-out scores.
inline ShiftEstimate calibrate_direction(const TabularDataset& held_out,
                                         std::vector<double> direction,
                                         const DirectionFitConfig& cfg,
                                         const DivergenceSpec& div) {
  RegionQuery query;
  query.family = RegionFamily::Halfspace;
  query.direction = direction;
  query.delta = cfg.delta;
  const double q_hat = worst_quantile_for_direction(held_out, query, cfg.alpha);
  ShiftEstimate est = finish_estimate(div, cfg.alpha, EmpiricalScores(held_out.scores()), q_hat);
  est.direction = std::move(direction);
  return est;
}

}  // namespace detail

/// Sampled-direction estimate with caller-supplied directions (cfg.k is
/// ignored; the direction list defines k). q_hat is the smallest threshold
/// protecting at least a (1 - level_v) fraction of the directions, realized
/// as the matching order statistic of the per-direction worst quantiles.
inline ShiftEstimate estimate_shift_sampling(const TabularDataset& data, const DivergenceSpec& div,
                                             const SamplingConfig& cfg,
                                             const std::vector<std::vector<double>>& directions) {
  cfg.validate();
  if (directions.empty()) throw std::invalid_argument("direction list is empty");
  const std::size_t k = directions.size();
  std::vector<double> quantiles(k);
  for (std::size_t j = 0; j < k; ++j) {
    RegionQuery query;
    query.family = cfg.family;
    query.direction = directions[j];
    query.delta = cfg.delta;
    quantiles[j] = worst_quantile_for_direction(data, query, cfg.alpha);
  }
  std::vector<double> sorted = quantiles;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = quantile_rank(k, 1.0 - cfg.level_v);
  const double q_hat = sorted[rank - 1];
  ShiftEstimate est = detail::finish_estimate(div, cfg.alpha, EmpiricalScores(data.scores()), q_hat);
  est.per_direction_quantiles = std::move(quantiles);
  return est;
}

inline ShiftEstimate estimate_shift_sampling(const TabularDataset& data, const DivergenceSpec& div,
                                             const SamplingConfig& cfg) {
  cfg.validate();
  return estimate_shift_sampling(data, div, cfg,
                                 sample_unit_directions(data.dim(), cfg.k, cfg.seed));
}

/// Least-squares direction fit: regress scores on features (ridge-stabilized
/// normal equations) over the first split, normalize, then calibrate on the
/// second split. A fitted vector with negligible norm is a degenerate
/// direction.
inline ShiftEstimate estimate_shift_regression(const TabularDataset& data,
                                               const DivergenceSpec& div,
                                               const DirectionFitConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.rows();
  const std::size_t d = data.dim();
  if (n < 2) throw std::invalid_argument("need at least 2 rows to split");
  auto [fit_rows, cal_rows] = detail::split_indices(n, cfg.split_fraction, cfg.seed);
  if (fit_rows.size() < d) throw std::invalid_argument("fit split smaller than the dimension");
  const TabularDataset fit = detail::subset(data, fit_rows);
  const TabularDataset cal = detail::subset(data, cal_rows);

  auto a = linalg::gram(fit.features(), fit.rows(), d);
  double trace = 0.0;
  for (std::size_t j = 0; j < d; ++j) trace += a[j * d + j];
  if (!(trace > 0.0)) throw degenerate_direction_error("features are identically zero");
  const double lambda = cfg.ridge * trace / static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) a[j * d + j] += lambda;
  auto b = linalg::matvec_t(fit.features(), fit.scores(), fit.rows(), d);
  std::vector<double> w = linalg::cholesky_solve(a, std::move(b), d);
  if (!linalg::normalize(w)) {
    throw degenerate_direction_error("fitted direction has negligible norm");
  }
  return detail::calibrate_direction(cal, std::move(w), cfg, div);
}

/// Linear-separator direction fit: label the first split by membership in
/// the top half of its scores, minimize the ridge-regularized logistic loss
/// by 500 fixed-step gradient iterations (step 1/L from the second-moment
/// smoothness bound), and take the normalized weight vector. The intercept
/// is fit but excluded from the direction.
inline ShiftEstimate estimate_shift_classification(const TabularDataset& data,
                                                   const DivergenceSpec& div,
                                                   const DirectionFitConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.rows();
  const std::size_t d = data.dim();
  if (n < 2) throw std::invalid_argument("need at least 2 rows to split");
  auto [fit_rows, cal_rows] = detail::split_indices(n, cfg.split_fraction, cfg.seed);
  if (fit_rows.size() < d) throw std::invalid_argument("fit split smaller than the dimension");
  const TabularDataset fit = detail::subset(data, fit_rows);
  const TabularDataset cal = detail::subset(data, cal_rows);
  const std::size_t m = fit.rows();

  std::vector<double> sorted_scores = fit.scores();
  std::sort(sorted_scores.begin(), sorted_scores.end());
  const double median = sorted_scores[m / 2];
  std::vector<double> label(m);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < m; ++i) {
    label[i] = fit.scores()[i] >= median ? 1.0 : -1.0;
    if (label[i] > 0.0) ++positives;
  }
  if (positives == 0 || positives == m) {
    throw degenerate_direction_error("median split produces a single class");
  }

  // smoothness of the mean logistic loss on (x, 1)-augmented rows
  double second_moment = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = fit.row(i);
    for (const double x : row) second_moment += x * x;
    second_moment += 1.0;
  }
  second_moment /= static_cast<double>(m);
  const double lipschitz = 0.25 * second_moment + cfg.ridge;
  const double step = 1.0 / lipschitz;

  std::vector<double> w(d, 0.0);
  double intercept = 0.0;
  std::vector<double> grad(d);
  for (int iter = 0; iter < 500; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto row = fit.row(i);
      double z = intercept;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * row[j];
      const double margin = label[i] * z;
      // d/dz log(1 + exp(-margin)) = -label * sigmoid(-margin)
      const double s = 1.0 / (1.0 + std::exp(margin));
      const double coeff = -label[i] * s;
      for (std::size_t j = 0; j < d; ++j) grad[j] += coeff * row[j];
      grad_b += coeff;
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < d; ++j) {
      grad[j] = grad[j] * inv_m + cfg.ridge * w[j];
      w[j] -= step * grad[j];
    }
    intercept -= step * grad_b * inv_m;
  }
  if (!linalg::normalize(w)) {
    throw degenerate_direction_error("separator weight vector has negligible norm");
  }
  return detail::calibrate_direction(cal, std::move(w), cfg, div);
}

}  // namespace robustcp
