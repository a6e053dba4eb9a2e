#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace robustcp {

/// Rank (1-indexed) of the level-beta empirical quantile in a sample of size
/// n: the smallest k with k >= n * beta. The 1e-9 guard absorbs FP noise in
/// level products such as 99 * (1 + 1/99) * 0.95, which must land on rank 95.
inline std::size_t quantile_rank(std::size_t n, double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("quantile level must be positive and finite");
  }
  double k = std::ceil(static_cast<double>(n) * beta - 1e-9);
  if (k < 1.0) k = 1.0;
  return static_cast<std::size_t>(k);
}

/// Sorted calibration scores: the empirical score distribution.
class EmpiricalScores {
 public:
  explicit EmpiricalScores(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("scores must be non-empty");
    for (double s : values_) {
      if (std::isnan(s)) throw std::invalid_argument("scores must not contain NaN");
    }
    std::sort(values_.begin(), values_.end());
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& sorted() const { return values_; }
  double min() const { return values_.front(); }
  double max() const { return values_.back(); }

  /// Proportion of scores <= t (right-continuous empirical CDF).
  double cdf(double t) const {
    const auto it = std::upper_bound(values_.begin(), values_.end(), t);
    return static_cast<double>(it - values_.begin()) / static_cast<double>(values_.size());
  }

 private:
  std::vector<double> values_;
};

/// Level-beta empirical quantile: the ceil(n*beta)-th order statistic, never
/// interpolated. Admits beta up to 1 + 1/n (the inflated split-conformal
/// level); a rank past n yields the +infinity sentinel.
inline double empirical_quantile(const EmpiricalScores& scores, double beta) {
  const std::size_t n = scores.size();
  if (beta > 1.0 + 1.0 / static_cast<double>(n) + 1e-12) {
    throw std::invalid_argument("quantile level exceeds 1 + 1/n");
  }
  const std::size_t rank = quantile_rank(n, beta);
  if (rank > n) return std::numeric_limits<double>::infinity();
  return scores.sorted()[rank - 1];
}

}  // namespace robustcp
