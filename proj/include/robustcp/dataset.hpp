#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace robustcp {

/// Feature rows with one conformity score per row.
class TabularDataset {
 public:
  TabularDataset(std::vector<double> features_row_major, std::size_t dim,
                 std::vector<double> scores)
      : features_(std::move(features_row_major)), scores_(std::move(scores)), dim_(dim) {
    if (dim_ == 0) throw std::invalid_argument("feature dimension must be positive");
    if (scores_.empty()) throw std::invalid_argument("dataset must have at least one row");
    if (features_.size() != scores_.size() * dim_) {
      throw std::invalid_argument("feature matrix shape does not match the score count");
    }
    for (double v : features_) {
      if (std::isnan(v)) throw std::invalid_argument("features must not contain NaN");
    }
    for (double s : scores_) {
      if (std::isnan(s)) throw std::invalid_argument("scores must not contain NaN");
    }
  }

  std::size_t rows() const { return scores_.size(); }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features_.data() + i * dim_, dim_);
  }
  const std::vector<double>& features() const { return features_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  std::vector<double> features_;
  std::vector<double> scores_;
  std::size_t dim_;
};

enum class RegionFamily { Slab, Halfspace, Ball };

/// One family of candidate regions: slabs {a <= v.x <= b} or halfspaces
/// {v.x >= a} along a unit direction, or balls {|x - v| <= r} around a
/// center, restricted to empirical mass at least delta.
struct RegionQuery {
  RegionFamily family = RegionFamily::Slab;
  std::vector<double> direction;  // unit direction (Slab, Halfspace) or center (Ball)
  double delta = 1.0 / 3.0;

  void validate(std::size_t dim) const {
    if (direction.size() != dim) {
      throw std::invalid_argument("region direction dimension does not match the data");
    }
    if (!(delta > 0.0) || !(delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    double norm2 = 0.0;
    for (double v : direction) {
      if (!std::isfinite(v)) throw std::invalid_argument("region direction must be finite");
      norm2 += v * v;
    }
    if (family != RegionFamily::Ball) {
      if (norm2 == 0.0) throw std::invalid_argument("region direction must be nonzero");
      if (std::fabs(std::sqrt(norm2) - 1.0) > 1e-9) {
        throw std::invalid_argument("region direction must have unit norm");
      }
    }
  }
};

/// Minimizing region of the conditional-coverage search.
struct WorstCoverageResult {
  double coverage = 1.0;  // min over feasible regions of the covered fraction
  double region_lo = 0.0; // slab [lo, hi]; halfspace [lo, +inf); ball distance [0, hi]
  double region_hi = 0.0;
  double mass = 0.0;      // empirical mass of the minimizing region
};

}  // namespace robustcp
