#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "robustcp/dataset.hpp"
#include "robustcp/scores.hpp"

namespace robustcp {
namespace detail {

/// Rows reordered along the query axis: projection value (or distance to the
/// ball center) ascending, original row order on ties.
struct ProjectedData {
  std::vector<double> keys;    // sorted ascending
  std::vector<double> scores;  // aligned with keys
};

inline ProjectedData project_and_sort(const TabularDataset& data, const RegionQuery& query) {
  const std::size_t n = data.rows();
  const std::size_t d = data.dim();
  std::vector<double> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = data.row(i);
    double k = 0.0;
    if (query.family == RegionFamily::Ball) {
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = row[j] - query.direction[j];
        k += diff * diff;
      }
      k = std::sqrt(k);
    } else {
      for (std::size_t j = 0; j < d; ++j) k += row[j] * query.direction[j];
    }
    if (!std::isfinite(k)) throw std::invalid_argument("projection produced a non-finite value");
    keys[i] = k;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&keys](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  ProjectedData out;
  out.keys.resize(n);
  out.scores.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    out.keys[p] = keys[order[p]];
    out.scores[p] = data.scores()[order[p]];
  }
  return out;
}

/// Minimum region size ceil(delta * n), with the same FP guard as
/// quantile_rank.
inline std::size_t min_window(std::size_t n, double delta) {
  const std::size_t w = quantile_rank(n, delta);
  if (w > n) throw std::invalid_argument("delta leaves no feasible region");
  return w;
}

struct IntRatio {
  long long num = 1;
  long long den = 0;  // den == 0 encodes +infinity
};

inline bool ratio_less(const IntRatio& a, const IntRatio& b) {
  if (b.den == 0) return a.den != 0;
  if (a.den == 0) return false;
  return a.num * b.den < b.num * a.den;
}

struct HullPoint {
  long long x = 0;
  long long y = 0;
};

/// Exact minimum of (prefix[j] - prefix[i]) / (j - i) over all j - i >= width:
/// the candidate left endpoints form an upper convex hull, and for each right
/// endpoint the minimizing vertex is located by binary search (slopes to the
/// query point strictly decrease then do not).
inline IntRatio min_average_value(const std::vector<long long>& prefix, std::size_t width) {
  const std::size_t n = prefix.size() - 1;
  IntRatio best;
  std::vector<HullPoint> hull;
  hull.reserve(n - width + 2);
  for (std::size_t j = width; j <= n; ++j) {
    const HullPoint fresh{static_cast<long long>(j - width), prefix[j - width]};
    while (hull.size() >= 2) {
      const HullPoint& a = hull[hull.size() - 2];
      const HullPoint& b = hull.back();
      // drop b unless slope(a, b) > slope(b, fresh)
      if ((b.y - a.y) * (fresh.x - b.x) <= (fresh.y - b.y) * (b.x - a.x)) {
        hull.pop_back();
      } else {
        break;
      }
    }
    hull.push_back(fresh);
    const long long qx = static_cast<long long>(j);
    const long long qy = prefix[j];
    const auto improving = [&](std::size_t k) {
      return (qy - hull[k + 1].y) * (qx - hull[k].x) < (qy - hull[k].y) * (qx - hull[k + 1].x);
    };
    std::size_t lo = 0;
    std::size_t hi = hull.size() - 1;
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (improving(mid)) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    const IntRatio candidate{qy - hull[lo].y, qx - hull[lo].x};
    if (ratio_less(candidate, best)) best = candidate;
  }
  return best;
}

struct Window {
  std::size_t begin = 0;  // [begin, end) in sorted positions
  std::size_t end = 0;
};

/// Lexicographically first (begin, then end) window of length >= width whose
/// average attains the exact minimum: scan starts ascending and take the
/// earliest prefix index with a matching transformed prefix value.
inline Window min_average_window(const std::vector<long long>& prefix, std::size_t width) {
  const std::size_t n = prefix.size() - 1;
  const IntRatio best = min_average_value(prefix, width);
  // windows achieving the minimum satisfy den*(P_j - P_i) == num*(j - i)
  std::unordered_map<long long, std::vector<std::size_t>> positions;
  positions.reserve(n + 1);
  std::vector<long long> transformed(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    transformed[k] = best.den * prefix[k] - best.num * static_cast<long long>(k);
    positions[transformed[k]].push_back(k);
  }
  for (std::size_t i = 0; i + width <= n; ++i) {
    const auto& matches = positions.at(transformed[i]);
    const auto it = std::lower_bound(matches.begin(), matches.end(), i + width);
    if (it != matches.end()) return Window{i, *it};
  }
  throw std::logic_error("minimizing window recovery failed");
}

inline std::vector<long long> ones_prefix(const std::vector<double>& sorted_scores, double q) {
  std::vector<long long> prefix(sorted_scores.size() + 1, 0);
  for (std::size_t i = 0; i < sorted_scores.size(); ++i) {
    prefix[i + 1] = prefix[i] + (sorted_scores[i] <= q ? 1 : 0);
  }
  return prefix;
}

/// Exact minimum covered fraction over the query family, as an integer ratio.
inline IntRatio min_coverage_ratio(const std::vector<long long>& prefix, std::size_t width,
                                   RegionFamily family) {
  const std::size_t n = prefix.size() - 1;
  IntRatio best;
  switch (family) {
    case RegionFamily::Slab:
      return min_average_value(prefix, width);
    case RegionFamily::Halfspace:
      for (std::size_t i = 0; i + width <= n; ++i) {
        const IntRatio candidate{prefix[n] - prefix[i], static_cast<long long>(n - i)};
        if (ratio_less(candidate, best)) best = candidate;
      }
      return best;
    case RegionFamily::Ball:
      for (std::size_t m = width; m <= n; ++m) {
        const IntRatio candidate{prefix[m], static_cast<long long>(m)};
        if (ratio_less(candidate, best)) best = candidate;
      }
      return best;
  }
  throw std::logic_error("unknown region family");
}

inline WorstCoverageResult worst_coverage_sorted(const ProjectedData& projected,
                                                 RegionFamily family, double delta, double q) {
  const std::size_t n = projected.scores.size();
  const std::size_t width = min_window(n, delta);
  const auto prefix = ones_prefix(projected.scores, q);
  WorstCoverageResult out;
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (family) {
    case RegionFamily::Slab: {
      const Window w = min_average_window(prefix, width);
      const auto len = static_cast<double>(w.end - w.begin);
      out.coverage = static_cast<double>(prefix[w.end] - prefix[w.begin]) / len;
      out.region_lo = projected.keys[w.begin];
      out.region_hi = projected.keys[w.end - 1];
      out.mass = len / static_cast<double>(n);
      break;
    }
    case RegionFamily::Halfspace: {
      double best = inf;
      std::size_t arg = 0;
      for (std::size_t i = 0; i + width <= n; ++i) {
        const double cov = static_cast<double>(prefix[n] - prefix[i]) / static_cast<double>(n - i);
        if (cov < best) {
          best = cov;
          arg = i;
        }
      }
      out.coverage = best;
      out.region_lo = projected.keys[arg];
      out.region_hi = inf;
      out.mass = static_cast<double>(n - arg) / static_cast<double>(n);
      break;
    }
    case RegionFamily::Ball: {
      double best = inf;
      std::size_t arg = width;
      for (std::size_t m = width; m <= n; ++m) {
        const double cov = static_cast<double>(prefix[m]) / static_cast<double>(m);
        if (cov < best) {
          best = cov;
          arg = m;
        }
      }
      out.coverage = best;
      out.region_lo = 0.0;
      out.region_hi = projected.keys[arg - 1];
      out.mass = static_cast<double>(arg) / static_cast<double>(n);
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Smallest conditional coverage of the set {score <= q} over all regions in
/// the query family with empirical mass at least delta. Regions are windows
/// on the sorted projection positions: contiguous runs (Slab), suffixes
/// (Halfspace) or prefixes of the distance ordering (Ball). The slab search
/// runs in O(n log n) by an exact integer convex-hull scan; ties resolve to
/// the first minimizing window in left-to-right scan order.
inline WorstCoverageResult worst_coverage(const TabularDataset& data, const RegionQuery& query,
                                          double q) {
  query.validate(data.dim());
  const auto projected = detail::project_and_sort(data, query);
  return detail::worst_coverage_sorted(projected, query.family, query.delta, q);
}

/// Exhaustive reference search over every feasible window, quadratic in n for
/// the slab family. Guards against accidental large inputs.
inline WorstCoverageResult brute_force_worst_coverage(const TabularDataset& data,
                                                      const RegionQuery& query, double q) {
  if (data.rows() > 5000) {
    throw std::invalid_argument("brute-force search is limited to 5000 rows");
  }
  query.validate(data.dim());
  const auto projected = detail::project_and_sort(data, query);
  const std::size_t n = projected.scores.size();
  const std::size_t width = detail::min_window(n, query.delta);
  const auto prefix = detail::ones_prefix(projected.scores, q);
  constexpr double inf = std::numeric_limits<double>::infinity();
  WorstCoverageResult out;
  if (query.family == RegionFamily::Slab) {
    double best = inf;
    std::size_t arg_begin = 0;
    std::size_t arg_end = width;
    for (std::size_t i = 0; i + width <= n; ++i) {
      for (std::size_t j = i + width; j <= n; ++j) {
        const double cov =
            static_cast<double>(prefix[j] - prefix[i]) / static_cast<double>(j - i);
        if (cov < best) {
          best = cov;
          arg_begin = i;
          arg_end = j;
        }
      }
    }
    out.coverage = best;
    out.region_lo = projected.keys[arg_begin];
    out.region_hi = projected.keys[arg_end - 1];
    out.mass = static_cast<double>(arg_end - arg_begin) / static_cast<double>(n);
    return out;
  }
  return detail::worst_coverage_sorted(projected, query.family, query.delta, q);
}

/// Smallest score cutoff q at which every feasible region in the query family
/// keeps conditional coverage >= 1 - alpha. Binary search over the distinct
/// score values; the worst coverage is nondecreasing in q and reaches 1 at
/// the max score. The 1e-9 slack keeps exact rational boundaries (window
/// count equal to (1-alpha) * size) on the feasible side.
inline double worst_quantile_for_direction(const TabularDataset& data, const RegionQuery& query,
                                           double alpha) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  query.validate(data.dim());
  const auto projected = detail::project_and_sort(data, query);
  const std::size_t n = projected.scores.size();
  const std::size_t width = detail::min_window(n, query.delta);
  std::vector<double> values = data.scores();
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const double level = (1.0 - alpha) - 1e-9;
  const auto feasible = [&](double q) {
    const auto prefix = detail::ones_prefix(projected.scores, q);
    const auto ratio = detail::min_coverage_ratio(prefix, width, query.family);
    return static_cast<double>(ratio.num) / static_cast<double>(ratio.den) >= level;
  };
  std::size_t lo = 0;
  std::size_t hi = values.size() - 1;
  if (feasible(values[lo])) return values[lo];
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (feasible(values[mid])) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return values[hi];
}

}  // namespace robustcp
