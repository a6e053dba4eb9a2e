#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace robustcp {
namespace linalg {

/// X^T X for a row-major n x d matrix, returned row-major d x d.
inline std::vector<double> gram(std::span<const double> x, std::size_t n, std::size_t d) {
  std::vector<double> g(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) g[a * d + b] += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < a; ++b) g[a * d + b] = g[b * d + a];
  }
  return g;
}

/// X^T y for a row-major n x d matrix.
inline std::vector<double> matvec_t(std::span<const double> x, std::span<const double> y,
                                    std::size_t n, std::size_t d) {
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) out[a] += row[a] * y[i];
  }
  return out;
}

/// Solves A w = b for symmetric positive definite A (row-major d x d) by
/// Cholesky factorization. A is modified in place.
inline std::vector<double> cholesky_solve(std::vector<double>& a, std::vector<double> b,
                                          std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    double diag = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * d + k] * a[j * d + k];
    if (!(diag > 0.0)) throw std::runtime_error("matrix is not positive definite");
    const double root = std::sqrt(diag);
    a[j * d + j] = root;
    for (std::size_t i = j + 1; i < d; ++i) {
      double v = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = v / root;
    }
  }
  // forward then backward substitution
  for (std::size_t i = 0; i < d; ++i) {
    double v = b[i];
    for (std::size_t k = 0; k < i; ++k) v -= a[i * d + k] * b[k];
    b[i] = v / a[i * d + i];
  }
  for (std::size_t ii = d; ii-- > 0;) {
    double v = b[ii];
    for (std::size_t k = ii + 1; k < d; ++k) v -= a[k * d + ii] * b[k];
    b[ii] = v / a[ii * d + ii];
  }
  return b;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

/// Normalizes v to unit Euclidean length; returns false when the norm is too
/// small to divide by safely.
inline bool normalize(std::vector<double>& v) {
  const double nrm = norm2(v);
  if (!(nrm > 1e-12)) return false;
  for (double& x : v) x /= nrm;
  return true;
}

}  // namespace linalg
}  // namespace robustcp
