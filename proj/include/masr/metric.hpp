#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "masr/error.hpp"

namespace masr {

namespace detail {

inline void check_lengths(std::size_t b, std::size_t x, std::size_t y) {
  if (b != x || x != y) {
    throw Error("shape", "dimension mismatch: metric has length " + std::to_string(b) +
                             ", vectors have lengths " + std::to_string(x) + " and " +
                             std::to_string(y));
  }
}

}  // namespace detail

/// Squared diagonal Mahalanobis distance ||b .* (x - y)||^2.
///
/// `b` is the diagonal of the linear map A in d(x, y) = ||A (x - y)||. With
/// b = 1 this is the squared Euclidean distance; the sign of each b_t is
/// irrelevant.
inline double mahalanobis_sq(std::span<const double> b, std::span<const double> x,
                             std::span<const double> y) {
  detail::check_lengths(b.size(), x.size(), y.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < b.size(); ++t) {
    const double e = b[t] * (x[t] - y[t]);
    acc += e * e;
  }
  return acc;
}

/// Adds `scale` times the partial derivatives of mahalanobis_sq into the
/// three output spans. Any output may be empty to skip it.
inline void accumulate_mahalanobis_sq_grad(std::span<const double> b, std::span<const double> x,
                                           std::span<const double> y, double scale,
                                           std::span<double> db, std::span<double> dx,
                                           std::span<double> dy) {
  detail::check_lengths(b.size(), x.size(), y.size());
  for (std::size_t t = 0; t < b.size(); ++t) {
    const double diff = x[t] - y[t];
    const double gx = 2.0 * b[t] * b[t] * diff * scale;
    if (!dx.empty()) dx[t] += gx;
    if (!dy.empty()) dy[t] -= gx;
    if (!db.empty()) db[t] += 2.0 * b[t] * diff * diff * scale;
  }
}

struct MahalanobisGrad {
  std::vector<double> db;
  std::vector<double> dx;
  std::vector<double> dy;
};

inline MahalanobisGrad grad_mahalanobis_sq(std::span<const double> b, std::span<const double> x,
                                           std::span<const double> y) {
  detail::check_lengths(b.size(), x.size(), y.size());
  MahalanobisGrad g{std::vector<double>(b.size()), std::vector<double>(b.size()),
                    std::vector<double>(b.size())};
  accumulate_mahalanobis_sq_grad(b, x, y, 1.0, g.db, g.dx, g.dy);
  return g;
}

}  // namespace masr
