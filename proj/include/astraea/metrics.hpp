#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "astraea/numerics.hpp"

namespace astraea {

/// Mean of squared elementwise differences.
inline double compute_mse(const TokenGrid& a, const TokenGrid& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("compute_mse: shape mismatch");
  if (a.size() == 0) return 0.0;
  auto x = a.data();
  auto y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

/// 10 log10(peak^2 / mse); +inf when mse is 0.
inline double psnr_from_mse(double mse, double peak) {
  if (!(peak > 0.0)) throw DomainError("psnr: peak must be > 0");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

inline double compute_psnr(const TokenGrid& a, const TokenGrid& b, double peak) {
  return psnr_from_mse(compute_mse(a, b), peak);
}

/// Largest absolute entry; the default PSNR peak for latent grids.
inline double max_abs(const TokenGrid& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Returns 0 when either input is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace astraea
