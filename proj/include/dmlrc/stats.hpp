#pragma once

#include <cmath>
#include <vector>

#include "dmlrc/errors.hpp"

namespace dmlrc {

// 95% normal quantile used for all confidence intervals.
inline constexpr double kZ95 = 1.959964;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double two_sided_p(double z) { return 2.0 * (1.0 - normal_cdf(std::abs(z))); }

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Quantile by linear interpolation between order statistics at h = (n-1)p.
// `sorted` must be ascending and non-empty.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw DataError("quantile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  double h = static_cast<double>(sorted.size() - 1) * p;
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo >= sorted.size() - 1) return sorted.back();
  double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace dmlrc
