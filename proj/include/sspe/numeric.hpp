#pragma once

#include <cmath>
#include <limits>
#include <span>

namespace sspe {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

inline double log_normal_pdf(double x, double mean, double var) {
  double d = x - mean;
  return -0.5 * (kLogTwoPi + std::log(var) + d * d / var);
}

inline double logsumexp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v)
    if (x > m) m = x;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(std::span<const double> v) {
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// linear-interpolation quantile of a copy of v, q in [0,1]
double quantile_of(std::span<const double> v, double q);

// Monte Carlo standard error of a correlated chain mean via batch means
// (sqrt(n) batches).
double mcse_batch_means(std::span<const double> chain);

}  // namespace sspe
