#include "sspe/particle.hpp"

#include <algorithm>
#include <cmath>

#include "sspe/numeric.hpp"

namespace sspe {

double normalize_log_weights(std::span<const double> logw, std::span<double> out,
                             long time_index) {
  if (logw.empty() || logw.size() != out.size())
    throw std::invalid_argument("normalize_log_weights: bad sizes");
  double m = kNegInf;
  for (double w : logw)
    if (w > m) m = w;
  if (!std::isfinite(m)) throw ParticleCollapseError(time_index);
  double s = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    out[i] = std::exp(logw[i] - m);
    s += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= s;
  return m + std::log(s) - std::log(static_cast<double>(logw.size()));
}

double ess(std::span<const double> norm_weights) {
  double s2 = 0.0;
  for (double w : norm_weights) s2 += w * w;
  return 1.0 / s2;
}

int invert_cumulative(std::span<const double> cum, double u) {
  auto it = std::lower_bound(cum.begin(), cum.end(), u);
  if (it == cum.end()) --it;  // guard against u > cum.back() from rounding
  return static_cast<int>(it - cum.begin());
}

void resample(std::span<const double> norm_weights, std::span<int> out, ResampleScheme scheme,
              Rng& rng) {
  const std::size_t n = norm_weights.size();
  if (n == 0 || out.empty()) throw std::invalid_argument("resample: bad sizes");
  std::vector<double> cum(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += norm_weights[i];
    cum[i] = acc;
  }
  cum[n - 1] = 1.0;  // close the last cell against rounding

  const double n_out = static_cast<double>(out.size());
  if (scheme == ResampleScheme::Multinomial) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = invert_cumulative(cum, rng.uniform01());
  } else {
    double u = rng.uniform01();
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] = invert_cumulative(cum, (static_cast<double>(j) + u) / n_out);
  }
}

}  // namespace sspe
