#include "sspe/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace sspe {

double quantile_of(std::span<const double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile_of: empty sample");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  if (q <= 0.0) return s.front();
  if (q >= 1.0) return s.back();
  double pos = q * (s.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  double frac = pos - lo;
  if (lo + 1 >= s.size()) return s.back();
  return s[lo] * (1.0 - frac) + s[lo + 1] * frac;
}

double mcse_batch_means(std::span<const double> chain) {
  std::size_t n = chain.size();
  if (n < 16) throw std::invalid_argument("mcse_batch_means: chain too short");
  std::size_t n_batches = static_cast<std::size_t>(std::floor(std::sqrt(double(n))));
  std::size_t batch = n / n_batches;
  std::vector<double> means;
  means.reserve(n_batches);
  for (std::size_t b = 0; b + 1 <= n_batches; ++b) {
    double s = 0.0;
    for (std::size_t i = b * batch; i < (b + 1) * batch; ++i) s += chain[i];
    means.push_back(s / batch);
  }
  return std::sqrt(variance_of(means) / means.size());
}

}  // namespace sspe
