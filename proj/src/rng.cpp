#include "sspe/rng.hpp"

namespace sspe {

namespace {

// Robert (1995) shifted-exponential sampler for the standardized tail x >= a, a > 0.
double tail_normal(Rng& rng, double a) {
  double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    double x = a - std::log(rng.uniform01()) / alpha;
    double rho = std::exp(-0.5 * (x - alpha) * (x - alpha));
    if (rng.uniform01() <= rho) return x;
  }
}

}  // namespace

double Rng::truncated_normal(double mean, double sd, double lo, double hi) {
  double a = (lo - mean) / sd;
  double b = (hi - mean) / sd;
  if (a > b) {
    double t = a; a = b; b = t;
  }
  double x;
  if (a <= 0.0 && b >= 0.0) {
    // interval contains the mode: plain rejection
    do {
      x = normal();
    } while (x < a || x > b);
  } else {
    double lo_abs = (a > 0.0) ? a : -b;
    double hi_abs = (a > 0.0) ? b : -a;
    if (hi_abs - lo_abs > 2.0 / (lo_abs + std::sqrt(lo_abs * lo_abs + 4.0))) {
      do {
        x = tail_normal(*this, lo_abs);
      } while (x > hi_abs);
    } else {
      // narrow band in the tail: uniform proposal with exact envelope
      for (;;) {
        x = uniform(lo_abs, hi_abs);
        double rho = std::exp(0.5 * (lo_abs * lo_abs - x * x));
        if (uniform01() <= rho) break;
      }
    }
    if (a <= 0.0) x = -x;
  }
  return mean + sd * x;
}

}  // namespace sspe
