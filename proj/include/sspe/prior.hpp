#pragma once

#include <cmath>

#include "sspe/model.hpp"
#include "sspe/numeric.hpp"
#include "sspe/rng.hpp"

namespace sspe {

// Independent priors: rho ~ U[-1,1], tau2 ~ IG(a,b), sigma2 ~ IG(c,d).
struct PriorSpec {
  double a = 1.0, b = 1.0;  // tau2 shape/scale
  double c = 1.0, d = 1.0;  // sigma2 shape/scale

  void validate() const {
    if (!(a > 0 && b > 0 && c > 0 && d > 0))
      throw std::invalid_argument("PriorSpec: shapes and scales must be > 0");
  }

  static double log_ig_pdf(double x, double shape, double scale) {
    if (!(x > 0.0)) return kNegInf;
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
  }

  double log_density_component(int i, double value) const {
    switch (i) {
      case kRho:
        return (std::abs(value) <= 1.0) ? -std::log(2.0) : kNegInf;
      case kTau2:
        return log_ig_pdf(value, a, b);
      default:
        return log_ig_pdf(value, c, d);
    }
  }

  // joint log density over the free components of theta
  double log_density(const Theta& theta) const {
    double lp = 0.0;
    for (int i = 0; i < 3; ++i)
      if (theta.free_mask[i]) lp += log_density_component(i, theta[i]);
    return lp;
  }

  // draw free components, keep fixed ones from base
  Theta sample(const Theta& base, Rng& rng) const {
    Theta t = base;
    if (base.free_mask[kRho]) t.rho = rng.uniform(-1.0, 1.0);
    if (base.free_mask[kTau2]) t.tau2 = rng.inverse_gamma(a, b);
    if (base.free_mask[kSigma2]) t.sigma2 = rng.inverse_gamma(c, d);
    return t;
  }
};

}  // namespace sspe
