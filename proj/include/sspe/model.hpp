#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sspe/rng.hpp"

namespace sspe {

// Parameter indices of the scalar linear-Gaussian model
//   X_0 ~ mu,  X_n = rho * X_{n-1} + tau * W_n,  Y_n = X_n + sigma * V_n.
enum ParamIndex { kRho = 0, kTau2 = 1, kSigma2 = 2 };

struct Theta {
  double rho = 0.0;
  double tau2 = 1.0;
  double sigma2 = 1.0;
  // which components an estimator is allowed to update; fixed ones pass through
  std::array<bool, 3> free_mask{true, true, true};

  double operator[](int i) const { return i == kRho ? rho : (i == kTau2 ? tau2 : sigma2); }
  double& operator[](int i) { return i == kRho ? rho : (i == kTau2 ? tau2 : sigma2); }

  void validate() const {
    if (!(std::abs(rho) <= 1.0)) throw std::invalid_argument("Theta: |rho| must be <= 1");
    if (!(tau2 > 0.0)) throw std::invalid_argument("Theta: tau2 must be > 0");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("Theta: sigma2 must be > 0");
  }
};

// Initial-state law. The default is the stationary AR(1) law N(0, tau2/(1-rho^2)),
// which requires |rho| < 1; a fixed, parameter-independent N(0, var) is available
// for the random-walk regime |rho| = 1.
struct InitLaw {
  enum class Kind { Stationary, FixedVar };
  Kind kind = Kind::Stationary;
  double fixed_var = 1.0;

  static InitLaw stationary() { return {}; }
  static InitLaw fixed(double var) { return {Kind::FixedVar, var}; }

  bool is_stationary() const { return kind == Kind::Stationary; }

  double variance(const Theta& theta) const {
    if (kind == Kind::FixedVar) return fixed_var;
    if (std::abs(theta.rho) >= 1.0)
      throw std::invalid_argument("InitLaw: stationary variance undefined for |rho| >= 1");
    return theta.tau2 / (1.0 - theta.rho * theta.rho);
  }
};

struct Trajectory {
  std::vector<double> states;
  std::vector<double> observations;

  std::size_t length() const { return states.size(); }
};

// Callable bundle defining one state-space model at a fixed theta. All densities
// are log densities. predictive_weight is log q(y_n | x_{n-1}) and need not be
// normalized in y; it only has to be finite on the support.
struct ModelContract {
  std::function<double(Rng&)> init_sample;
  std::function<double(double x0)> init_logpdf;
  std::function<double(double x_prev, Rng&)> trans_sample;
  std::function<double(double x_new, double x_prev)> trans_logpdf;
  std::function<double(double y, double x)> obs_logpdf;
  // proposal q(x_n | y_n, x_{n-1}) and its time-0 analogue q(x_0 | y_0)
  std::function<double(double y, double x_prev, Rng&)> proposal_sample;
  std::function<double(double x_new, double y, double x_prev)> proposal_logpdf;
  std::function<double(double y0, Rng&)> proposal_sample0;
  std::function<double(double x0, double y0)> proposal_logpdf0;
  // log q(y_n | x_{n-1}); identically 0 for SISR/bootstrap
  std::function<double(double y, double x_prev)> predictive_weight;

  // sup_x' f(x'|x) in log space, when known; used by rejection backward samplers
  double log_trans_bound = 0.0;
  bool has_trans_bound = false;
};

// Simulates x_{0:T}, y_{0:T}. Deterministic given the seed.
Trajectory simulate_lgssm(const Theta& theta, long horizon, std::uint64_t seed,
                          InitLaw init = InitLaw::stationary());

// Bootstrap contract: proposal = transition prior, predictive weight = 1.
ModelContract lg_densities(const Theta& theta, InitLaw init = InitLaw::stationary());

// Locally optimal contract: proposal p(x_n|y_n,x_{n-1}), predictive p(y_n|x_{n-1});
// makes the incremental particle weight constant.
ModelContract lg_optimal_proposal(const Theta& theta, InitLaw init = InitLaw::stationary());

// --- unconstrained reparameterization (atanh for rho, log for variances) ---

std::array<double, 3> to_unconstrained(const Theta& theta);
Theta from_unconstrained(const std::array<double, 3>& u, const Theta& base);
// d theta / d u, evaluated at theta: (1-rho^2, tau2, sigma2)
std::array<double, 3> unconstrained_jacobian(const Theta& theta);

}  // namespace sspe
