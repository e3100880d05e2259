#include "sspe/model.hpp"

#include <cmath>

#include "sspe/numeric.hpp"

namespace sspe {

Trajectory simulate_lgssm(const Theta& theta, long horizon, std::uint64_t seed, InitLaw init) {
  theta.validate();
  if (horizon < 0) throw std::invalid_argument("simulate_lgssm: horizon must be >= 0");
  if (init.is_stationary() && std::abs(theta.rho) >= 1.0)
    throw std::invalid_argument(
        "simulate_lgssm: |rho| = 1 has no stationary initial law; pass a fixed InitLaw");

  Rng rng(seed);
  Rng state_rng = rng.child(1);
  Rng obs_rng = rng.child(2);

  double tau = std::sqrt(theta.tau2);
  double sigma = std::sqrt(theta.sigma2);

  Trajectory traj;
  traj.states.resize(horizon + 1);
  traj.observations.resize(horizon + 1);
  double x = std::sqrt(init.variance(theta)) * state_rng.normal();
  traj.states[0] = x;
  traj.observations[0] = x + sigma * obs_rng.normal();
  for (long n = 1; n <= horizon; ++n) {
    x = theta.rho * x + tau * state_rng.normal();
    traj.states[n] = x;
    traj.observations[n] = x + sigma * obs_rng.normal();
  }
  return traj;
}

ModelContract lg_densities(const Theta& theta, InitLaw init) {
  theta.validate();
  double v0 = init.variance(theta);
  double rho = theta.rho;
  double tau2 = theta.tau2;
  double tau = std::sqrt(tau2);
  double sigma2 = theta.sigma2;

  ModelContract m;
  m.init_sample = [v0](Rng& rng) { return std::sqrt(v0) * rng.normal(); };
  m.init_logpdf = [v0](double x0) { return log_normal_pdf(x0, 0.0, v0); };
  m.trans_sample = [rho, tau](double x, Rng& rng) { return rho * x + tau * rng.normal(); };
  m.trans_logpdf = [rho, tau2](double xn, double xp) { return log_normal_pdf(xn, rho * xp, tau2); };
  m.obs_logpdf = [sigma2](double y, double x) { return log_normal_pdf(y, x, sigma2); };
  m.proposal_sample = [rho, tau](double, double x, Rng& rng) { return rho * x + tau * rng.normal(); };
  m.proposal_logpdf = [rho, tau2](double xn, double, double xp) {
    return log_normal_pdf(xn, rho * xp, tau2);
  };
  m.proposal_sample0 = [v0](double, Rng& rng) { return std::sqrt(v0) * rng.normal(); };
  m.proposal_logpdf0 = [v0](double x0, double) { return log_normal_pdf(x0, 0.0, v0); };
  m.predictive_weight = [](double, double) { return 0.0; };
  m.log_trans_bound = -0.5 * (kLogTwoPi + std::log(tau2));
  m.has_trans_bound = true;
  return m;
}

ModelContract lg_optimal_proposal(const Theta& theta, InitLaw init) {
  ModelContract m = lg_densities(theta, init);
  double v0 = init.variance(theta);
  double rho = theta.rho;
  double tau2 = theta.tau2;
  double sigma2 = theta.sigma2;

  // product of N(x'; rho x, tau2) and N(y; x', sigma2)
  double v = 1.0 / (1.0 / tau2 + 1.0 / sigma2);
  double sv = std::sqrt(v);
  m.proposal_sample = [=](double y, double xp, Rng& rng) {
    double mean = v * (rho * xp / tau2 + y / sigma2);
    return mean + sv * rng.normal();
  };
  m.proposal_logpdf = [=](double xn, double y, double xp) {
    double mean = v * (rho * xp / tau2 + y / sigma2);
    return log_normal_pdf(xn, mean, v);
  };
  m.predictive_weight = [=](double y, double xp) {
    return log_normal_pdf(y, rho * xp, tau2 + sigma2);
  };

  double w0 = 1.0 / (1.0 / v0 + 1.0 / sigma2);
  double sw0 = std::sqrt(w0);
  m.proposal_sample0 = [=](double y0, Rng& rng) { return w0 * y0 / sigma2 + sw0 * rng.normal(); };
  m.proposal_logpdf0 = [=](double x0, double y0) {
    return log_normal_pdf(x0, w0 * y0 / sigma2, w0);
  };
  return m;
}

std::array<double, 3> to_unconstrained(const Theta& theta) {
  return {std::atanh(theta.rho), std::log(theta.tau2), std::log(theta.sigma2)};
}

Theta from_unconstrained(const std::array<double, 3>& u, const Theta& base) {
  Theta t = base;
  if (base.free_mask[kRho]) t.rho = std::tanh(u[kRho]);
  if (base.free_mask[kTau2]) t.tau2 = std::exp(u[kTau2]);
  if (base.free_mask[kSigma2]) t.sigma2 = std::exp(u[kSigma2]);
  return t;
}

std::array<double, 3> unconstrained_jacobian(const Theta& theta) {
  return {1.0 - theta.rho * theta.rho, theta.tau2, theta.sigma2};
}

}  // namespace sspe
