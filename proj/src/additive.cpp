#include "sspe/additive.hpp"

#include <cmath>

namespace sspe {

AdditiveFunctional cross_product_statistic() {
  AdditiveFunctional s;
  s.dim = 1;
  s.eval = [](long, double xp, double xc, double, double* out) { out[0] = xp * xc; };
  s.eval_given_prev_moments = [](long, double m1, double, double xc, double, double* out) {
    out[0] = m1 * xc;
  };
  s.eval_pair_moments = [](long, const PairMoments& m, double, double* out) {
    out[0] = m.cov + m.mean_prev * m.mean_cur;
  };
  return s;
}

AdditiveFunctional square_statistic() {
  AdditiveFunctional s;
  s.dim = 1;
  s.eval = [](long, double, double xc, double, double* out) { out[0] = xc * xc; };
  s.eval_given_prev_moments = [](long, double, double, double xc, double, double* out) {
    out[0] = xc * xc;
  };
  s.eval_pair_moments = [](long, const PairMoments& m, double, double* out) {
    out[0] = m.var_cur + m.mean_cur * m.mean_cur;
  };
  return s;
}

AdditiveFunctional em_statistic() {
  AdditiveFunctional s;
  s.dim = 4;
  s.includes_initial_term = true;
  s.eval = [](long, double xp, double xc, double y, double* out) {
    double r = y - xc;
    out[0] = r * r;
    out[1] = xp * xp;
    out[2] = xp * xc;
    out[3] = xc * xc;
  };
  s.eval_init = [](double x0, double y0, double* out) {
    double r = y0 - x0;
    out[0] = r * r;
    out[1] = out[2] = out[3] = 0.0;
  };
  s.eval_given_prev_moments = [](long, double m1, double m2, double xc, double y, double* out) {
    double r = y - xc;
    out[0] = r * r;
    out[1] = m2;
    out[2] = m1 * xc;
    out[3] = xc * xc;
  };
  s.eval_pair_moments = [](long, const PairMoments& m, double y, double* out) {
    double ex2p = m.var_prev + m.mean_prev * m.mean_prev;
    double ex2c = m.var_cur + m.mean_cur * m.mean_cur;
    out[0] = y * y - 2.0 * y * m.mean_cur + ex2c;
    out[1] = ex2p;
    out[2] = m.cov + m.mean_prev * m.mean_cur;
    out[3] = ex2c;
  };
  s.eval_init_moments = [](double mean0, double m2_0, double y0, double* out) {
    out[0] = y0 * y0 - 2.0 * y0 * mean0 + m2_0;
    out[1] = out[2] = out[3] = 0.0;
  };
  return s;
}

namespace score_terms {

void transition(const Theta& theta, double xp, double xc, double* out) {
  double r = xc - theta.rho * xp;
  double t2 = theta.tau2;
  out[kRho] = xp * r / t2;
  out[kTau2] = -0.5 / t2 + 0.5 * r * r / (t2 * t2);
  out[kSigma2] = 0.0;
}

void transition_given_prev_moments(const Theta& theta, double m1, double m2, double xc,
                                   double* out) {
  double t2 = theta.tau2;
  double rho = theta.rho;
  // E[x_prev (x_cur - rho x_prev)] and E[(x_cur - rho x_prev)^2] with x_cur fixed
  double e_lin = m1 * xc - rho * m2;
  double e_sq = xc * xc - 2.0 * rho * m1 * xc + rho * rho * m2;
  out[kRho] = e_lin / t2;
  out[kTau2] = -0.5 / t2 + 0.5 * e_sq / (t2 * t2);
  out[kSigma2] = 0.0;
}

void observation(const Theta& theta, double y, double x, double* out) {
  double s2 = theta.sigma2;
  double r = y - x;
  out[kRho] = 0.0;
  out[kTau2] = 0.0;
  out[kSigma2] = -0.5 / s2 + 0.5 * r * r / (s2 * s2);
}

void initial(const Theta& theta, const InitLaw& init, double x0, double* out) {
  out[kRho] = out[kTau2] = out[kSigma2] = 0.0;
  if (!init.is_stationary()) return;
  double rho = theta.rho;
  double v0 = theta.tau2 / (1.0 - rho * rho);
  double dl_dv = -0.5 / v0 + 0.5 * x0 * x0 / (v0 * v0);
  out[kRho] = dl_dv * 2.0 * rho * v0 / (1.0 - rho * rho);
  out[kTau2] = dl_dv / (1.0 - rho * rho);
}

}  // namespace score_terms

AdditiveFunctional score_statistic(const Theta& theta, InitLaw init) {
  AdditiveFunctional s;
  s.dim = 3;
  s.includes_initial_term = true;
  Theta th = theta;
  s.eval = [th](long, double xp, double xc, double y, double* out) {
    double g[3];
    score_terms::transition(th, xp, xc, out);
    score_terms::observation(th, y, xc, g);
    for (int i = 0; i < 3; ++i) out[i] += g[i];
  };
  s.eval_init = [th, init](double x0, double y0, double* out) {
    double g[3];
    score_terms::initial(th, init, x0, out);
    score_terms::observation(th, y0, x0, g);
    for (int i = 0; i < 3; ++i) out[i] += g[i];
  };
  s.eval_given_prev_moments = [th](long, double m1, double m2, double xc, double y, double* out) {
    double g[3];
    score_terms::transition_given_prev_moments(th, m1, m2, xc, out);
    score_terms::observation(th, y, xc, g);
    for (int i = 0; i < 3; ++i) out[i] += g[i];
  };
  s.eval_pair_moments = [th](long, const PairMoments& m, double y, double* out) {
    double t2 = th.tau2;
    double rho = th.rho;
    double ex2p = m.var_prev + m.mean_prev * m.mean_prev;
    double ex2c = m.var_cur + m.mean_cur * m.mean_cur;
    double exc = m.cov + m.mean_prev * m.mean_cur;
    double e_lin = exc - rho * ex2p;
    double e_sq = ex2c - 2.0 * rho * exc + rho * rho * ex2p;
    out[kRho] = e_lin / t2;
    out[kTau2] = -0.5 / t2 + 0.5 * e_sq / (t2 * t2);
    double s2 = th.sigma2;
    double e_res = y * y - 2.0 * y * m.mean_cur + ex2c;
    out[kSigma2] = -0.5 / s2 + 0.5 * e_res / (s2 * s2);
  };
  s.eval_init_moments = [th, init](double mean0, double m2_0, double y0, double* out) {
    out[kRho] = out[kTau2] = out[kSigma2] = 0.0;
    if (init.is_stationary()) {
      double rho = th.rho;
      double v0 = th.tau2 / (1.0 - rho * rho);
      double dl_dv = -0.5 / v0 + 0.5 * m2_0 / (v0 * v0);
      out[kRho] = dl_dv * 2.0 * rho * v0 / (1.0 - rho * rho);
      out[kTau2] = dl_dv / (1.0 - rho * rho);
    }
    double s2 = th.sigma2;
    double e_res = y0 * y0 - 2.0 * y0 * mean0 + m2_0;
    out[kSigma2] += -0.5 / s2 + 0.5 * e_res / (s2 * s2);
  };
  return s;
}

}  // namespace sspe
