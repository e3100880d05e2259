#pragma once

#include <functional>
#include <vector>

#include "sspe/model.hpp"

namespace sspe {

// Exact joint Gaussian moments of (x_{k-1}, x_k) given all data; produced by the
// Kalman smoother and consumed by exact-expectation evaluators.
struct PairMoments {
  double mean_prev = 0.0;
  double mean_cur = 0.0;
  double var_prev = 0.0;
  double var_cur = 0.0;
  double cov = 0.0;
};

// A vector-valued per-transition statistic s_k(x_{k-1}, x_k) whose smoothed sum
// S_n = E[ sum_k s_k | y_{0:n} ] is the quantity every smoothing estimator and
// every ML driver works with. The optional members unlock fast or exact paths:
//
//   eval_given_prev_moments : E[s_k | x_k, moments of x_{k-1}] for statistics
//     quadratic in x_{k-1}. Lets O(N^2) smoothers accumulate three row moments
//     instead of calling eval() per particle pair.
//   eval_pair_moments / eval_init_moments : exact expectations under Gaussian
//     moments; required by the Kalman oracle.
struct AdditiveFunctional {
  int dim = 0;
  bool includes_initial_term = false;

  std::function<void(long k, double x_prev, double x_cur, double y_k, double* out)> eval;
  std::function<void(double x0, double y0, double* out)> eval_init;

  std::function<void(long k, double m1, double m2, double x_cur, double y_k, double* out)>
      eval_given_prev_moments;

  std::function<void(long k, const PairMoments&, double y_k, double* out)> eval_pair_moments;
  std::function<void(double mean0, double m2_0, double y0, double* out)> eval_init_moments;
};

// s_k = x_{k-1} x_k (scalar).
AdditiveFunctional cross_product_statistic();

// s_k = x_k^2 (scalar).
AdditiveFunctional square_statistic();

// The 4-vector EM statistic ((y_k - x_k)^2, x_{k-1}^2, x_{k-1} x_k, x_k^2) for
// k >= 1 plus the k = 0 observation residual folded into component 0.
AdditiveFunctional em_statistic();

// Complete-data log-density gradient terms of Fisher's identity, dimension 3
// (d/d rho, d/d tau2, d/d sigma2) at a fixed theta. The initial term carries
// grad log mu + grad log g(y_0 | x_0); grad log mu vanishes for a fixed InitLaw.
AdditiveFunctional score_statistic(const Theta& theta, InitLaw init = InitLaw::stationary());

namespace score_terms {
// Per-term pieces shared with the time-varying online score.
void transition(const Theta& theta, double x_prev, double x_cur, double* out3);
void transition_given_prev_moments(const Theta& theta, double m1, double m2, double x_cur,
                                   double* out3);
void observation(const Theta& theta, double y, double x, double* out3);
void initial(const Theta& theta, const InitLaw& init, double x0, double* out3);
}  // namespace score_terms

}  // namespace sspe
