#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "sspe/additive.hpp"
#include "sspe/model.hpp"
#include "sspe/prior.hpp"

namespace sspe {

// Exact moments and log-likelihood of the scalar linear-Gaussian model; the
// oracle every particle estimator in this library is checked against.
struct KalmanResult {
  std::vector<double> pred_mean, pred_var;    // p(x_n | y_{0:n-1})
  std::vector<double> filt_mean, filt_var;    // p(x_n | y_{0:n})
  std::vector<double> loglik_increments;      // log p(y_n | y_{0:n-1})
  std::vector<double> smooth_mean, smooth_var;  // p(x_n | y_{0:T}); filled by rts_smoother
  std::vector<double> lag1_cov;               // Cov(x_n, x_{n+1} | y_{0:T}), n = 0..T-1

  double loglik() const;
  bool has_smooth() const { return !smooth_mean.empty(); }
};

// Filtered state after the last observation, for chaining split sequences.
struct KalmanState {
  double mean = 0.0;
  double var = 0.0;
};

KalmanResult kalman_filter(const Theta& theta, std::span<const double> y,
                           InitLaw init = InitLaw::stationary());

// Continues a filter whose last filtered moments are `resume`.
KalmanResult kalman_filter_chained(const Theta& theta, std::span<const double> y,
                                   const KalmanState& resume);

KalmanState final_state(const KalmanResult& r);

double kalman_loglik(const Theta& theta, std::span<const double> y,
                     InitLaw init = InitLaw::stationary());

// Fills smooth_mean / smooth_var / lag1_cov (Rauch-Tung-Striebel).
void rts_smoother(KalmanResult& r, const Theta& theta);

// Exact smoothed expectation of an additive functional. Requires the
// functional's Gaussian-moment evaluators; anything else is rejected.
std::vector<double> exact_additive(const Theta& theta, std::span<const double> y,
                                   const AdditiveFunctional& s,
                                   InitLaw init = InitLaw::stationary());

// Exact score via Fisher's identity, in natural coordinates (rho, tau2, sigma2).
// Components of fixed parameters are reported too.
std::array<double, 3> exact_score(const Theta& theta, std::span<const double> y,
                                  InitLaw init = InitLaw::stationary());

struct GridAxis {
  int param = 0;                // ParamIndex
  std::vector<double> values;   // strictly increasing
};

struct GridPosterior {
  std::vector<GridAxis> axes;         // 1 or 2
  std::vector<double> log_unnorm;     // row-major over axes
  std::vector<double> weights;        // normalized, sums to 1
  std::array<double, 3> mean{};       // posterior mean per free param (others 0)
  std::array<double, 3> variance{};

  double weight_at(std::size_t i, std::size_t j = 0) const;
};

// Exact (up to discretization) posterior over at most two free parameters,
// all other components held at `base`.
GridPosterior grid_posterior(const Theta& base, const PriorSpec& prior,
                             std::span<const double> y, std::vector<GridAxis> axes,
                             InitLaw init = InitLaw::stationary());

struct GridMl {
  Theta argmax;
  double loglik;
  std::array<double, 3> cell_width{};  // grid resolution per free param
};

// Maximum-likelihood point on a grid (flat-prior argmax).
GridMl grid_ml(const Theta& base, std::span<const double> y, std::vector<GridAxis> axes,
               InitLaw init = InitLaw::stationary());

struct EmStepResult {
  Theta theta;
  double loglik_before = 0.0;
  double loglik_after = 0.0;
};

// One exact EM iteration (exact E-step + closed-form M-step from module ml).
EmStepResult exact_em_step(const Theta& theta, std::span<const double> y,
                           InitLaw init = InitLaw::stationary());

}  // namespace sspe
