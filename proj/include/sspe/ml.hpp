#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "sspe/filter.hpp"
#include "sspe/model.hpp"

namespace sspe {

// gamma_n = scale * n^(-exponent); exponent in (0.5, 1] makes the sequence
// square-summable but not summable.
struct StepSizeSchedule {
  double exponent = 0.8;
  double scale = 1.0;

  void validate() const {
    if (!(exponent > 0.5 && exponent <= 1.0))
      throw std::invalid_argument("StepSizeSchedule: exponent must lie in (0.5, 1]");
    // scale 0 freezes the updates entirely; useful when only the filter matters
    if (!(scale >= 0.0)) throw std::invalid_argument("StepSizeSchedule: scale must be >= 0");
  }
  double operator()(long n) const { return scale * std::pow(static_cast<double>(n), -exponent); }
};

struct LambdaResult {
  Theta theta;                  // valid parameter (boundary values clamped)
  std::array<double, 3> raw{};  // unclamped estimates
  bool rho_clamped = false;
  bool tau2_boundary = false;
  bool sigma2_boundary = false;
};

// M-step map for the linear-Gaussian model. Takes the per-transition average
// z = S_T / T of the 4-vector EM statistic and the transition count T, returns
// the maximizer of the complete-data likelihood given the initial state:
//   rho    = z3 / z2
//   tau2   = z4 - 2 rho z3 + rho^2 z2    (z4 - z3^2/z2 when rho is free)
//   sigma2 = z1 * T / (T + 1)
// Fixed components of `base` pass through untouched.
LambdaResult lambda_map(const std::array<double, 4>& z, long horizon, const Theta& base);

// Smoothing backend selection shared by the ML drivers.
enum class BackendKind { PathSpace, FixedLag, Ffbsm, Forward, Paris, Exact };

struct SmootherBackend {
  BackendKind kind = BackendKind::Forward;
  long lag = 20;         // FixedLag
  int paris_samples = 2; // Paris

  static SmootherBackend exact() { return {BackendKind::Exact}; }
  static SmootherBackend forward() { return {BackendKind::Forward}; }
  static SmootherBackend pathspace() { return {BackendKind::PathSpace}; }
  static SmootherBackend ffbsm() { return {BackendKind::Ffbsm}; }
  static SmootherBackend fixedlag(long lag) { return {BackendKind::FixedLag, lag}; }
  static SmootherBackend paris(int k) { return {BackendKind::Paris, 20, k}; }
};

struct MlOptions {
  FilterConfig filter;                      // particle count, proposal, resampling
  InitLaw init = InitLaw::stationary();
  bool record_exact_loglik = true;          // Kalman diagnostic per iteration
  long online_loglik_stride = 0;            // 0: never compute online exact loglik
};

struct MlTracePoint {
  long index = 0;  // iteration (offline) or time (online)
  Theta theta;
  double exact_loglik = std::numeric_limits<double>::quiet_NaN();
};

struct MlRun {
  std::vector<MlTracePoint> trace;  // trace.front() is the initial point
  long boundary_clamps = 0;
  Theta final_theta() const { return trace.back().theta; }
};

// Batch EM: per iteration, estimate the EM statistic with the backend and
// apply lambda_map.
MlRun offline_em(std::span<const double> y, const Theta& theta0, int iters,
                 const SmootherBackend& backend, const MlOptions& options, std::uint64_t seed);

struct GradientOptions {
  double step = 0.1;              // fixed step in unconstrained coordinates
  bool oracle_halving = true;     // halve on exact-loglik decrease (Kalman available)
  int max_halvings = 40;
  std::optional<StepSizeSchedule> schedule;  // overrides fixed step when set
};

// Batch steepest ascent on the log-likelihood via Fisher-identity score
// estimates, in unconstrained coordinates.
MlRun offline_gradient(std::span<const double> y, const Theta& theta0, int iters,
                       const SmootherBackend& backend, const GradientOptions& gopt,
                       const MlOptions& options, std::uint64_t seed);

enum class OnlineSmoothing { Forward, PathSpace };

// Recursive ML: one pass over the data; the parameter moves along the
// time-varying score increment after each observation.
MlRun online_gradient(std::span<const double> y, const Theta& theta0,
                      const StepSizeSchedule& schedule, OnlineSmoothing smoothing,
                      const MlOptions& options, std::uint64_t seed);

struct OnlineEmOptions {
  long n_freeze = 50;  // no M-step before this time
  // test hook: when set, receives the running averaged statistic each step
  std::vector<std::array<double, 4>>* stat_trace = nullptr;
  // test hook: gamma_n = 1 exactly (telescoping identity)
  bool constant_unit_gamma = false;
};

MlRun online_em(std::span<const double> y, const Theta& theta0, const StepSizeSchedule& schedule,
                OnlineSmoothing smoothing, const OnlineEmOptions& em_options,
                const MlOptions& options, std::uint64_t seed);

}  // namespace sspe
