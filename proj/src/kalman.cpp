#include "sspe/kalman.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sspe/ml.hpp"
#include "sspe/numeric.hpp"

namespace sspe {

double KalmanResult::loglik() const {
  double s = 0.0;
  for (double v : loglik_increments) s += v;
  return s;
}

namespace {

KalmanResult run_filter_impl(const Theta& theta, std::span<const double> y, double pred_mean0,
                             double pred_var0) {
  theta.validate();
  if (y.empty()) throw std::invalid_argument("kalman_filter: no observations");
  const std::size_t n = y.size();
  KalmanResult r;
  r.pred_mean.resize(n);
  r.pred_var.resize(n);
  r.filt_mean.resize(n);
  r.filt_var.resize(n);
  r.loglik_increments.resize(n);

  double mp = pred_mean0;
  double pp = pred_var0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!std::isfinite(y[t]))
      throw std::invalid_argument("kalman_filter: non-finite observation at index " +
                                  std::to_string(t));
    if (t > 0) {
      mp = theta.rho * r.filt_mean[t - 1];
      pp = theta.rho * theta.rho * r.filt_var[t - 1] + theta.tau2;
    }
    r.pred_mean[t] = mp;
    r.pred_var[t] = pp;
    double s = pp + theta.sigma2;
    double k = pp / s;
    r.loglik_increments[t] = log_normal_pdf(y[t], mp, s);
    r.filt_mean[t] = mp + k * (y[t] - mp);
    r.filt_var[t] = (1.0 - k) * pp;
  }
  return r;
}

}  // namespace

KalmanResult kalman_filter(const Theta& theta, std::span<const double> y, InitLaw init) {
  return run_filter_impl(theta, y, 0.0, init.variance(theta));
}

KalmanResult kalman_filter_chained(const Theta& theta, std::span<const double> y,
                                   const KalmanState& resume) {
  return run_filter_impl(theta, y, theta.rho * resume.mean,
                         theta.rho * theta.rho * resume.var + theta.tau2);
}

KalmanState final_state(const KalmanResult& r) {
  return {r.filt_mean.back(), r.filt_var.back()};
}

double kalman_loglik(const Theta& theta, std::span<const double> y, InitLaw init) {
  return kalman_filter(theta, y, init).loglik();
}

void rts_smoother(KalmanResult& r, const Theta& theta) {
  const std::size_t n = r.filt_mean.size();
  if (n == 0) throw std::invalid_argument("rts_smoother: filter pass missing");
  r.smooth_mean.assign(n, 0.0);
  r.smooth_var.assign(n, 0.0);
  r.lag1_cov.assign(n > 1 ? n - 1 : 0, 0.0);
  r.smooth_mean[n - 1] = r.filt_mean[n - 1];
  r.smooth_var[n - 1] = r.filt_var[n - 1];
  for (std::size_t t = n - 1; t-- > 0;) {
    double gain = r.filt_var[t] * theta.rho / r.pred_var[t + 1];
    r.smooth_mean[t] = r.filt_mean[t] + gain * (r.smooth_mean[t + 1] - r.pred_mean[t + 1]);
    r.smooth_var[t] = r.filt_var[t] + gain * gain * (r.smooth_var[t + 1] - r.pred_var[t + 1]);
    r.lag1_cov[t] = gain * r.smooth_var[t + 1];
  }
}

std::vector<double> exact_additive(const Theta& theta, std::span<const double> y,
                                   const AdditiveFunctional& s, InitLaw init) {
  if (!s.eval_pair_moments)
    throw std::invalid_argument(
        "exact_additive: functional has no Gaussian-moment evaluator (not quadratic)");
  if (s.includes_initial_term && !s.eval_init_moments)
    throw std::invalid_argument("exact_additive: initial term has no moment evaluator");

  KalmanResult r = kalman_filter(theta, y, init);
  rts_smoother(r, theta);

  std::vector<double> total(s.dim, 0.0);
  std::vector<double> term(s.dim);
  if (s.includes_initial_term) {
    double m0 = r.smooth_mean[0];
    double m2 = r.smooth_var[0] + m0 * m0;
    s.eval_init_moments(m0, m2, y[0], term.data());
    for (int i = 0; i < s.dim; ++i) total[i] += term[i];
  }
  for (std::size_t k = 1; k < y.size(); ++k) {
    PairMoments m;
    m.mean_prev = r.smooth_mean[k - 1];
    m.mean_cur = r.smooth_mean[k];
    m.var_prev = r.smooth_var[k - 1];
    m.var_cur = r.smooth_var[k];
    m.cov = r.lag1_cov[k - 1];
    s.eval_pair_moments(static_cast<long>(k), m, y[k], term.data());
    for (int i = 0; i < s.dim; ++i) total[i] += term[i];
  }
  return total;
}

std::array<double, 3> exact_score(const Theta& theta, std::span<const double> y, InitLaw init) {
  std::vector<double> g = exact_additive(theta, y, score_statistic(theta, init), init);
  return {g[0], g[1], g[2]};
}

double GridPosterior::weight_at(std::size_t i, std::size_t j) const {
  std::size_t cols = axes.size() == 2 ? axes[1].values.size() : 1;
  return weights[i * cols + j];
}

namespace {

std::vector<double> cell_widths(const std::vector<double>& v) {
  std::size_t m = v.size();
  std::vector<double> w(m, 1.0);
  if (m == 1) return w;
  for (std::size_t i = 0; i < m; ++i) {
    double lo = (i == 0) ? v[0] : 0.5 * (v[i - 1] + v[i]);
    double hi = (i + 1 == m) ? v[m - 1] : 0.5 * (v[i] + v[i + 1]);
    w[i] = hi - lo;
  }
  // endpoint cells get a half-width inside plus the same amount outside
  w[0] += v.size() > 1 ? 0.5 * (v[1] - v[0]) : 0.0;
  w[m - 1] += v.size() > 1 ? 0.5 * (v[m - 1] - v[m - 2]) : 0.0;
  return w;
}

void check_axis(const GridAxis& axis, const Theta& base) {
  if (axis.values.empty()) throw std::invalid_argument("grid axis has no values");
  for (std::size_t i = 1; i < axis.values.size(); ++i)
    if (!(axis.values[i] > axis.values[i - 1]))
      throw std::invalid_argument("grid axis must be strictly increasing");
  if (!base.free_mask[axis.param])
    throw std::invalid_argument("grid axis refers to a fixed parameter");
  if (axis.param == kRho) {
    if (axis.values.front() < -1.0 || axis.values.back() > 1.0)
      throw std::invalid_argument("rho grid leaves [-1,1]");
  } else if (axis.values.front() <= 0.0) {
    throw std::invalid_argument("variance grid must be positive");
  }
}

}  // namespace

GridPosterior grid_posterior(const Theta& base, const PriorSpec& prior,
                             std::span<const double> y, std::vector<GridAxis> axes,
                             InitLaw init) {
  prior.validate();
  if (axes.empty() || axes.size() > 2)
    throw std::invalid_argument("grid_posterior: need 1 or 2 free-parameter axes");
  int n_free = 0;
  for (bool f : base.free_mask) n_free += f;
  if (static_cast<std::size_t>(n_free) != axes.size())
    throw std::invalid_argument("grid_posterior: axes must match the free parameters");
  for (const auto& a : axes) check_axis(a, base);

  GridPosterior g;
  g.axes = std::move(axes);
  std::size_t rows = g.axes[0].values.size();
  std::size_t cols = g.axes.size() == 2 ? g.axes[1].values.size() : 1;
  g.log_unnorm.resize(rows * cols);
  g.weights.resize(rows * cols);

  std::vector<double> w0 = cell_widths(g.axes[0].values);
  std::vector<double> w1 =
      g.axes.size() == 2 ? cell_widths(g.axes[1].values) : std::vector<double>{1.0};

  std::vector<double> log_cellw(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    Theta t = base;
    t[g.axes[0].param] = g.axes[0].values[i];
    for (std::size_t j = 0; j < cols; ++j) {
      if (g.axes.size() == 2) t[g.axes[1].param] = g.axes[1].values[j];
      double lp = prior.log_density_component(g.axes[0].param, t[g.axes[0].param]);
      if (g.axes.size() == 2)
        lp += prior.log_density_component(g.axes[1].param, t[g.axes[1].param]);
      g.log_unnorm[i * cols + j] = kalman_loglik(t, y, init) + lp;
      log_cellw[i * cols + j] = std::log(w0[i]) + (g.axes.size() == 2 ? std::log(w1[j]) : 0.0);
    }
  }

  std::vector<double> lw(rows * cols);
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = g.log_unnorm[i] + log_cellw[i];
  double lse = logsumexp(lw);
  if (!std::isfinite(lse)) throw std::runtime_error("grid_posterior: all grid mass underflowed");
  for (std::size_t i = 0; i < lw.size(); ++i) g.weights[i] = std::exp(lw[i] - lse);

  // a grid that truncates the posterior is rejected: boundary cells may not
  // carry appreciable mass, except where the grid already reaches the prior's
  // own support edge (rho at +-1); single-point axes excepted
  for (std::size_t ax = 0; ax < g.axes.size(); ++ax) {
    const auto& vals = g.axes[ax].values;
    std::size_t m = vals.size();
    if (m < 3) continue;
    double cell = (vals.back() - vals.front()) / static_cast<double>(m - 1);
    bool check_lo = true, check_hi = true;
    if (g.axes[ax].param == kRho) {
      check_lo = vals.front() > -1.0 + cell;
      check_hi = vals.back() < 1.0 - cell;
    }
    double lo_mass = 0.0, hi_mass = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        std::size_t idx = ax == 0 ? i : j;
        if (idx == 0) lo_mass += g.weights[i * cols + j];
        if (idx == m - 1) hi_mass += g.weights[i * cols + j];
      }
    if ((check_lo && lo_mass > 1e-3) || (check_hi && hi_mass > 1e-3))
      throw std::invalid_argument(
          "grid_posterior: grid does not cover the posterior support (boundary mass " +
          std::to_string(std::max(lo_mass, hi_mass)) + " on axis " + std::to_string(ax) + ")");
  }

  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double w = g.weights[i * cols + j];
      double v0 = g.axes[0].values[i];
      g.mean[g.axes[0].param] += w * v0;
      g.variance[g.axes[0].param] += w * v0 * v0;
      if (g.axes.size() == 2) {
        double v1 = g.axes[1].values[j];
        g.mean[g.axes[1].param] += w * v1;
        g.variance[g.axes[1].param] += w * v1 * v1;
      }
    }
  for (const auto& a : g.axes) g.variance[a.param] -= g.mean[a.param] * g.mean[a.param];
  return g;
}

GridMl grid_ml(const Theta& base, std::span<const double> y, std::vector<GridAxis> axes,
               InitLaw init) {
  if (axes.empty() || axes.size() > 2) throw std::invalid_argument("grid_ml: need 1 or 2 axes");
  for (const auto& a : axes) check_axis(a, base);
  GridMl out;
  out.loglik = kNegInf;
  std::size_t rows = axes[0].values.size();
  std::size_t cols = axes.size() == 2 ? axes[1].values.size() : 1;
  for (std::size_t i = 0; i < rows; ++i) {
    Theta t = base;
    t[axes[0].param] = axes[0].values[i];
    for (std::size_t j = 0; j < cols; ++j) {
      if (axes.size() == 2) t[axes[1].param] = axes[1].values[j];
      double ll = kalman_loglik(t, y, init);
      if (ll > out.loglik) {
        out.loglik = ll;
        out.argmax = t;
      }
    }
  }
  for (const auto& a : axes)
    if (a.values.size() > 1)
      out.cell_width[a.param] = (a.values.back() - a.values.front()) /
                                static_cast<double>(a.values.size() - 1);
  return out;
}

EmStepResult exact_em_step(const Theta& theta, std::span<const double> y, InitLaw init) {
  if (y.size() < 2) throw std::invalid_argument("exact_em_step: need at least two observations");
  long horizon = static_cast<long>(y.size()) - 1;
  std::vector<double> stats = exact_additive(theta, y, em_statistic(), init);
  std::array<double, 4> z;
  for (int i = 0; i < 4; ++i) z[i] = stats[i] / static_cast<double>(horizon);
  LambdaResult step = lambda_map(z, horizon, theta);
  EmStepResult out;
  out.theta = step.theta;
  out.loglik_before = kalman_loglik(theta, y, init);
  out.loglik_after = kalman_loglik(step.theta, y, init);
  return out;
}

}  // namespace sspe
