#include "sspe/ml.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sspe/additive.hpp"
#include "sspe/kalman.hpp"
#include "sspe/numeric.hpp"
#include "sspe/smooth.hpp"

namespace sspe {

namespace {
constexpr double kTinyVar = 1e-12;
constexpr double kRhoEps = 1e-9;
constexpr double kMaxAtanh = 8.0;    // |rho| <= tanh(8) ~ 1 - 2e-7
constexpr double kMaxLogVar = 23.0;  // variances within [1e-10, 1e10]
}  // namespace

LambdaResult lambda_map(const std::array<double, 4>& z, long horizon, const Theta& base) {
  if (horizon < 1) throw std::invalid_argument("lambda_map: need at least one transition");
  if (!(z[1] > 0.0) || !(z[3] > 0.0))
    throw std::invalid_argument("lambda_map: nonpositive second-moment statistic");

  LambdaResult out;
  out.theta = base;
  out.raw = {base.rho, base.tau2, base.sigma2};

  double rho = base.rho;
  if (base.free_mask[kRho]) {
    rho = z[2] / z[1];
    out.raw[kRho] = rho;
    if (std::abs(rho) > 1.0 - kRhoEps) {
      rho = std::copysign(1.0 - kRhoEps, rho);
      out.rho_clamped = true;
    }
    out.theta.rho = rho;
  }
  if (base.free_mask[kTau2]) {
    double t2 = z[3] - 2.0 * rho * z[2] + rho * rho * z[1];
    out.raw[kTau2] = t2;
    if (!(t2 > kTinyVar)) {
      t2 = kTinyVar;
      out.tau2_boundary = true;
    }
    out.theta.tau2 = t2;
  }
  if (base.free_mask[kSigma2]) {
    double s2 = z[0] * static_cast<double>(horizon) / static_cast<double>(horizon + 1);
    out.raw[kSigma2] = s2;
    if (!(s2 > kTinyVar)) {
      s2 = kTinyVar;
      out.sigma2_boundary = true;
    }
    out.theta.sigma2 = s2;
  }
  return out;
}

namespace {

std::vector<double> estimate_additive(std::span<const double> y, const Theta& theta,
                                      const AdditiveFunctional& s,
                                      const SmootherBackend& backend, const MlOptions& options,
                                      const Rng& rng) {
  if (backend.kind == BackendKind::Exact) return exact_additive(theta, y, s, options.init);

  FilterConfig cfg = options.filter;
  cfg.store_systems = (backend.kind == BackendKind::Ffbsm);
  ModelContract model = make_lg_contract(theta, cfg.proposal, options.init);

  switch (backend.kind) {
    case BackendKind::PathSpace: {
      PathspaceSmoother sm(s, y);
      FilterObserver* obs[] = {&sm};
      run_filter(model, y, cfg, rng, obs);
      return sm.current_estimate();
    }
    case BackendKind::FixedLag: {
      FixedLagSmoother sm(s, y, backend.lag);
      FilterObserver* obs[] = {&sm};
      run_filter(model, y, cfg, rng, obs);
      return sm.current_estimate();
    }
    case BackendKind::Forward: {
      ForwardSmoother sm(model, s, y);
      FilterObserver* obs[] = {&sm};
      run_filter(model, y, cfg, rng, obs);
      return sm.current_estimate();
    }
    case BackendKind::Paris: {
      ParisSmoother sm(model, s, y, backend.paris_samples, rng.child(0x70617269));
      FilterObserver* obs[] = {&sm};
      run_filter(model, y, cfg, rng, obs);
      return sm.current_estimate();
    }
    case BackendKind::Ffbsm: {
      FilterOutput out = run_filter(model, y, cfg, rng);
      return ffbsm_additive(out, model, s, y);
    }
    default:
      throw std::logic_error("estimate_additive: unknown backend");
  }
}

double trace_loglik(std::span<const double> y, const Theta& theta, const MlOptions& options) {
  if (!options.record_exact_loglik) return std::numeric_limits<double>::quiet_NaN();
  return kalman_loglik(theta, y, options.init);
}

}  // namespace

MlRun offline_em(std::span<const double> y, const Theta& theta0, int iters,
                 const SmootherBackend& backend, const MlOptions& options, std::uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("offline_em: iters must be >= 1");
  if (y.size() < 2) throw std::invalid_argument("offline_em: need at least two observations");
  theta0.validate();
  const long horizon = static_cast<long>(y.size()) - 1;
  Rng root(seed);

  MlRun run;
  Theta theta = theta0;
  run.trace.push_back({0, theta, trace_loglik(y, theta, options)});
  AdditiveFunctional em_stat = em_statistic();
  for (int k = 1; k <= iters; ++k) {
    std::vector<double> stats;
    try {
      stats = estimate_additive(y, theta, em_stat, backend, options, root.child(k));
    } catch (const std::exception& e) {
      throw std::runtime_error("offline_em iteration " + std::to_string(k) + ": " + e.what());
    }
    std::array<double, 4> z;
    for (int i = 0; i < 4; ++i) z[i] = stats[i] / static_cast<double>(horizon);
    LambdaResult step = lambda_map(z, horizon, theta);
    run.boundary_clamps += step.rho_clamped + step.tau2_boundary + step.sigma2_boundary;
    theta = step.theta;
    run.trace.push_back({k, theta, trace_loglik(y, theta, options)});
  }
  return run;
}

MlRun offline_gradient(std::span<const double> y, const Theta& theta0, int iters,
                       const SmootherBackend& backend, const GradientOptions& gopt,
                       const MlOptions& options, std::uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("offline_gradient: iters must be >= 1");
  theta0.validate();
  if (gopt.schedule) gopt.schedule->validate();
  Rng root(seed);

  MlRun run;
  Theta theta = theta0;
  std::array<double, 3> u = to_unconstrained(theta);
  double cur_ll = kalman_loglik(theta, y, options.init);
  run.trace.push_back({0, theta, options.record_exact_loglik
                                     ? cur_ll
                                     : std::numeric_limits<double>::quiet_NaN()});
  double step = gopt.step;

  for (int k = 1; k <= iters; ++k) {
    std::array<double, 3> g;
    if (backend.kind == BackendKind::Exact) {
      g = exact_score(theta, y, options.init);
    } else {
      std::vector<double> est = estimate_additive(y, theta, score_statistic(theta, options.init),
                                                  backend, options, root.child(k));
      g = {est[0], est[1], est[2]};
    }
    std::array<double, 3> jac = unconstrained_jacobian(theta);
    std::array<double, 3> gu{};
    for (int i = 0; i < 3; ++i) {
      gu[i] = theta.free_mask[i] ? g[i] * jac[i] : 0.0;
      if (!std::isfinite(gu[i]))
        throw std::runtime_error("offline_gradient: non-finite gradient at iteration " +
                                 std::to_string(k));
    }

    if (gopt.schedule) {
      double gamma = (*gopt.schedule)(k);
      for (int i = 0; i < 3; ++i) u[i] += gamma * gu[i];
      theta = from_unconstrained(u, theta);
      cur_ll = kalman_loglik(theta, y, options.init);
    } else {
      // fixed step, halved until the exact log-likelihood stops decreasing
      int halvings = 0;
      for (;;) {
        std::array<double, 3> u_try = u;
        for (int i = 0; i < 3; ++i) u_try[i] += step * gu[i];
        Theta theta_try = from_unconstrained(u_try, theta);
        double ll_try = kalman_loglik(theta_try, y, options.init);
        if (ll_try >= cur_ll || halvings >= gopt.max_halvings) {
          if (ll_try >= cur_ll) {
            u = u_try;
            theta = theta_try;
            cur_ll = ll_try;
            step = std::min(step * 1.5, gopt.step);
          }
          break;
        }
        step *= 0.5;
        ++halvings;
      }
    }
    run.trace.push_back({k, theta, options.record_exact_loglik
                                       ? cur_ll
                                       : std::numeric_limits<double>::quiet_NaN()});
  }
  return run;
}

// --------------------------------------------------------------------------
// Online drivers
// --------------------------------------------------------------------------

namespace {

struct UClamp {
  long count = 0;
  void apply(std::array<double, 3>& u) {
    for (int i = 0; i < 3; ++i) {
      double lim = (i == kRho) ? kMaxAtanh : kMaxLogVar;
      if (u[i] > lim) { u[i] = lim; ++count; }
      if (u[i] < -lim) { u[i] = -lim; ++count; }
    }
  }
};

// One backward-kernel sweep: for every current particle i computes the kernel
// expectation of the previous value table (into vbar) and the first two
// moments of the previous positions, then lets `combine` finish V_next[i].
template <class Combine>
void backward_value_update(const ModelContract& model, const ParticleSystem& prev,
                           const ParticleSystem& cur, const std::vector<double>& v, int dim,
                           std::vector<double>& v_next, Combine&& combine) {
  const int n = cur.size();
  const int np = prev.size();
  v_next.assign(static_cast<std::size_t>(n) * dim, 0.0);
  std::vector<double> row(np), logw(np), vbar(dim);
  for (int j = 0; j < np; ++j) logw[j] = std::log(prev.norm_weights[j]);
  for (int i = 0; i < n; ++i) {
    double xi = cur.positions[i];
    double mx = kNegInf;
    for (int j = 0; j < np; ++j) {
      row[j] = logw[j] + model.trans_logpdf(xi, prev.positions[j]);
      if (row[j] > mx) mx = row[j];
    }
    if (!std::isfinite(mx)) throw UnreachableParticleError(cur.time_index, i);
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    std::fill(vbar.begin(), vbar.end(), 0.0);
    for (int j = 0; j < np; ++j) {
      double e = std::exp(row[j] - mx);
      m0 += e;
      double xj = prev.positions[j];
      m1 += e * xj;
      m2 += e * xj * xj;
      const double* vj = &v[j * dim];
      for (int d = 0; d < dim; ++d) vbar[d] += e * vj[d];
    }
    for (int d = 0; d < dim; ++d) vbar[d] /= m0;
    combine(i, vbar.data(), m1 / m0, m2 / m0, xi, &v_next[i * dim]);
  }
}

std::vector<double> table_estimate(const ParticleSystem& sys, const std::vector<double>& v,
                                   int dim) {
  std::vector<double> est(dim, 0.0);
  for (int i = 0; i < sys.size(); ++i)
    for (int d = 0; d < dim; ++d) est[d] += sys.norm_weights[i] * v[i * dim + d];
  return est;
}

}  // namespace

MlRun online_gradient(std::span<const double> y, const Theta& theta0,
                      const StepSizeSchedule& schedule, OnlineSmoothing smoothing,
                      const MlOptions& options, std::uint64_t seed) {
  schedule.validate();
  theta0.validate();
  if (y.empty()) throw std::invalid_argument("online_gradient: no observations");
  Rng root(seed);

  MlRun run;
  Theta theta = theta0;
  std::array<double, 3> u = to_unconstrained(theta);
  UClamp clamp;
  FilterRunner runner(options.filter);
  const int n_particles = options.filter.num_particles;

  std::vector<double> v, v_next;
  std::vector<double> prev_score(3, 0.0);

  for (std::size_t n = 0; n < y.size(); ++n) {
    ModelContract model = make_lg_contract(theta, options.filter.proposal, options.init);
    runner.advance(model, y[n], root);
    const ParticleSystem& cur = runner.current();
    std::array<double, 3> jac = unconstrained_jacobian(theta);

    if (n == 0) {
      v.assign(static_cast<std::size_t>(n_particles) * 3, 0.0);
      for (int i = 0; i < n_particles; ++i) {
        double term[3], g[3];
        score_terms::initial(theta, options.init, cur.positions[i], term);
        score_terms::observation(theta, y[0], cur.positions[i], g);
        for (int d = 0; d < 3; ++d) v[i * 3 + d] = (term[d] + g[d]) * jac[d];
      }
    } else if (smoothing == OnlineSmoothing::Forward) {
      const Theta th = theta;
      const double yk = y[n];
      backward_value_update(model, runner.previous(), cur, v, 3, v_next,
                            [&](int, const double* vbar, double m1, double m2, double xi,
                                double* out) {
                              double t[3], g[3];
                              score_terms::transition_given_prev_moments(th, m1, m2, xi, t);
                              score_terms::observation(th, yk, xi, g);
                              for (int d = 0; d < 3; ++d)
                                out[d] = vbar[d] + (t[d] + g[d]) * jac[d];
                            });
      v.swap(v_next);
    } else {
      const ParticleSystem& prev = runner.previous();
      v_next.assign(static_cast<std::size_t>(n_particles) * 3, 0.0);
      for (int i = 0; i < n_particles; ++i) {
        int a = cur.ancestors[i];
        double t[3], g[3];
        score_terms::transition(theta, prev.positions[a], cur.positions[i], t);
        score_terms::observation(theta, y[n], cur.positions[i], g);
        for (int d = 0; d < 3; ++d)
          v_next[i * 3 + d] = v[a * 3 + d] + (t[d] + g[d]) * jac[d];
      }
      v.swap(v_next);
    }

    std::vector<double> score = table_estimate(cur, v, 3);
    double gamma = schedule(static_cast<long>(n) + 1);
    bool moved = false;
    for (int d = 0; d < 3; ++d) {
      double incr = score[d] - prev_score[d];
      if (theta.free_mask[d] && gamma * incr != 0.0) {
        u[d] += gamma * incr;
        moved = true;
      }
      prev_score[d] = score[d];
    }
    if (moved) {
      clamp.apply(u);
      theta = from_unconstrained(u, theta);
    }

    double ll = std::numeric_limits<double>::quiet_NaN();
    if (options.online_loglik_stride > 0 &&
        (n % options.online_loglik_stride == 0 || n + 1 == y.size()))
      ll = kalman_loglik(theta, y.subspan(0, n + 1), options.init);
    run.trace.push_back({static_cast<long>(n), theta, ll});
  }
  run.boundary_clamps = clamp.count;
  return run;
}

MlRun online_em(std::span<const double> y, const Theta& theta0, const StepSizeSchedule& schedule,
                OnlineSmoothing smoothing, const OnlineEmOptions& em_options,
                const MlOptions& options, std::uint64_t seed) {
  if (!em_options.constant_unit_gamma) schedule.validate();
  theta0.validate();
  if (em_options.n_freeze < 1) throw std::invalid_argument("online_em: n_freeze must be >= 1");
  if (y.empty()) throw std::invalid_argument("online_em: no observations");
  Rng root(seed);

  MlRun run;
  Theta theta = theta0;
  FilterRunner runner(options.filter);
  const int n_particles = options.filter.num_particles;
  AdditiveFunctional em_stat = em_statistic();

  std::vector<double> v, v_next;
  long clamps = 0;

  for (std::size_t n = 0; n < y.size(); ++n) {
    ModelContract model = make_lg_contract(theta, options.filter.proposal, options.init);
    runner.advance(model, y[n], root);
    const ParticleSystem& cur = runner.current();
    double gamma = em_options.constant_unit_gamma ? 1.0 : schedule(static_cast<long>(n) + 1);

    if (n == 0) {
      v.assign(static_cast<std::size_t>(n_particles) * 4, 0.0);
      for (int i = 0; i < n_particles; ++i) {
        double t[4];
        em_stat.eval_init(cur.positions[i], y[0], t);
        for (int d = 0; d < 4; ++d) v[i * 4 + d] = gamma * t[d];
      }
    } else if (smoothing == OnlineSmoothing::Forward) {
      const double yk = y[n];
      const long k = static_cast<long>(n);
      backward_value_update(model, runner.previous(), cur, v, 4, v_next,
                            [&](int, const double* vbar, double m1, double m2, double xi,
                                double* out) {
                              double t[4];
                              em_stat.eval_given_prev_moments(k, m1, m2, xi, yk, t);
                              for (int d = 0; d < 4; ++d)
                                out[d] = (1.0 - gamma) * vbar[d] + gamma * t[d];
                            });
      v.swap(v_next);
    } else {
      const ParticleSystem& prev = runner.previous();
      v_next.assign(static_cast<std::size_t>(n_particles) * 4, 0.0);
      for (int i = 0; i < n_particles; ++i) {
        int a = cur.ancestors[i];
        double t[4];
        em_stat.eval(static_cast<long>(n), prev.positions[a], cur.positions[i], y[n], t);
        for (int d = 0; d < 4; ++d) v_next[i * 4 + d] = (1.0 - gamma) * v[a * 4 + d] + gamma * t[d];
      }
      v.swap(v_next);
    }

    std::vector<double> stat = table_estimate(cur, v, 4);
    if (em_options.stat_trace)
      em_options.stat_trace->push_back({stat[0], stat[1], stat[2], stat[3]});

    if (static_cast<long>(n) >= em_options.n_freeze && n >= 1) {
      LambdaResult step =
          lambda_map({stat[0], stat[1], stat[2], stat[3]}, static_cast<long>(n), theta);
      clamps += step.rho_clamped + step.tau2_boundary + step.sigma2_boundary;
      theta = step.theta;
    }

    double ll = std::numeric_limits<double>::quiet_NaN();
    if (options.online_loglik_stride > 0 &&
        (n % options.online_loglik_stride == 0 || n + 1 == y.size()))
      ll = kalman_loglik(theta, y.subspan(0, n + 1), options.init);
    run.trace.push_back({static_cast<long>(n), theta, ll});
  }
  run.boundary_clamps = clamps;
  return run;
}

}  // namespace sspe
