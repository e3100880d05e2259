#include "sspe/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sspe/kalman.hpp"
#include "sspe/numeric.hpp"
#include "sspe/smooth.hpp"

namespace sspe {

namespace {

// log prior + log |d theta / d u| over free components: the random walk lives
// in unconstrained coordinates, so the Jacobian joins the target.
double log_prior_jacobian(const PriorSpec& prior, const Theta& theta) {
  double lp = prior.log_density(theta);
  auto jac = unconstrained_jacobian(theta);
  for (int i = 0; i < 3; ++i)
    if (theta.free_mask[i]) lp += std::log(jac[i]);
  return lp;
}

double evaluate_loglik(std::span<const double> y, const Theta& theta, const PmmhOptions& options,
                       const Rng& rng, long* collapse_counter,
                       std::vector<double>* sampled_path) {
  if (options.backend == LikelihoodBackend::Exact) {
    if (sampled_path) sampled_path->clear();
    return kalman_loglik(theta, y, options.init);
  }
  FilterConfig cfg = options.filter;
  cfg.store_systems = sampled_path != nullptr;
  try {
    FilterOutput out = run_lg_filter(theta, y, cfg, rng, options.init);
    if (sampled_path) {
      std::vector<double> cum(out.systems.back().norm_weights.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < cum.size(); ++i) {
        acc += out.systems.back().norm_weights[i];
        cum[i] = acc;
      }
      cum.back() = 1.0;
      Rng prng = rng.child(0x70617468);
      *sampled_path = extract_path(out, invert_cumulative(cum, prng.uniform01()));
    }
    return out.loglik();
  } catch (const ParticleCollapseError&) {
    if (collapse_counter) ++*collapse_counter;
    return kNegInf;  // density-zero convention: the proposal is auto-rejected
  }
}

}  // namespace

ChainRecord pmmh(std::span<const double> y, const PriorSpec& prior, const RandomWalkSpec& rw,
                 int iters, const Theta& theta_init, const PmmhOptions& options,
                 std::uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("pmmh: iters must be >= 1");
  prior.validate();
  theta_init.validate();
  Rng root(seed);

  ChainRecord rec;
  rec.draws.reserve(iters);
  if (options.record_paths) rec.paths.emplace();

  Theta theta = theta_init;
  std::array<double, 3> u = to_unconstrained(theta);
  std::vector<double> path;
  double cur_ll = evaluate_loglik(y, theta, options, root.child(0), &rec.collapse_rejects,
                                  options.record_paths ? &path : nullptr);
  double cur_lpj = log_prior_jacobian(prior, theta);

  for (int it = 1; it <= iters; ++it) {
    Rng iter_rng = root.child(it);
    std::array<double, 3> u_prop = u;
    for (int i = 0; i < 3; ++i)
      if (theta.free_mask[i]) u_prop[i] += rw.scale[i] * iter_rng.normal();
    Theta prop = from_unconstrained(u_prop, theta);

    std::vector<double> prop_path;
    double prop_ll =
        evaluate_loglik(y, prop, options, iter_rng.child(1), &rec.collapse_rejects,
                        options.record_paths ? &prop_path : nullptr);
    double prop_lpj = log_prior_jacobian(prior, prop);

    double log_ratio = (prop_ll + prop_lpj) - (cur_ll + cur_lpj);
    double log_u = std::log(iter_rng.uniform01());
    bool accept = std::isfinite(prop_ll) && log_u < log_ratio;

    rec.proposed.push_back(prop);
    rec.proposed_loglik.push_back(prop_ll);
    rec.proposed_log_prior_jac.push_back(prop_lpj);
    rec.current_log_prior_jac.push_back(cur_lpj);
    rec.log_accept_u.push_back(log_u);
    rec.accepted.push_back(accept ? 1 : 0);

    if (accept) {
      theta = prop;
      u = u_prop;
      cur_ll = prop_ll;  // cached, never recomputed
      cur_lpj = prop_lpj;
      if (options.record_paths) path = std::move(prop_path);
    }
    rec.draws.push_back(theta);
    rec.loglik_hat.push_back(cur_ll);
    if (options.record_paths) rec.paths->push_back(path);
  }
  return rec;
}

int choose_tuned_n(std::vector<std::pair<int, double>> sd_table, bool* reached_target) {
  if (sd_table.empty()) throw std::invalid_argument("choose_tuned_n: empty table");
  std::sort(sd_table.begin(), sd_table.end());
  for (const auto& [n, sd] : sd_table) {
    if (sd <= 1.3) {
      if (reached_target) *reached_target = true;
      return n;
    }
  }
  if (reached_target) *reached_target = false;
  return sd_table.back().first;
}

TuneResult tune_pmmh_n(std::span<const double> y, const Theta& theta_pilot,
                       std::span<const int> candidate_ns, int replicates,
                       const PmmhOptions& options, std::uint64_t seed) {
  if (candidate_ns.empty()) throw std::invalid_argument("tune_pmmh_n: no candidates");
  if (replicates < 2) throw std::invalid_argument("tune_pmmh_n: need at least two replicates");
  Rng root(seed);

  TuneResult res;
  std::vector<int> ns(candidate_ns.begin(), candidate_ns.end());
  std::sort(ns.begin(), ns.end());
  for (std::size_t c = 0; c < ns.size(); ++c) {
    PmmhOptions opt = options;
    opt.filter.num_particles = ns[c];
    std::vector<double> lls(replicates);
    for (int r = 0; r < replicates; ++r) {
      long collapses = 0;
      lls[r] = evaluate_loglik(y, theta_pilot, opt, root.child(c * 1000003 + r), &collapses,
                               nullptr);
    }
    double sd = (options.backend == LikelihoodBackend::Exact) ? 0.0 : std::sqrt(variance_of(lls));
    res.sd_table.emplace_back(ns[c], sd);
  }
  res.chosen_n = choose_tuned_n(res.sd_table, &res.reached_target);
  return res;
}

FilterOutput csmc(const ModelContract& model, std::span<const double> y,
                  std::span<const double> reference, const FilterConfig& config, const Rng& rng) {
  if (reference.size() != y.size())
    throw std::invalid_argument("csmc: reference path length must match the observations");
  FilterConfig cfg = config;
  cfg.store_systems = true;
  cfg.ess_threshold = 1.0;  // the conditional filter resamples every step
  FilterRunner runner(cfg);
  runner.set_reference(reference);
  FilterOutput out;
  out.config = cfg;
  for (std::size_t n = 0; n < y.size(); ++n) {
    out.loglik_increments.push_back(runner.advance(model, y[n], rng));
    out.systems.push_back(runner.current());
  }
  return out;
}

namespace {

struct PathStats {
  double z2 = 0.0;   // sum x_{k-1}^2
  double z3 = 0.0;   // sum x_{k-1} x_k
  double sxx = 0.0;  // sum x_k^2 over k >= 1
  double res_obs = 0.0;  // sum (y_k - x_k)^2 over k >= 0
  long transitions = 0;

  double trans_resid(double rho) const { return sxx - 2.0 * rho * z3 + rho * rho * z2; }
};

PathStats path_stats(std::span<const double> x, std::span<const double> y) {
  PathStats s;
  s.transitions = static_cast<long>(x.size()) - 1;
  for (std::size_t k = 0; k < x.size(); ++k) {
    double r = y[k] - x[k];
    s.res_obs += r * r;
    if (k >= 1) {
      s.z2 += x[k - 1] * x[k - 1];
      s.z3 += x[k - 1] * x[k];
      s.sxx += x[k] * x[k];
    }
  }
  return s;
}

// log of the stationary-initialization tilt on rho's conditional
double stationary_rho_tilt(double rho, double x0, double tau2) {
  return 0.5 * std::log1p(-rho * rho) - x0 * x0 * (1.0 - rho * rho) / (2.0 * tau2);
}

// Inverse-CDF draw of rho from its exact conditional under the stationary
// initial law: quadratic likelihood part plus the non-Gaussian tilt, tabulated
// on a fine midpoint grid over (-1, 1).
double sample_rho_stationary(double z2, double z3, double x0, double tau2, Rng& rng) {
  constexpr int kGrid = 4096;
  std::vector<double> logd(kGrid);
  double mx = kNegInf;
  for (int i = 0; i < kGrid; ++i) {
    double rho = -1.0 + 2.0 * (i + 0.5) / kGrid;
    double quad = -(z2 * rho * rho - 2.0 * z3 * rho) / (2.0 * tau2);
    logd[i] = quad + stationary_rho_tilt(rho, x0, tau2);
    if (logd[i] > mx) mx = logd[i];
  }
  std::vector<double> cdf(kGrid);
  double acc = 0.0;
  for (int i = 0; i < kGrid; ++i) {
    acc += std::exp(logd[i] - mx);
    cdf[i] = acc;
  }
  double u = rng.uniform01() * acc;
  int idx = invert_cumulative(cdf, u);
  double lo_cdf = idx == 0 ? 0.0 : cdf[idx - 1];
  double frac = (u - lo_cdf) / (cdf[idx] - lo_cdf);
  return -1.0 + 2.0 * (idx + frac) / kGrid;
}

}  // namespace

Theta lg_theta_conditionals(std::span<const double> path, std::span<const double> y,
                            const PriorSpec& prior, const Theta& current, Rng& rng,
                            InitLaw init) {
  if (path.size() != y.size() || path.empty())
    throw std::invalid_argument("lg_theta_conditionals: path and observations must align");
  prior.validate();
  PathStats s = path_stats(path, y);
  const double t_len = static_cast<double>(path.size());
  const double x0 = path[0];
  Theta theta = current;

  if (theta.free_mask[kSigma2])
    theta.sigma2 = rng.inverse_gamma(prior.c + 0.5 * t_len, prior.d + 0.5 * s.res_obs);

  if (theta.free_mask[kTau2]) {
    double shape, scale;
    if (init.is_stationary()) {
      shape = prior.a + 0.5 * t_len;  // T transitions plus the initial state
      scale = prior.b + 0.5 * ((1.0 - theta.rho * theta.rho) * x0 * x0 +
                               s.trans_resid(theta.rho));
    } else {
      shape = prior.a + 0.5 * static_cast<double>(s.transitions);
      scale = prior.b + 0.5 * s.trans_resid(theta.rho);
    }
    theta.tau2 = rng.inverse_gamma(shape, scale);
  }

  if (theta.free_mask[kRho]) {
    if (s.z2 <= 0.0) {
      theta.rho = rng.uniform(-1.0, 1.0);
    } else if (init.is_stationary()) {
      theta.rho = sample_rho_stationary(s.z2, s.z3, x0, theta.tau2, rng);
    } else {
      theta.rho = rng.truncated_normal(s.z3 / s.z2, std::sqrt(theta.tau2 / s.z2), -1.0, 1.0);
    }
  }
  return theta;
}

ChainRecord pgibbs(std::span<const double> y, const PriorSpec& prior, int iters,
                   const Theta& base, const PgibbsOptions& options, std::uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("pgibbs: iters must be >= 1");
  prior.validate();
  Rng root(seed);

  Rng init_rng = root.child(0);
  Theta theta = options.theta_init ? *options.theta_init : prior.sample(base, init_rng);
  theta.free_mask = base.free_mask;
  theta.validate();

  FilterConfig cfg = options.filter;
  cfg.store_systems = true;

  // initial reference path from an unconditional sweep
  ModelContract model = make_lg_contract(theta, cfg.proposal, options.init);
  FilterOutput out = run_filter(model, y, cfg, root.child(1));
  Rng draw_rng = root.child(2);
  std::vector<double> path = ffbsa_sample(out, model, 1, FfbsaMode::Direct, draw_rng).paths[0];

  ChainRecord rec;
  rec.draws.reserve(iters);
  if (options.record_paths) rec.paths.emplace();

  for (int it = 1; it <= iters; ++it) {
    Rng iter_rng = root.child(2 + it);
    Rng cond_rng = iter_rng.child(0);
    theta = lg_theta_conditionals(path, y, prior, theta, cond_rng, options.init);

    model = make_lg_contract(theta, cfg.proposal, options.init);
    out = csmc(model, y, path, cfg, iter_rng.child(1));
    Rng back_rng = iter_rng.child(2);
    path = ffbsa_sample(out, model, 1, FfbsaMode::Direct, back_rng).paths[0];

    rec.draws.push_back(theta);
    rec.loglik_hat.push_back(out.loglik());
    rec.accepted.push_back(1);
    if (options.record_paths) rec.paths->push_back(path);
  }
  return rec;
}

// --------------------------------------------------------------------------
// SuffStats
// --------------------------------------------------------------------------

SuffStats SuffStats::start(SuffStatsVariant variant, double x0, double y0) {
  SuffStats s;
  s.variant = variant;
  s.x0 = x0;
  double r = y0 - x0;
  if (variant == SuffStatsVariant::TwoStat)
    s.s2 = r * r;
  else
    s.s3 = r * r;
  return s;
}

void SuffStats::update(double x_prev, double x_new, double y_new) {
  double r = y_new - x_new;
  if (variant == SuffStatsVariant::TwoStat) {
    double dx = x_new - x_prev;
    s1 += dx * dx;
    s2 += r * r;
  } else {
    s1 += x_prev * x_new;
    s2 += x_prev * x_prev;
    s3 += r * r;
  }
  ++transitions;
}

SuffStats& SuffStats::merge(const SuffStats& tail) {
  s1 += tail.s1;
  s2 += tail.s2;
  s3 += tail.s3;
  transitions += tail.transitions;
  return *this;
}

// --------------------------------------------------------------------------
// MCMC within SMC
// --------------------------------------------------------------------------

namespace {

struct Cloud {
  std::vector<double> x;
  std::vector<double> rho, tau2, sigma2;
  std::vector<SuffStats> stats;
  std::vector<double> logw, w;
};

long count_unique_theta(const Cloud& c) {
  std::vector<std::array<double, 3>> v(c.x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = {c.rho[i], c.tau2[i], c.sigma2[i]};
  std::sort(v.begin(), v.end());
  return static_cast<long>(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace

McmcSmcResult mcmc_within_smc(std::span<const double> y, const PriorSpec& prior,
                              const Theta& base, const McmcSmcOptions& options,
                              std::uint64_t seed) {
  prior.validate();
  if (y.size() < 2) throw std::invalid_argument("mcmc_within_smc: need at least two observations");
  const int n_particles = options.filter.num_particles;
  if (n_particles < 1) throw std::invalid_argument("mcmc_within_smc: need particles");

  const bool two_stat = options.variant == SuffStatsVariant::TwoStat;
  if (two_stat) {
    if (base.rho != 1.0 || base.free_mask[kRho] || !base.free_mask[kTau2] ||
        !base.free_mask[kSigma2])
      throw std::invalid_argument(
          "mcmc_within_smc: two-stat variant needs rho fixed at 1 with (tau2, sigma2) free");
    if (options.init.is_stationary())
      throw std::invalid_argument("mcmc_within_smc: rho = 1 needs a fixed initial law");
  } else {
    if (!base.free_mask[kRho] || base.free_mask[kTau2] || !base.free_mask[kSigma2])
      throw std::invalid_argument(
          "mcmc_within_smc: three-stat variant needs (rho, sigma2) free with tau2 fixed");
  }
  const bool optimal = options.filter.proposal == ProposalKind::LocallyOptimal;

  Rng root(seed);
  McmcSmcResult res;
  Cloud c;
  c.x.resize(n_particles);
  c.rho.resize(n_particles);
  c.tau2.resize(n_particles);
  c.sigma2.resize(n_particles);
  c.stats.resize(n_particles);
  c.logw.resize(n_particles);
  c.w.resize(n_particles);

  // log predictive q(y | x) under the locally optimal proposal
  auto pred = [&](double y_next, double x, double rho, double tau2, double sigma2) {
    return log_normal_pdf(y_next, rho * x, tau2 + sigma2);
  };

  double cum_loglik = 0.0;

  // time 0: theta from the prior, x0 from the initial law, bootstrap-style weight
  {
    Rng step = root.child(0);
    for (int i = 0; i < n_particles; ++i) {
      Rng prng = step.child(i + 1);
      Theta t = prior.sample(base, prng);
      c.rho[i] = t.rho;
      c.tau2[i] = t.tau2;
      c.sigma2[i] = t.sigma2;
      double v0 = options.init.is_stationary() ? t.tau2 / (1.0 - t.rho * t.rho)
                                               : options.init.fixed_var;
      double x0;
      double logw;
      if (optimal) {
        double v = 1.0 / (1.0 / v0 + 1.0 / t.sigma2);
        double mean = v * y[0] / t.sigma2;
        x0 = mean + std::sqrt(v) * prng.normal();
        logw = log_normal_pdf(x0, 0.0, v0) + log_normal_pdf(y[0], x0, t.sigma2) -
               log_normal_pdf(x0, mean, v);
      } else {
        x0 = std::sqrt(v0) * prng.normal();
        logw = log_normal_pdf(y[0], x0, t.sigma2);
      }
      c.x[i] = x0;
      c.logw[i] = logw;
      c.stats[i] = SuffStats::start(options.variant, x0, y[0]);
    }
    cum_loglik += normalize_log_weights(c.logw, c.w, 0);
  }

  auto emit = [&](long n, long unique_anc) {
    McmcSmcCheckpoint cp;
    cp.n = n;
    cp.loglik_hat = cum_loglik;
    cp.unique_theta = count_unique_theta(c);
    cp.unique_ancestors = unique_anc;
    for (int i = 0; i < n_particles; ++i) {
      double wi = c.w[i];
      cp.post_mean[kRho] += wi * c.rho[i];
      cp.post_mean[kTau2] += wi * c.tau2[i];
      cp.post_mean[kSigma2] += wi * c.sigma2[i];
      cp.post_var[kRho] += wi * c.rho[i] * c.rho[i];
      cp.post_var[kTau2] += wi * c.tau2[i] * c.tau2[i];
      cp.post_var[kSigma2] += wi * c.sigma2[i] * c.sigma2[i];
    }
    for (int p = 0; p < 3; ++p) cp.post_var[p] -= cp.post_mean[p] * cp.post_mean[p];
    res.checkpoints.push_back(cp);
  };
  emit(0, n_particles);

  std::vector<int> anc(n_particles);
  std::vector<double> log_v(n_particles), v(n_particles), tilt(n_particles);
  Cloud next = c;

  for (std::size_t n = 1; n < y.size(); ++n) {
    Rng step = root.child(n);
    // predictive tilt at the current parameters
    for (int i = 0; i < n_particles; ++i) {
      tilt[i] = optimal ? pred(y[n], c.x[i], c.rho[i], c.tau2[i], c.sigma2[i]) : 0.0;
      log_v[i] = std::log(c.w[i]) + tilt[i];
    }
    double tilt_mass;
    try {
      tilt_mass = normalize_log_weights(log_v, v, static_cast<long>(n)) +
                  std::log(static_cast<double>(n_particles));
    } catch (const ParticleCollapseError&) {
      throw ParticleCollapseError(static_cast<long>(n));
    }

    Rng rrng = step.child(0);
    resample(v, anc, options.filter.resampling, rrng);
    long unique_anc;
    {
      std::vector<int> sorted = anc;
      std::sort(sorted.begin(), sorted.end());
      unique_anc = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
    }
    for (int i = 0; i < n_particles; ++i) {
      int a = anc[i];
      next.x[i] = c.x[a];
      next.rho[i] = c.rho[a];
      next.tau2[i] = c.tau2[a];
      next.sigma2[i] = c.sigma2[a];
      next.stats[i] = c.stats[a];
    }
    std::swap(c.x, next.x);
    std::swap(c.rho, next.rho);
    std::swap(c.tau2, next.tau2);
    std::swap(c.sigma2, next.sigma2);
    std::swap(c.stats, next.stats);

    // Gibbs refresh of theta given each particle's statistics; a refresh is
    // MH-corrected by the predictive-tilt ratio when the optimal proposal is
    // in play (the resampled cloud targets the lookahead-tilted law) and by
    // the stationary initial-state tilt for rho.
    if (options.gibbs_refresh) {
      const double half_obs = 0.5 * static_cast<double>(n + 1);
      for (int i = 0; i < n_particles; ++i) {
        Rng grng = step.child(static_cast<std::uint64_t>(n_particles) + 1 + i);
        const SuffStats& st = c.stats[i];
        double prop_rho = c.rho[i], prop_tau2 = c.tau2[i], prop_sigma2;
        if (two_stat) {
          prop_tau2 = grng.inverse_gamma(prior.a + 0.5 * static_cast<double>(st.transitions),
                                         prior.b + 0.5 * st.s1);
          prop_sigma2 = grng.inverse_gamma(prior.c + half_obs, prior.d + 0.5 * st.s2);
        } else {
          prop_sigma2 = grng.inverse_gamma(prior.c + half_obs, prior.d + 0.5 * st.s3);
          if (st.s2 > 0.0)
            prop_rho = grng.truncated_normal(st.s1 / st.s2, std::sqrt(c.tau2[i] / st.s2), -1.0,
                                             1.0);
          else
            prop_rho = grng.uniform(-1.0, 1.0);
        }
        double log_ratio = 0.0;
        if (!two_stat && options.init.is_stationary())
          log_ratio += stationary_rho_tilt(prop_rho, st.x0, c.tau2[i]) -
                       stationary_rho_tilt(c.rho[i], st.x0, c.tau2[i]);
        if (optimal)
          log_ratio += pred(y[n], c.x[i], prop_rho, prop_tau2, prop_sigma2) - tilt[anc[i]];
        if (log_ratio >= 0.0 || std::log(grng.uniform01()) < log_ratio) {
          c.rho[i] = prop_rho;
          c.tau2[i] = prop_tau2;
          c.sigma2[i] = prop_sigma2;
        } else {
          ++res.refresh_rejects;
        }
      }
    }

    // propagate and reweight
    for (int i = 0; i < n_particles; ++i) {
      Rng prng = step.child(i + 1);
      double xp = c.x[i];
      double rho = c.rho[i], tau2 = c.tau2[i], sigma2 = c.sigma2[i];
      double cur_tilt = optimal ? pred(y[n], xp, rho, tau2, sigma2) : 0.0;
      double xn, logw;
      if (optimal) {
        double vv = 1.0 / (1.0 / tau2 + 1.0 / sigma2);
        double mean = vv * (rho * xp / tau2 + y[n] / sigma2);
        xn = mean + std::sqrt(vv) * prng.normal();
        logw = log_normal_pdf(y[n], xn, sigma2) + log_normal_pdf(xn, rho * xp, tau2) -
               log_normal_pdf(xn, mean, vv) - cur_tilt;
      } else {
        xn = rho * xp + std::sqrt(tau2) * prng.normal();
        logw = log_normal_pdf(y[n], xn, sigma2);
      }
      c.stats[i].update(xp, xn, y[n]);
      c.x[i] = xn;
      c.logw[i] = logw;
    }
    cum_loglik += normalize_log_weights(c.logw, c.w, static_cast<long>(n)) + tilt_mass;

    if (static_cast<long>(n) % options.checkpoint_stride == 0 || n + 1 == y.size())
      emit(static_cast<long>(n), unique_anc);
  }
  return res;
}

}  // namespace sspe
