#include "sspe/filter.hpp"

#include <cmath>
#include <stdexcept>

#include "sspe/numeric.hpp"

namespace sspe {

namespace {
constexpr std::uint64_t kResampleTag = 0;
}

double FilterRunner::advance(const ModelContract& model, double y_n, const Rng& run_rng) {
  const int n_particles = cfg_.num_particles;
  if (n_particles < 1) throw std::invalid_argument("filter: need at least one particle");
  Rng step_rng = run_rng.child(static_cast<std::uint64_t>(t_));

  if (t_ == 0) {
    cur_.positions.resize(n_particles);
    cur_.log_weights.resize(n_particles);
    cur_.norm_weights.resize(n_particles);
    cur_.ancestors.resize(n_particles);
    cur_.time_index = 0;
    for (int i = 0; i < n_particles; ++i) {
      Rng prng = step_rng.child(static_cast<std::uint64_t>(i) + 1);
      double x = (!reference_.empty() && i == 0) ? reference_[0]
                                                 : model.proposal_sample0(y_n, prng);
      cur_.positions[i] = x;
      cur_.log_weights[i] =
          model.init_logpdf(x) + model.obs_logpdf(y_n, x) - model.proposal_logpdf0(x, y_n);
      cur_.ancestors[i] = i;
    }
    double log_mean = normalize_log_weights(cur_.log_weights, cur_.norm_weights, 0);
    t_ = 1;
    return log_mean;
  }

  prev_ = std::move(cur_);
  const long n = t_;
  cur_.positions.assign(n_particles, 0.0);
  cur_.log_weights.assign(n_particles, 0.0);
  cur_.norm_weights.assign(n_particles, 0.0);
  cur_.ancestors.assign(n_particles, 0);
  cur_.time_index = n;

  // predictive tilt of the previous weights
  tilt_.resize(n_particles);
  log_v_.resize(n_particles);
  v_.resize(n_particles);
  for (int i = 0; i < n_particles; ++i) {
    tilt_[i] = model.predictive_weight(y_n, prev_.positions[i]);
    log_v_[i] = std::log(prev_.norm_weights[i]) + tilt_[i];
  }
  double tilt_mass;  // log sum_i W_i q(y_n | X_i)
  try {
    tilt_mass = normalize_log_weights(log_v_, v_, n) +
                std::log(static_cast<double>(n_particles));
  } catch (const ParticleCollapseError&) {
    throw ParticleCollapseError(n);
  }

  bool do_resample = cfg_.ess_threshold >= 1.0 ||
                     ess(v_) < cfg_.ess_threshold * static_cast<double>(n_particles);
  std::vector<double> log_base(n_particles);
  if (do_resample) {
    Rng rrng = step_rng.child(kResampleTag);
    resample(v_, cur_.ancestors, cfg_.resampling, rrng);
    double lb = -std::log(static_cast<double>(n_particles));
    for (int i = 0; i < n_particles; ++i) log_base[i] = lb;
    if (!reference_.empty()) cur_.ancestors[0] = 0;
  } else {
    for (int i = 0; i < n_particles; ++i) {
      cur_.ancestors[i] = i;
      log_base[i] = std::log(v_[i]);
    }
  }

  for (int i = 0; i < n_particles; ++i) {
    Rng prng = step_rng.child(static_cast<std::uint64_t>(i) + 1);
    int a = cur_.ancestors[i];
    double xp = prev_.positions[a];
    double x = (!reference_.empty() && i == 0)
                   ? reference_[n]
                   : model.proposal_sample(y_n, xp, prng);
    cur_.positions[i] = x;
    double logw = model.obs_logpdf(y_n, x) + model.trans_logpdf(x, xp) -
                  model.proposal_logpdf(x, y_n, xp) - tilt_[a];
    cur_.log_weights[i] = log_base[i] + logw;
  }
  double log_mean = normalize_log_weights(cur_.log_weights, cur_.norm_weights, n);
  double incr = log_mean + std::log(static_cast<double>(n_particles)) + tilt_mass;
  ++t_;
  return incr;
}

FilterOutput run_filter(const ModelContract& model, std::span<const double> y,
                        const FilterConfig& config, const Rng& rng,
                        std::span<FilterObserver* const> observers) {
  if (y.empty()) throw std::invalid_argument("run_filter: no observations");
  FilterRunner runner(config);
  FilterOutput out;
  out.config = config;
  out.loglik_increments.reserve(y.size());
  if (config.store_systems) out.systems.reserve(y.size());
  for (std::size_t n = 0; n < y.size(); ++n) {
    double incr = runner.advance(model, y[n], rng);
    out.loglik_increments.push_back(incr);
    for (FilterObserver* obs : observers) {
      if (n == 0)
        obs->on_first(runner.current(), incr);
      else
        obs->on_step(runner.previous(), runner.current(), incr);
    }
    if (config.store_systems) out.systems.push_back(runner.current());
  }
  return out;
}

ModelContract make_lg_contract(const Theta& theta, ProposalKind kind, InitLaw init) {
  switch (kind) {
    case ProposalKind::LocallyOptimal:
      return lg_optimal_proposal(theta, init);
    case ProposalKind::Bootstrap:
    default:
      return lg_densities(theta, init);
  }
}

FilterOutput run_lg_filter(const Theta& theta, std::span<const double> y,
                           const FilterConfig& config, const Rng& rng, InitLaw init,
                           std::span<FilterObserver* const> observers) {
  ModelContract m = make_lg_contract(theta, config.proposal, init);
  return run_filter(m, y, config, rng, observers);
}

void replay(const FilterOutput& out, std::span<FilterObserver* const> observers) {
  if (out.systems.empty())
    throw std::invalid_argument("replay: filter output has no stored systems");
  for (std::size_t n = 0; n < out.systems.size(); ++n) {
    for (FilterObserver* obs : observers) {
      if (n == 0)
        obs->on_first(out.systems[0], out.loglik_increments[0]);
      else
        obs->on_step(out.systems[n - 1], out.systems[n], out.loglik_increments[n]);
    }
  }
}

std::vector<double> extract_path(const FilterOutput& out, int index) {
  if (out.systems.empty())
    throw std::invalid_argument("extract_path: filter output has no stored systems");
  std::vector<double> path(out.systems.size());
  int idx = index;
  for (std::size_t n = out.systems.size(); n-- > 0;) {
    path[n] = out.systems[n].positions[idx];
    idx = out.systems[n].ancestors[idx];
  }
  return path;
}

double filtered_mean(const ParticleSystem& s) {
  double m = 0.0;
  for (int i = 0; i < s.size(); ++i) m += s.norm_weights[i] * s.positions[i];
  return m;
}

double filtered_var(const ParticleSystem& s) {
  double m = filtered_mean(s);
  double v = 0.0;
  for (int i = 0; i < s.size(); ++i) {
    double d = s.positions[i] - m;
    v += s.norm_weights[i] * d * d;
  }
  return v;
}

}  // namespace sspe
