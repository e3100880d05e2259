#pragma once

#include <span>
#include <vector>

#include "sspe/model.hpp"
#include "sspe/particle.hpp"

namespace sspe {

enum class ProposalKind { Bootstrap, LocallyOptimal, Custom };

struct FilterConfig {
  int num_particles = 100;
  ProposalKind proposal = ProposalKind::Bootstrap;
  ResampleScheme resampling = ResampleScheme::Multinomial;
  // resample when ESS of the auxiliary weights < ess_threshold * N;
  // 1.0 reproduces the resample-every-step algorithm
  double ess_threshold = 1.0;
  bool store_systems = false;
};

// Streaming hook; `prev` is the time-n system (pre-resampling weights) and
// `cur` the freshly weighted time-(n+1) system.
class FilterObserver {
 public:
  virtual ~FilterObserver() = default;
  virtual void on_first(const ParticleSystem& s0, double log_incr) { (void)s0; (void)log_incr; }
  virtual void on_step(const ParticleSystem& prev, const ParticleSystem& cur, double log_incr) {
    (void)prev; (void)cur; (void)log_incr;
  }
};

struct FilterOutput {
  std::vector<ParticleSystem> systems;  // empty unless config.store_systems
  std::vector<double> loglik_increments;
  FilterConfig config;

  double loglik() const {
    double s = 0.0;
    for (double v : loglik_increments) s += v;
    return s;
  }
};

// One auxiliary-particle-filter recursion, advanced a step at a time so that
// drivers may vary the parameter between steps. A step consists of: predictive
// tilt of the previous weights, (optional) resampling from the tilted weights,
// propagation through the proposal, and reweighting; the tilt a particle
// carried into resampling is divided back out of its incremental weight, and
// the likelihood increment is the product of the tilt mass and the weighted
// mean incremental weight. This is the classic sample/weight/resample cycle
// with the resampling moved to the front of the following step, which leaves
// all draws and estimates unchanged.
//
// Randomness: step n uses run_rng.child(n); within a step, the resampling draw
// uses substream 0 and particle i uses substream i+1, so per-particle work is
// independent of evaluation order and any step can be replayed in isolation.
class FilterRunner {
 public:
  explicit FilterRunner(const FilterConfig& cfg) : cfg_(cfg) {}

  // Pins slot 0 to a reference trajectory (conditional SMC).
  void set_reference(std::span<const double> path) { reference_ = path; }

  // Advances past observation y_n for n = steps_done(); returns the
  // log-likelihood increment log p_hat(y_n | y_{0:n-1}).
  double advance(const ModelContract& model, double y_n, const Rng& run_rng);

  const ParticleSystem& current() const { return cur_; }
  const ParticleSystem& previous() const { return prev_; }
  long steps_done() const { return t_; }

 private:
  FilterConfig cfg_;
  ParticleSystem cur_, prev_;
  std::vector<double> tilt_, log_v_, v_;
  std::span<const double> reference_;
  long t_ = 0;
};

// Full sweep over y with optional per-step observers.
FilterOutput run_filter(const ModelContract& model, std::span<const double> y,
                        const FilterConfig& config, const Rng& rng,
                        std::span<FilterObserver* const> observers = {});

// Convenience: builds the LGSSM contract for config.proposal and runs it.
FilterOutput run_lg_filter(const Theta& theta, std::span<const double> y,
                           const FilterConfig& config, const Rng& rng,
                           InitLaw init = InitLaw::stationary(),
                           std::span<FilterObserver* const> observers = {});

ModelContract make_lg_contract(const Theta& theta, ProposalKind kind,
                               InitLaw init = InitLaw::stationary());

// Replays stored systems through observers (offline smoothing entry point).
void replay(const FilterOutput& out, std::span<FilterObserver* const> observers);

// Ancestral path of final-time slot `index`: length T+1.
std::vector<double> extract_path(const FilterOutput& out, int index);

// Weighted filtered mean / variance of one system.
double filtered_mean(const ParticleSystem& s);
double filtered_var(const ParticleSystem& s);

}  // namespace sspe
