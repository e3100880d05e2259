#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sspe/filter.hpp"
#include "sspe/model.hpp"
#include "sspe/prior.hpp"
#include "sspe/rng.hpp"

namespace sspe {

// Random-walk Metropolis proposal scales, per parameter, in the unconstrained
// coordinates (atanh rho, log tau2, log sigma2).
struct RandomWalkSpec {
  std::array<double, 3> scale{0.1, 0.1, 0.1};
};

enum class LikelihoodBackend { Particle, Exact };

struct PmmhOptions {
  LikelihoodBackend backend = LikelihoodBackend::Particle;
  FilterConfig filter;  // particle count, proposal kind, resampling
  InitLaw init = InitLaw::stationary();
  bool record_paths = false;
};

// One Metropolis chain over theta. Stored per iteration: the proposed point and
// its log target pieces, the accepted state's cached values, the acceptance
// indicator, and the log uniform used — enough to replay every accept/reject
// decision bit-exactly.
struct ChainRecord {
  std::vector<Theta> draws;
  std::vector<double> loglik_hat;       // cached log p_hat at the accepted state
  std::vector<std::uint8_t> accepted;
  std::vector<Theta> proposed;
  std::vector<double> proposed_loglik;
  std::vector<double> proposed_log_prior_jac;
  std::vector<double> current_log_prior_jac;
  std::vector<double> log_accept_u;
  long collapse_rejects = 0;
  std::optional<std::vector<std::vector<double>>> paths;

  std::size_t size() const { return draws.size(); }
};

// Particle marginal Metropolis-Hastings (exact MMH when backend = Exact).
// The accepted likelihood estimate is cached, never recomputed.
ChainRecord pmmh(std::span<const double> y, const PriorSpec& prior, const RandomWalkSpec& rw,
                 int iters, const Theta& theta_init, const PmmhOptions& options,
                 std::uint64_t seed);

struct TuneResult {
  int chosen_n = 0;
  bool reached_target = false;             // sd <= 1.3 attained by some candidate
  std::vector<std::pair<int, double>> sd_table;  // (N, sd of log p_hat)
};

// The selection rule alone: smallest N with sd <= 1.3, else the largest with
// reached_target = false. The table is sorted by N internally.
int choose_tuned_n(std::vector<std::pair<int, double>> sd_table, bool* reached_target);

// Picks the smallest candidate particle count whose log-likelihood-estimate
// standard deviation at theta_pilot is <= 1.3; falls back to the largest
// candidate with a warning flag when none reaches the target.
TuneResult tune_pmmh_n(std::span<const double> y, const Theta& theta_pilot,
                       std::span<const int> candidate_ns, int replicates,
                       const PmmhOptions& options, std::uint64_t seed);

// Conditional SMC: slot 0 deterministically carries `reference` through every
// sampling and resampling step; the other N-1 slots follow the standard
// auxiliary particle filter. Systems are always stored.
FilterOutput csmc(const ModelContract& model, std::span<const double> y,
                  std::span<const double> reference, const FilterConfig& config, const Rng& rng);

// Exact Gibbs draw of the free components of theta given a state path.
// Conjugate inverse-gamma updates for the variances; rho is drawn from its
// exact conditional (truncated normal under a fixed initial law, grid
// inverse-CDF under the stationary law whose initial-state tilt is
// non-Gaussian). A constant-zero path falls back to the prior for rho.
Theta lg_theta_conditionals(std::span<const double> path, std::span<const double> y,
                            const PriorSpec& prior, const Theta& current, Rng& rng,
                            InitLaw init = InitLaw::stationary());

struct PgibbsOptions {
  FilterConfig filter;
  InitLaw init = InitLaw::stationary();
  bool record_paths = false;
  std::optional<Theta> theta_init;  // default: draw from the prior
};

// Particle Gibbs with backward-sampling rejuvenation: alternates the exact
// theta conditionals, conditional SMC at the new theta, and a backward draw of
// the reference path.
ChainRecord pgibbs(std::span<const double> y, const PriorSpec& prior, int iters,
                   const Theta& base, const PgibbsOptions& options, std::uint64_t seed);

// --------------------------------------------------------------------------
// MCMC within SMC over (x_n, theta) with fixed-dimensional sufficient
// statistics (two-statistic variant for (tau2, sigma2) free at rho = 1;
// three-statistic variant for (rho, sigma2) free at fixed tau2).
// --------------------------------------------------------------------------

enum class SuffStatsVariant { TwoStat, ThreeStat };

// Per-path sufficient statistics plus the initial state, updated transition by
// transition; associative under data concatenation.
struct SuffStats {
  SuffStatsVariant variant = SuffStatsVariant::TwoStat;
  double s1 = 0.0, s2 = 0.0, s3 = 0.0;  // ts: (sum dx^2, sum (y-x)^2); rs: (sum x_{k-1}x_k, sum x_{k-1}^2, sum (y-x)^2)
  double x0 = 0.0;
  long transitions = 0;

  static SuffStats start(SuffStatsVariant variant, double x0, double y0);
  void update(double x_prev, double x_new, double y_new);
  SuffStats& merge(const SuffStats& tail);  // concatenation of contiguous data
};

struct McmcSmcOptions {
  SuffStatsVariant variant = SuffStatsVariant::TwoStat;
  FilterConfig filter;                 // proposal kind, N, resampling
  InitLaw init = InitLaw::fixed(1.0);  // TwoStat runs at rho = 1
  bool gibbs_refresh = true;
  long checkpoint_stride = 1000;       // diagnostics emission period
};

struct McmcSmcCheckpoint {
  long n = 0;
  std::array<double, 3> post_mean{};
  std::array<double, 3> post_var{};
  double loglik_hat = 0.0;       // log p_hat(y_{0:n})
  long unique_theta = 0;
  long unique_ancestors = 0;
};

struct McmcSmcResult {
  std::vector<McmcSmcCheckpoint> checkpoints;
  long refresh_rejects = 0;  // MH-corrected refreshes that kept the old value
};

McmcSmcResult mcmc_within_smc(std::span<const double> y, const PriorSpec& prior,
                              const Theta& base, const McmcSmcOptions& options,
                              std::uint64_t seed);

}  // namespace sspe
