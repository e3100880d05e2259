#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sspe/bayes.hpp"
#include "sspe/filter.hpp"
#include "sspe/ml.hpp"
#include "sspe/model.hpp"

namespace sspe {

// --------------------------------------------------------------------------
// Replicate execution
// --------------------------------------------------------------------------

// Independent, collision-free per-replicate seed (bijective 64-bit mixing of
// the master seed and the replicate index).
std::uint64_t replicate_seed(std::uint64_t master, long replicate);

struct ReplicateFailure {
  int index;
  std::string message;
};

// Runs job(0..count-1) with at most `parallelism` threads. Results must be
// written into per-index slots by the job itself; failures are collected, the
// remaining jobs proceed.
std::vector<ReplicateFailure> replicate_runner(int count, int parallelism,
                                               const std::function<void(int)>& job);

// --------------------------------------------------------------------------
// Reusable study drivers (shared between the CLI and the acceptance suite)
// --------------------------------------------------------------------------

// Fig-1-style study: bias/variance of smoothed-additive estimates vs time for
// the O(N) path-space and O(N^2) forward estimators at matched budgets.
struct SmoothingStudyParams {
  Theta theta{0.8, 0.1, 1.0};
  long horizon = 5000;
  int replicates = 100;
  std::vector<int> forward_n{50, 100};
  std::vector<int> pathspace_n{2500, 10000};
  long stride = 250;
  ProposalKind proposal = ProposalKind::Bootstrap;
  std::uint64_t seed = 1;
  int parallelism = 1;
};

struct StudyArm {
  std::string method;
  int n_particles = 0;
  // estimates[replicate][checkpoint]
  std::vector<std::vector<double>> estimates;
};

struct SmoothingStudy {
  std::vector<long> checkpoints;
  std::vector<double> oracle;  // exact S_n at the checkpoints
  std::vector<StudyArm> arms;
  std::vector<ReplicateFailure> failures;
};

SmoothingStudy run_smoothing_study(const SmoothingStudyParams& p);

// Fig-2-style study: off-line EM replicates against the grid-ML reference.
struct EmStudyParams {
  Theta theta_star{0.8, 1.0, 0.04};   // variances; sigma2 known
  Theta theta0{0.1, 0.01, 0.04};      // sigma2 fixed at the true value
  long horizon = 1000;
  int iters = 25;
  int replicates = 50;
  std::vector<std::pair<SmootherBackend, int>> arms = {
      {SmootherBackend::forward(), 150}, {SmootherBackend::pathspace(), 22500}};
  std::uint64_t seed = 1;
  int parallelism = 1;
};

struct EmStudy {
  std::vector<double> observations;
  Theta grid_ml_theta;
  std::array<double, 3> grid_cell{};
  struct Arm {
    std::string method;
    int n_particles;
    std::vector<Theta> finals;           // per replicate
    std::vector<std::vector<Theta>> traces;
  };
  std::vector<Arm> arms;
  std::vector<ReplicateFailure> failures;
};

EmStudy run_em_study(const EmStudyParams& p);

// Fig-3-style study: on-line EM replicates; grid-ML reference at the horizon.
struct OnlineEmStudyParams {
  Theta theta_star{0.8, 1.0, 0.04};
  Theta theta0{0.1, 0.01, 0.04};
  long horizon = 20000;
  int num_particles = 150;
  StepSizeSchedule schedule{0.8, 1.0};
  long n_freeze = 50;
  int replicates = 50;
  long stride = 1000;
  OnlineSmoothing smoothing = OnlineSmoothing::Forward;
  std::uint64_t seed = 1;
  int parallelism = 1;
};

struct OnlineEmStudy {
  std::vector<double> observations;
  Theta grid_ml_theta;  // at the final time
  std::array<double, 3> grid_cell{};
  std::vector<long> checkpoints;
  // finals[replicate] = theta at the horizon; traces[replicate][checkpoint]
  std::vector<Theta> finals;
  std::vector<std::vector<Theta>> traces;
  std::vector<ReplicateFailure> failures;
};

OnlineEmStudy run_online_em_study(const OnlineEmStudyParams& p);

// Fig-4-style degeneracy study of MCMC-within-SMC.
struct DegeneracyStudyParams {
  double tau2_true = 1.0, sigma2_true = 1.0;
  long horizon = 20000;
  int num_particles = 5000;
  int replicates = 20;
  long stride = 2500;
  PriorSpec prior;
  ProposalKind proposal = ProposalKind::Bootstrap;
  double init_var = 1.0;  // x0 ~ N(0, init_var), rho = 1
  std::uint64_t seed = 1;
  int parallelism = 1;
};

struct DegeneracyStudy {
  std::vector<double> observations;
  std::vector<long> checkpoints;
  // per checkpoint: exact grid posterior mean/variance of tau2
  std::vector<double> grid_post_mean, grid_post_var;
  // per replicate, per checkpoint
  std::vector<std::vector<double>> post_mean_tau2;
  std::vector<std::vector<double>> loglik_hat;
  std::vector<std::vector<double>> unique_theta, unique_ancestors;
  std::vector<ReplicateFailure> failures;
};

DegeneracyStudy run_degeneracy_study(const DegeneracyStudyParams& p);

// Figs-6/7-style comparison: particle Gibbs vs MCMC-within-SMC at matched
// compute on the (rho, sigma2) posterior.
struct PgibbsCompareParams {
  Theta theta_star{0.5, 0.01, 1.0};  // tau2 fixed
  long horizon = 1000;
  int pg_particles = 50;
  int pg_iters = 3000;
  int pg_burnin = 300;
  int smc_particles = 75000;
  int runs = 20;
  PriorSpec prior;
  std::uint64_t seed = 1;
  int parallelism = 1;
};

struct PgibbsCompare {
  std::vector<double> observations;
  std::array<double, 3> grid_mean{}, grid_var{};
  std::vector<std::array<double, 3>> pg_means;   // per run, posterior-mean estimates
  std::vector<std::array<double, 3>> smc_means;  // per run
  std::vector<ReplicateFailure> failures;
};

PgibbsCompare run_pgibbs_compare(const PgibbsCompareParams& p);

// --------------------------------------------------------------------------
// CLI configuration and dispatch
// --------------------------------------------------------------------------

struct ExperimentConfig {
  std::string experiment;  // smoothing_bias_var, offline_em, online_em, degeneracy,
                           // posterior_mcmc_smc, pgibbs_compare, custom
  std::uint64_t seed = 1;
  int replicates = 0;      // 0: experiment default
  int parallelism = 1;
  std::string out_dir = ".";

  std::optional<Theta> theta;
  std::vector<std::string> free_params;  // default per experiment
  long horizon = 0;                      // 0: experiment default
  std::string data_csv;                  // empty: simulate

  std::vector<int> forward_n, pathspace_n;
  int num_particles = 0;
  int iters = 0;
  long lag = 20;
  int paris_k = 2;
  double step_exponent = 0.8, step_scale = 1.0;
  long n_freeze = 50;
  long stride = 0;
  std::string proposal = "bootstrap";
  std::string resampling = "multinomial";
  std::string algorithm;  // for `custom`
  double prior_a = 1, prior_b = 1, prior_c = 1, prior_d = 1;
  double rw_scale = 0.1;
  double init_var = 1.0;
  int pg_particles = 50, pg_iters = 3000, smc_particles = 75000;
};

// Configuration problems map to exit code 2 at the CLI boundary.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parses a JSON config document; unknown keys are an error (exit code 2 path).
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

// Runs the configured experiment: per-replicate CSVs, an aggregate CSV and
// run metadata under out_dir. Returns the process exit code (0 success,
// 1 partial replicate failure, 2 configuration error).
int run_experiment(const ExperimentConfig& config);

}  // namespace sspe
