// sspe: state-space parameter estimation experiment runner.
//
//   sspe <experiment-id> --config <path> --seed <integer> --out <dir>
//        [--replicates R] [--parallelism P]
//
// Exit codes: 0 full success, 1 partial replicate failure, 2 config error.

#include <CLI11.hpp>

#include <iostream>

#include "sspe/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"state-space parameter estimation experiments"};
  app.require_subcommand(0, 0);

  std::string experiment, config_path, out_dir;
  std::uint64_t seed = 0;
  int replicates = 0, parallelism = 0;
  bool have_seed = false;

  app.add_option("experiment", experiment,
                 "experiment id (smoothing_bias_var, offline_em, online_em, degeneracy, "
                 "posterior_mcmc_smc, pgibbs_compare, custom)")
      ->required();
  app.add_option("--config", config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides config)");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--replicates", replicates, "replicate count (overrides config)");
  app.add_option("--parallelism", parallelism, "worker threads (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 2 : 0;
  }
  have_seed = seed_opt->count() > 0;

  try {
    sspe::ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = sspe::load_config_file(config_path);
      if (cfg.experiment != experiment)
        throw sspe::ConfigError("config experiment '" + cfg.experiment +
                                "' does not match CLI argument '" + experiment + "'");
    } else {
      cfg.experiment = experiment;
    }
    if (have_seed) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (replicates > 0) cfg.replicates = replicates;
    if (parallelism > 0) cfg.parallelism = parallelism;

    int code = sspe::run_experiment(cfg);
    if (code != 0) std::cerr << "sspe: " << code << " (partial failure)\n";
    return code;
  } catch (const sspe::ConfigError& e) {
    std::cerr << "sspe: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sspe: error: " << e.what() << '\n';
    return 1;
  }
}
