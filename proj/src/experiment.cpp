#include "sspe/experiment.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "sspe/csv.hpp"
#include "sspe/kalman.hpp"
#include "sspe/numeric.hpp"
#include "sspe/smooth.hpp"

namespace sspe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t replicate_seed(std::uint64_t master, long replicate) {
  // mix64 is a bijection and the inputs are distinct, so seeds never collide
  return mix64(master + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(replicate) + 1));
}

std::vector<ReplicateFailure> replicate_runner(int count, int parallelism,
                                               const std::function<void(int)>& job) {
  if (parallelism < 1) parallelism = 1;
  std::atomic<int> next{0};
  std::mutex fail_mutex;
  std::vector<ReplicateFailure> failures;
  auto worker = [&]() {
    for (;;) {
      int idx = next.fetch_add(1);
      if (idx >= count) return;
      try {
        job(idx);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(fail_mutex);
        failures.push_back({idx, e.what()});
      }
    }
  };
  if (parallelism == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < parallelism; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::sort(failures.begin(), failures.end(),
            [](const ReplicateFailure& a, const ReplicateFailure& b) { return a.index < b.index; });
  return failures;
}

// --------------------------------------------------------------------------
// Study drivers
// --------------------------------------------------------------------------

namespace {

std::vector<long> make_checkpoints(long horizon, long stride) {
  std::vector<long> cps;
  for (long n = stride; n <= horizon; n += stride) cps.push_back(n);
  if (cps.empty() || cps.back() != horizon) cps.push_back(horizon);
  return cps;
}

}  // namespace

SmoothingStudy run_smoothing_study(const SmoothingStudyParams& p) {
  SmoothingStudy study;
  Trajectory data = simulate_lgssm(p.theta, p.horizon, mix64(p.seed ^ 0xda7a));
  const std::vector<double>& y = data.observations;
  study.checkpoints = make_checkpoints(p.horizon, p.stride);

  AdditiveFunctional stat = cross_product_statistic();
  for (long cp : study.checkpoints) {
    auto s = exact_additive(p.theta, std::span<const double>(y).subspan(0, cp + 1), stat);
    study.oracle.push_back(s[0]);
  }

  struct ArmSpec {
    std::string method;
    int n;
  };
  std::vector<ArmSpec> specs;
  for (int n : p.pathspace_n) specs.push_back({"pathspace", n});
  for (int n : p.forward_n) specs.push_back({"forward", n});

  for (std::size_t a = 0; a < specs.size(); ++a) {
    StudyArm arm;
    arm.method = specs[a].method;
    arm.n_particles = specs[a].n;
    arm.estimates.assign(p.replicates, std::vector<double>(study.checkpoints.size(), 0.0));

    auto job = [&](int rep) {
      Rng rng(replicate_seed(p.seed, static_cast<long>(a) * 1000000L + rep));
      FilterConfig cfg;
      cfg.num_particles = specs[a].n;
      cfg.proposal = p.proposal;
      ModelContract model = make_lg_contract(p.theta, cfg.proposal);
      std::vector<double>& row = arm.estimates[rep];
      if (specs[a].method == "pathspace") {
        PathspaceSmoother sm(stat, y, true);
        FilterObserver* obs[] = {&sm};
        run_filter(model, y, cfg, rng, obs);
        for (std::size_t c = 0; c < study.checkpoints.size(); ++c)
          row[c] = sm.estimates()[study.checkpoints[c]][0];
      } else {
        ForwardSmoother sm(model, stat, y, true);
        FilterObserver* obs[] = {&sm};
        run_filter(model, y, cfg, rng, obs);
        for (std::size_t c = 0; c < study.checkpoints.size(); ++c)
          row[c] = sm.estimates()[study.checkpoints[c]][0];
      }
    };
    auto fails = replicate_runner(p.replicates, p.parallelism, job);
    study.failures.insert(study.failures.end(), fails.begin(), fails.end());
    study.arms.push_back(std::move(arm));
  }
  return study;
}

namespace {

std::vector<GridAxis> em_grid_axes() {
  GridAxis rho{kRho, {}}, tau{kTau2, {}};
  for (int i = 0; i <= 232; ++i) rho.values.push_back(0.40 + i * 0.0025);  // [0.40, 0.98]
  for (int i = 0; i <= 180; ++i) tau.values.push_back(0.40 + i * 0.01);    // [0.40, 2.20]
  return {rho, tau};
}

}  // namespace

EmStudy run_em_study(const EmStudyParams& p) {
  EmStudy study;
  Theta star = p.theta_star;
  Trajectory data = simulate_lgssm(star, p.horizon, mix64(p.seed ^ 0xf162));
  study.observations = data.observations;

  Theta base = p.theta0;
  base.free_mask = {true, true, false};
  GridMl ml = grid_ml(base, study.observations, em_grid_axes());
  study.grid_ml_theta = ml.argmax;
  study.grid_cell = ml.cell_width;

  for (std::size_t a = 0; a < p.arms.size(); ++a) {
    EmStudy::Arm arm;
    arm.method = p.arms[a].first.kind == BackendKind::PathSpace ? "pathspace" : "forward";
    arm.n_particles = p.arms[a].second;
    arm.finals.resize(p.replicates);
    arm.traces.resize(p.replicates);

    auto job = [&, a](int rep) {
      MlOptions opt;
      opt.filter.num_particles = p.arms[a].second;
      opt.record_exact_loglik = false;
      MlRun run = offline_em(study.observations, base, p.iters, p.arms[a].first, opt,
                             replicate_seed(p.seed, static_cast<long>(a) * 1000000L + rep));
      arm.finals[rep] = run.final_theta();
      arm.traces[rep].reserve(run.trace.size());
      for (const auto& pt : run.trace) arm.traces[rep].push_back(pt.theta);
    };
    auto fails = replicate_runner(p.replicates, p.parallelism, job);
    study.failures.insert(study.failures.end(), fails.begin(), fails.end());
    study.arms.push_back(std::move(arm));
  }
  return study;
}

OnlineEmStudy run_online_em_study(const OnlineEmStudyParams& p) {
  OnlineEmStudy study;
  Trajectory data = simulate_lgssm(p.theta_star, p.horizon, mix64(p.seed ^ 0xf163));
  study.observations = data.observations;
  study.checkpoints = make_checkpoints(p.horizon, p.stride);

  Theta base = p.theta0;
  base.free_mask = {true, true, false};
  GridMl ml = grid_ml(base, study.observations, em_grid_axes());
  study.grid_ml_theta = ml.argmax;
  study.grid_cell = ml.cell_width;

  study.finals.resize(p.replicates);
  study.traces.resize(p.replicates);
  auto job = [&](int rep) {
    MlOptions opt;
    opt.filter.num_particles = p.num_particles;
    opt.record_exact_loglik = false;
    OnlineEmOptions em_opt;
    em_opt.n_freeze = p.n_freeze;
    MlRun run = online_em(study.observations, base, p.schedule, p.smoothing, em_opt, opt,
                          replicate_seed(p.seed, rep));
    study.finals[rep] = run.final_theta();
    for (long cp : study.checkpoints) study.traces[rep].push_back(run.trace[cp].theta);
  };
  study.failures = replicate_runner(p.replicates, p.parallelism, job);
  return study;
}

DegeneracyStudy run_degeneracy_study(const DegeneracyStudyParams& p) {
  DegeneracyStudy study;
  Theta truth{1.0, p.tau2_true, p.sigma2_true};
  InitLaw init = InitLaw::fixed(p.init_var);
  Trajectory data = simulate_lgssm(truth, p.horizon, mix64(p.seed ^ 0xf164), init);
  study.observations = data.observations;
  study.checkpoints = make_checkpoints(p.horizon, p.stride);

  Theta base = truth;
  base.free_mask = {false, true, true};

  // exact grid posterior of (tau2, sigma2) at every checkpoint
  GridAxis tau{kTau2, {}}, sig{kSigma2, {}};
  for (int i = 0; i <= 110; ++i) tau.values.push_back(0.60 + i * 0.01);
  for (int i = 0; i <= 110; ++i) sig.values.push_back(0.60 + i * 0.01);
  for (long cp : study.checkpoints) {
    GridPosterior g = grid_posterior(base, p.prior, std::span<const double>(study.observations)
                                                        .subspan(0, cp + 1),
                                     {tau, sig}, init);
    study.grid_post_mean.push_back(g.mean[kTau2]);
    study.grid_post_var.push_back(g.variance[kTau2]);
  }

  study.post_mean_tau2.assign(p.replicates, {});
  study.loglik_hat.assign(p.replicates, {});
  study.unique_theta.assign(p.replicates, {});
  study.unique_ancestors.assign(p.replicates, {});

  auto job = [&](int rep) {
    McmcSmcOptions opt;
    opt.variant = SuffStatsVariant::TwoStat;
    opt.filter.num_particles = p.num_particles;
    opt.filter.proposal = p.proposal;
    opt.init = init;
    opt.checkpoint_stride = p.stride;
    McmcSmcResult res =
        mcmc_within_smc(study.observations, p.prior, base, opt, replicate_seed(p.seed, rep));
    for (const auto& cp : res.checkpoints) {
      if (cp.n == 0) continue;
      study.post_mean_tau2[rep].push_back(cp.post_mean[kTau2]);
      study.loglik_hat[rep].push_back(cp.loglik_hat);
      study.unique_theta[rep].push_back(static_cast<double>(cp.unique_theta));
      study.unique_ancestors[rep].push_back(static_cast<double>(cp.unique_ancestors));
    }
  };
  study.failures = replicate_runner(p.replicates, p.parallelism, job);
  return study;
}

PgibbsCompare run_pgibbs_compare(const PgibbsCompareParams& p) {
  PgibbsCompare study;
  Trajectory data = simulate_lgssm(p.theta_star, p.horizon, mix64(p.seed ^ 0xf166));
  study.observations = data.observations;

  Theta base = p.theta_star;
  base.free_mask = {true, false, true};

  GridAxis rho{kRho, {}}, sig{kSigma2, {}};
  const int m_rho = 80;
  for (int i = 0; i < m_rho; ++i) rho.values.push_back(-1.0 + 2.0 * (i + 0.5) / m_rho);
  for (int i = 0; i <= 120; ++i) sig.values.push_back(0.55 + i * 0.0075);
  GridPosterior g = grid_posterior(base, p.prior, study.observations, {rho, sig});
  study.grid_mean = g.mean;
  study.grid_var = g.variance;

  study.pg_means.assign(p.runs, {});
  study.smc_means.assign(p.runs, {});

  auto pg_job = [&](int run) {
    PgibbsOptions opt;
    opt.filter.num_particles = p.pg_particles;
    ChainRecord rec = pgibbs(study.observations, p.prior, p.pg_iters, base, opt,
                             replicate_seed(p.seed, run));
    std::array<double, 3> mean{};
    long count = 0;
    for (std::size_t i = p.pg_burnin; i < rec.size(); ++i) {
      mean[kRho] += rec.draws[i].rho;
      mean[kTau2] += rec.draws[i].tau2;
      mean[kSigma2] += rec.draws[i].sigma2;
      ++count;
    }
    for (auto& m : mean) m /= static_cast<double>(count);
    study.pg_means[run] = mean;
  };
  auto smc_job = [&](int run) {
    McmcSmcOptions opt;
    opt.variant = SuffStatsVariant::ThreeStat;
    opt.filter.num_particles = p.smc_particles;
    opt.init = InitLaw::stationary();
    opt.checkpoint_stride = p.horizon;
    McmcSmcResult res = mcmc_within_smc(study.observations, p.prior, base, opt,
                                        replicate_seed(p.seed, 500000L + run));
    study.smc_means[run] = res.checkpoints.back().post_mean;
  };
  auto fails1 = replicate_runner(p.runs, p.parallelism, pg_job);
  auto fails2 = replicate_runner(p.runs, p.parallelism, smc_job);
  study.failures = fails1;
  study.failures.insert(study.failures.end(), fails2.begin(), fails2.end());
  return study;
}

// --------------------------------------------------------------------------
// Configuration
// --------------------------------------------------------------------------

namespace {

const std::vector<std::string> kKnownKeys = {
    "experiment", "seed", "replicates", "parallelism", "out_dir", "theta", "free_params",
    "horizon", "data_csv", "forward_n", "pathspace_n", "num_particles", "iters", "lag",
    "paris_k", "step_exponent", "step_scale", "n_freeze", "stride", "proposal", "resampling",
    "algorithm", "prior_a", "prior_b", "prior_c", "prior_d", "rw_scale", "init_var",
    "pg_particles", "pg_iters", "smc_particles"};

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) == kKnownKeys.end())
      throw ConfigError("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("experiment", c.experiment);
  get("seed", c.seed);
  get("replicates", c.replicates);
  get("parallelism", c.parallelism);
  get("out_dir", c.out_dir);
  get("horizon", c.horizon);
  get("data_csv", c.data_csv);
  get("forward_n", c.forward_n);
  get("pathspace_n", c.pathspace_n);
  get("num_particles", c.num_particles);
  get("iters", c.iters);
  get("lag", c.lag);
  get("paris_k", c.paris_k);
  get("step_exponent", c.step_exponent);
  get("step_scale", c.step_scale);
  get("n_freeze", c.n_freeze);
  get("stride", c.stride);
  get("proposal", c.proposal);
  get("resampling", c.resampling);
  get("algorithm", c.algorithm);
  get("prior_a", c.prior_a);
  get("prior_b", c.prior_b);
  get("prior_c", c.prior_c);
  get("prior_d", c.prior_d);
  get("rw_scale", c.rw_scale);
  get("init_var", c.init_var);
  get("pg_particles", c.pg_particles);
  get("pg_iters", c.pg_iters);
  get("smc_particles", c.smc_particles);
  get("free_params", c.free_params);
  if (j.contains("theta")) {
    const json& t = j.at("theta");
    for (const auto& [key, _] : t.items())
      if (key != "rho" && key != "tau2" && key != "sigma2")
        throw ConfigError("config: unknown theta key '" + key + "'");
    Theta th;
    th.rho = t.value("rho", 0.0);
    th.tau2 = t.value("tau2", 1.0);
    th.sigma2 = t.value("sigma2", 1.0);
    c.theta = th;
  }
  if (c.experiment.empty()) throw ConfigError("config: missing 'experiment'");
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

// --------------------------------------------------------------------------
// run_experiment
// --------------------------------------------------------------------------

namespace {

constexpr const char* kVersion = "sspe 0.1.0";

ProposalKind parse_proposal(const std::string& s) {
  if (s == "bootstrap") return ProposalKind::Bootstrap;
  if (s == "optimal") return ProposalKind::LocallyOptimal;
  throw ConfigError("config: proposal must be 'bootstrap' or 'optimal'");
}

ResampleScheme parse_resampling(const std::string& s) {
  if (s == "multinomial") return ResampleScheme::Multinomial;
  if (s == "systematic") return ResampleScheme::Systematic;
  throw ConfigError("config: resampling must be 'multinomial' or 'systematic'");
}

std::array<bool, 3> parse_free(const std::vector<std::string>& names,
                               std::array<bool, 3> fallback) {
  if (names.empty()) return fallback;
  std::array<bool, 3> mask{false, false, false};
  for (const auto& n : names) {
    if (n == "rho") mask[kRho] = true;
    else if (n == "tau2") mask[kTau2] = true;
    else if (n == "sigma2") mask[kSigma2] = true;
    else throw ConfigError("config: unknown free parameter '" + n + "'");
  }
  return mask;
}

json theta_json(const Theta& t) {
  return json{{"rho", t.rho}, {"tau2", t.tau2}, {"sigma2", t.sigma2},
              {"free", json::array({t.free_mask[0], t.free_mask[1], t.free_mask[2]})}};
}

struct MetadataWriter {
  json doc;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  MetadataWriter(const ExperimentConfig& c) {
    doc["version"] = kVersion;
    doc["experiment"] = c.experiment;
    doc["master_seed"] = c.seed;
    doc["parallelism"] = c.parallelism;
  }
  void note(const std::string& s) { doc["notes"].push_back(s); }
  void seeds(std::uint64_t master, int count) {
    json arr = json::array();
    for (int r = 0; r < count; ++r) arr.push_back(replicate_seed(master, r));
    doc["replicate_seeds"] = arr;
  }
  void failures(const std::vector<ReplicateFailure>& fails, const std::string& out_dir) {
    doc["failed_replicates"] = fails.size();
    if (!fails.empty()) {
      json arr = json::array();
      for (const auto& f : fails) arr.push_back({{"replicate", f.index}, {"error", f.message}});
      std::ofstream mf(out_dir + "/failures.json");
      mf << arr.dump(2) << '\n';
    }
  }
  void finish(const std::string& out_dir) {
    doc["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream f(out_dir + "/metadata.json");
    f << doc.dump(2) << '\n';
  }
};

std::vector<double> load_or_simulate(const ExperimentConfig& c, const Theta& theta, long horizon,
                                     InitLaw init, MetadataWriter& meta) {
  if (!c.data_csv.empty()) {
    meta.doc["data"] = {{"source", c.data_csv}};
    return read_observations_csv(c.data_csv);
  }
  Trajectory t = simulate_lgssm(theta, horizon, mix64(c.seed ^ 0xda7a), init);
  meta.doc["data"] = {{"source", "simulated"}, {"theta_star", theta_json(theta)},
                      {"horizon", horizon}};
  return t.observations;
}

int finish_run(MetadataWriter& meta, const std::vector<ReplicateFailure>& fails,
               const std::string& out_dir) {
  meta.failures(fails, out_dir);
  meta.finish(out_dir);
  return fails.empty() ? 0 : 1;
}

int run_smoothing_bias_var(const ExperimentConfig& c, MetadataWriter& meta) {
  SmoothingStudyParams p;
  p.seed = c.seed;
  p.parallelism = c.parallelism;
  if (c.theta) p.theta = *c.theta;
  if (c.horizon > 0) p.horizon = c.horizon;
  if (c.replicates > 0) p.replicates = c.replicates;
  if (!c.forward_n.empty()) p.forward_n = c.forward_n;
  if (!c.pathspace_n.empty()) p.pathspace_n = c.pathspace_n;
  if (c.stride > 0) p.stride = c.stride;
  p.proposal = parse_proposal(c.proposal);
  meta.doc["params"] = {{"horizon", p.horizon}, {"replicates", p.replicates},
                        {"stride", p.stride}, {"theta", theta_json(p.theta)}};
  meta.seeds(p.seed, p.replicates);

  SmoothingStudy study = run_smoothing_study(p);

  for (const auto& arm : study.arms) {
    for (int rep = 0; rep < p.replicates; ++rep) {
      std::vector<EstimatorTraceRow> rows;
      for (std::size_t cidx = 0; cidx < study.checkpoints.size(); ++cidx)
        rows.push_back({study.checkpoints[cidx], arm.method + "_" +
                            std::to_string(arm.n_particles), 0, arm.estimates[rep][cidx]});
      write_estimator_trace_csv(c.out_dir + "/replicate_" + arm.method + "_" +
                                    std::to_string(arm.n_particles) + "_" + std::to_string(rep) +
                                    ".csv",
                                rows);
    }
  }

  std::vector<std::vector<std::string>> rows;
  for (const auto& arm : study.arms) {
    for (std::size_t cidx = 0; cidx < study.checkpoints.size(); ++cidx) {
      long n = study.checkpoints[cidx];
      std::vector<double> vals(p.replicates), scaled(p.replicates);
      for (int rep = 0; rep < p.replicates; ++rep) {
        vals[rep] = arm.estimates[rep][cidx];
        scaled[rep] = vals[rep] / std::sqrt(static_cast<double>(n));
      }
      double oracle = study.oracle[cidx];
      double bias = mean_of(vals) - oracle;
      double var_scaled = variance_of(scaled);
      double mse_scaled = 0.0;
      double oracle_scaled = oracle / std::sqrt(static_cast<double>(n));
      for (double s : scaled) mse_scaled += (s - oracle_scaled) * (s - oracle_scaled);
      mse_scaled /= p.replicates;
      rows.push_back({std::to_string(n), arm.method, std::to_string(arm.n_particles),
                      format_double(bias), format_double(var_scaled), format_double(mse_scaled),
                      format_double(oracle)});
    }
  }
  write_table_csv(c.out_dir + "/aggregate.csv", "n,method,N,bias,var_scaled,mse_scaled,oracle_s",
                  rows);
  return finish_run(meta, study.failures, c.out_dir);
}

int run_offline_em_experiment(const ExperimentConfig& c, MetadataWriter& meta) {
  EmStudyParams p;
  p.seed = c.seed;
  p.parallelism = c.parallelism;
  if (c.theta) p.theta_star = *c.theta;
  if (c.horizon > 0) p.horizon = c.horizon;
  if (c.replicates > 0) p.replicates = c.replicates;
  if (c.iters > 0) p.iters = c.iters;
  if (!c.forward_n.empty() || !c.pathspace_n.empty()) {
    p.arms.clear();
    for (int n : c.forward_n) p.arms.push_back({SmootherBackend::forward(), n});
    for (int n : c.pathspace_n) p.arms.push_back({SmootherBackend::pathspace(), n});
  }
  meta.note(
      "dataset parameters read as standard deviations per the source's symbols: "
      "(rho, tau, sigma) = (0.8, 1, 0.2) -> variances tau2 = 1, sigma2 = 0.04; "
      "theta0 = (0.1, 0.1, 0.2) likewise, sigma2 fixed at the true value");
  meta.doc["params"] = {{"horizon", p.horizon}, {"iters", p.iters},
                        {"replicates", p.replicates}, {"theta_star", theta_json(p.theta_star)},
                        {"theta0", theta_json(p.theta0)}};
  meta.seeds(p.seed, p.replicates);

  EmStudy study = run_em_study(p);
  for (const auto& arm : study.arms) {
    for (int rep = 0; rep < p.replicates; ++rep) {
      MlRun run;
      for (std::size_t k = 0; k < arm.traces[rep].size(); ++k)
        run.trace.push_back({static_cast<long>(k), arm.traces[rep][k],
                             std::numeric_limits<double>::quiet_NaN()});
      write_estimate_trace_csv(c.out_dir + "/replicate_" + arm.method + "_" +
                                   std::to_string(rep) + ".csv",
                               run);
    }
  }

  std::vector<std::vector<std::string>> rows;
  for (const auto& arm : study.arms) {
    for (int param : {kRho, kTau2}) {
      std::vector<double> finals(p.replicates);
      for (int rep = 0; rep < p.replicates; ++rep) finals[rep] = arm.finals[rep][param];
      rows.push_back({arm.method, std::to_string(arm.n_particles),
                      param == kRho ? "rho" : "tau2", format_double(quantile_of(finals, 0.10)),
                      format_double(quantile_of(finals, 0.25)),
                      format_double(quantile_of(finals, 0.50)),
                      format_double(quantile_of(finals, 0.75)),
                      format_double(quantile_of(finals, 0.90)),
                      format_double(study.grid_ml_theta[param]),
                      format_double(study.grid_cell[param])});
    }
  }
  write_table_csv(c.out_dir + "/aggregate.csv",
                  "method,N,param,q10,q25,median,q75,q90,grid_ml,grid_cell", rows);
  return finish_run(meta, study.failures, c.out_dir);
}

int run_online_em_experiment(const ExperimentConfig& c, MetadataWriter& meta) {
  OnlineEmStudyParams p;
  p.seed = c.seed;
  p.parallelism = c.parallelism;
  if (c.theta) p.theta_star = *c.theta;
  if (c.horizon > 0) p.horizon = c.horizon;
  if (c.replicates > 0) p.replicates = c.replicates;
  if (c.num_particles > 0) p.num_particles = c.num_particles;
  if (c.stride > 0) p.stride = c.stride;
  p.n_freeze = c.n_freeze;
  p.schedule = {c.step_exponent, c.step_scale};
  meta.note(
      "dataset parameters read as standard deviations per the source's symbols (see offline_em)");
  meta.doc["params"] = {{"horizon", p.horizon}, {"N", p.num_particles},
                        {"replicates", p.replicates}, {"n_freeze", p.n_freeze},
                        {"step_exponent", p.schedule.exponent}};
  meta.seeds(p.seed, p.replicates);

  OnlineEmStudy study = run_online_em_study(p);
  for (int rep = 0; rep < p.replicates; ++rep) {
    MlRun run;
    for (std::size_t k = 0; k < study.traces[rep].size(); ++k)
      run.trace.push_back({study.checkpoints[k], study.traces[rep][k],
                           std::numeric_limits<double>::quiet_NaN()});
    write_estimate_trace_csv(c.out_dir + "/replicate_" + std::to_string(rep) + ".csv", run);
  }

  std::vector<std::vector<std::string>> rows;
  for (std::size_t cidx = 0; cidx < study.checkpoints.size(); ++cidx) {
    for (int param : {kRho, kTau2}) {
      std::vector<double> vals(p.replicates);
      for (int rep = 0; rep < p.replicates; ++rep) vals[rep] = study.traces[rep][cidx][param];
      bool last = cidx + 1 == study.checkpoints.size();
      rows.push_back({std::to_string(study.checkpoints[cidx]),
                      param == kRho ? "rho" : "tau2",
                      format_double(quantile_of(vals, 0.10)),
                      format_double(quantile_of(vals, 0.25)),
                      format_double(quantile_of(vals, 0.50)),
                      format_double(quantile_of(vals, 0.75)),
                      format_double(quantile_of(vals, 0.90)),
                      last ? format_double(study.grid_ml_theta[param]) : std::string{}});
    }
  }
  write_table_csv(c.out_dir + "/aggregate.csv", "n,param,q10,q25,median,q75,q90,grid_ml", rows);
  return finish_run(meta, study.failures, c.out_dir);
}

int run_degeneracy_experiment(const ExperimentConfig& c, MetadataWriter& meta) {
  DegeneracyStudyParams p;
  p.seed = c.seed;
  p.parallelism = c.parallelism;
  if (c.horizon > 0) p.horizon = c.horizon;
  if (c.replicates > 0) p.replicates = c.replicates;
  if (c.num_particles > 0) p.num_particles = c.num_particles;
  if (c.stride > 0) p.stride = c.stride;
  p.prior = {c.prior_a, c.prior_b, c.prior_c, c.prior_d};
  p.proposal = parse_proposal(c.proposal);
  p.init_var = c.init_var;
  meta.note("random-walk state (rho = 1) with x0 ~ N(0, init_var), a parameter-independent "
            "initial law; the stationary law is undefined at rho = 1");
  meta.doc["params"] = {{"horizon", p.horizon}, {"N", p.num_particles},
                        {"replicates", p.replicates}, {"stride", p.stride},
                        {"init_var", p.init_var}};
  meta.seeds(p.seed, p.replicates);

  DegeneracyStudy study = run_degeneracy_study(p);
  for (int rep = 0; rep < p.replicates; ++rep) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t cidx = 0; cidx < study.checkpoints.size(); ++cidx)
      rows.push_back({std::to_string(study.checkpoints[cidx]),
                      format_double(study.post_mean_tau2[rep][cidx]),
                      format_double(study.loglik_hat[rep][cidx]),
                      format_double(study.unique_theta[rep][cidx]),
                      format_double(study.unique_ancestors[rep][cidx])});
    write_table_csv(c.out_dir + "/replicate_" + std::to_string(rep) + ".csv",
                    "n,post_mean_tau2,loglik_hat,unique_theta,unique_ancestors", rows);
  }

  std::vector<DiagnosticsRow> diag;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t cidx = 0; cidx < study.checkpoints.size(); ++cidx) {
    std::vector<double> means(p.replicates), lls(p.replicates), uth(p.replicates),
        uan(p.replicates);
    for (int rep = 0; rep < p.replicates; ++rep) {
      means[rep] = study.post_mean_tau2[rep][cidx];
      lls[rep] = study.loglik_hat[rep][cidx];
      uth[rep] = study.unique_theta[rep][cidx];
      uan[rep] = study.unique_ancestors[rep][cidx];
    }
    double rel_var = variance_of(means) / study.grid_post_var[cidx];
    double var_ll = variance_of(lls);
    diag.push_back({study.checkpoints[cidx], mean_of(uth), mean_of(uan), rel_var, var_ll});
    rows.push_back({std::to_string(study.checkpoints[cidx]), format_double(mean_of(uth)),
                    format_double(mean_of(uan)), format_double(rel_var), format_double(var_ll),
                    format_double(study.grid_post_mean[cidx]),
                    format_double(study.grid_post_var[cidx])});
  }
  write_diagnostics_csv(c.out_dir + "/diagnostics.csv", diag);
  write_table_csv(c.out_dir + "/aggregate.csv",
                  "n,unique_theta,unique_ancestors,rel_var_tau2,var_loglik,grid_post_mean_tau2,"
                  "grid_post_var_tau2",
                  rows);
  return finish_run(meta, study.failures, c.out_dir);
}

int run_posterior_mcmc_smc(const ExperimentConfig& c, MetadataWriter& meta) {
  // Fig-5-style: repeated runs of MCMC-within-SMC on the (rho, sigma2) model,
  // posterior means/variances per checkpoint against the exact grid
  Theta star = c.theta ? *c.theta : Theta{0.5, 0.01, 1.0};
  long horizon = c.horizon > 0 ? c.horizon : 2000;
  int replicates = c.replicates > 0 ? c.replicates : 20;
  int n_particles = c.num_particles > 0 ? c.num_particles : 2000;
  long stride = c.stride > 0 ? c.stride : 500;
  PriorSpec prior{c.prior_a, c.prior_b, c.prior_c, c.prior_d};

  Trajectory data = simulate_lgssm(star, horizon, mix64(c.seed ^ 0xf165));
  Theta base = star;
  base.free_mask = {true, false, true};
  meta.doc["params"] = {{"horizon", horizon}, {"N", n_particles}, {"replicates", replicates},
                        {"theta_star", theta_json(star)}};
  meta.seeds(c.seed, replicates);

  std::vector<long> cps = make_checkpoints(horizon, stride);
  std::vector<std::vector<std::array<double, 3>>> means(replicates), vars(replicates);
  auto job = [&](int rep) {
    McmcSmcOptions opt;
    opt.variant = SuffStatsVariant::ThreeStat;
    opt.filter.num_particles = n_particles;
    opt.filter.proposal = parse_proposal(c.proposal);
    opt.init = InitLaw::stationary();
    opt.checkpoint_stride = stride;
    McmcSmcResult res =
        mcmc_within_smc(data.observations, prior, base, opt, replicate_seed(c.seed, rep));
    for (const auto& cp : res.checkpoints) {
      if (cp.n == 0) continue;
      means[rep].push_back(cp.post_mean);
      vars[rep].push_back(cp.post_var);
    }
  };
  auto fails = replicate_runner(replicates, c.parallelism, job);

  GridAxis rho{kRho, {}}, sig{kSigma2, {}};
  for (int i = 0; i < 80; ++i) rho.values.push_back(-1.0 + 2.0 * (i + 0.5) / 80.0);
  for (int i = 0; i <= 120; ++i) sig.values.push_back(0.55 + i * 0.0075);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t cidx = 0; cidx < cps.size(); ++cidx) {
    GridPosterior g = grid_posterior(
        base, prior, std::span<const double>(data.observations).subspan(0, cps[cidx] + 1),
        {rho, sig});
    for (int param : {kRho, kSigma2}) {
      std::vector<double> m(replicates), v(replicates);
      for (int rep = 0; rep < replicates; ++rep) {
        m[rep] = means[rep][cidx][param];
        v[rep] = vars[rep][cidx][param];
      }
      rows.push_back({std::to_string(cps[cidx]), param == kRho ? "rho" : "sigma2",
                      format_double(mean_of(m)), format_double(variance_of(m)),
                      format_double(mean_of(v)), format_double(g.mean[param]),
                      format_double(g.variance[param])});
    }
  }
  write_table_csv(c.out_dir + "/aggregate.csv",
                  "n,param,mean_of_means,var_of_means,avg_post_var,grid_mean,grid_var", rows);
  return finish_run(meta, fails, c.out_dir);
}

int run_pgibbs_compare_experiment(const ExperimentConfig& c, MetadataWriter& meta) {
  PgibbsCompareParams p;
  p.seed = c.seed;
  p.parallelism = c.parallelism;
  if (c.theta) p.theta_star = *c.theta;
  if (c.horizon > 0) p.horizon = c.horizon;
  if (c.replicates > 0) p.runs = c.replicates;
  p.pg_particles = c.pg_particles;
  p.pg_iters = c.pg_iters;
  p.smc_particles = c.smc_particles;
  p.prior = {c.prior_a, c.prior_b, c.prior_c, c.prior_d};
  meta.doc["params"] = {{"horizon", p.horizon}, {"runs", p.runs},
                        {"pg_particles", p.pg_particles}, {"pg_iters", p.pg_iters},
                        {"smc_particles", p.smc_particles}};
  meta.seeds(p.seed, p.runs);

  PgibbsCompare study = run_pgibbs_compare(p);
  std::vector<std::vector<std::string>> rows;
  for (int param : {kRho, kSigma2}) {
    for (int arm = 0; arm < 2; ++arm) {
      const auto& src = arm == 0 ? study.pg_means : study.smc_means;
      std::vector<double> vals(p.runs);
      for (int run = 0; run < p.runs; ++run) vals[run] = src[run][param];
      rows.push_back({arm == 0 ? "pgibbs" : "mcmc_within_smc",
                      param == kRho ? "rho" : "sigma2", format_double(mean_of(vals)),
                      format_double(std::sqrt(variance_of(vals))),
                      format_double(study.grid_mean[param]),
                      format_double(study.grid_var[param])});
    }
  }
  write_table_csv(c.out_dir + "/aggregate.csv",
                  "arm,param,mean_estimate,sd_estimate,grid_mean,grid_var", rows);
  return finish_run(meta, study.failures, c.out_dir);
}

int run_custom(const ExperimentConfig& c, MetadataWriter& meta) {
  if (c.algorithm.empty()) throw ConfigError("config: custom experiment needs 'algorithm'");
  Theta theta = c.theta ? *c.theta : Theta{0.8, 0.1, 1.0};
  theta.free_mask = parse_free(c.free_params, theta.free_mask);
  long horizon = c.horizon > 0 ? c.horizon : 1000;
  int replicates = c.replicates > 0 ? c.replicates : 1;
  PriorSpec prior{c.prior_a, c.prior_b, c.prior_c, c.prior_d};
  meta.doc["params"] = {{"algorithm", c.algorithm}, {"horizon", horizon},
                        {"replicates", replicates}, {"theta", theta_json(theta)}};
  meta.seeds(c.seed, replicates);

  if (c.algorithm == "simulate") {
    Trajectory t = simulate_lgssm(theta, horizon, c.seed);
    write_trajectory_csv(c.out_dir + "/trajectory.csv", t);
    meta.finish(c.out_dir);
    return 0;
  }

  std::vector<double> y = load_or_simulate(c, theta, horizon, InitLaw::stationary(), meta);

  auto fails = replicate_runner(replicates, c.parallelism, [&](int rep) {
    std::uint64_t seed = replicate_seed(c.seed, rep);
    std::string suffix = "_" + std::to_string(rep) + ".csv";
    if (c.algorithm == "filter") {
      FilterConfig cfg;
      cfg.num_particles = c.num_particles > 0 ? c.num_particles : 1000;
      cfg.proposal = parse_proposal(c.proposal);
      cfg.resampling = parse_resampling(c.resampling);
      struct Summary : FilterObserver {
        std::vector<FilterSummaryRow> rows;
        void on_first(const ParticleSystem& s, double incr) override { add(s, incr); }
        void on_step(const ParticleSystem&, const ParticleSystem& s, double incr) override {
          add(s, incr);
        }
        void add(const ParticleSystem& s, double incr) {
          rows.push_back({s.time_index, incr, ess(s.norm_weights), filtered_mean(s),
                          filtered_var(s)});
        }
      } summary;
      FilterObserver* obs[] = {&summary};
      run_lg_filter(theta, y, cfg, Rng(seed), InitLaw::stationary(), obs);
      write_filter_summary_csv(c.out_dir + "/filter" + suffix, summary.rows);
    } else if (c.algorithm == "offline_em" || c.algorithm == "offline_gradient") {
      MlOptions opt;
      opt.filter.num_particles = c.num_particles > 0 ? c.num_particles : 200;
      SmootherBackend backend = SmootherBackend::forward();
      MlRun run;
      if (c.algorithm == "offline_em")
        run = offline_em(y, theta, c.iters > 0 ? c.iters : 25, backend, opt, seed);
      else
        run = offline_gradient(y, theta, c.iters > 0 ? c.iters : 25, backend, {}, opt, seed);
      write_estimate_trace_csv(c.out_dir + "/" + c.algorithm + suffix, run);
    } else if (c.algorithm == "online_em" || c.algorithm == "online_gradient") {
      MlOptions opt;
      opt.filter.num_particles = c.num_particles > 0 ? c.num_particles : 200;
      StepSizeSchedule sched{c.step_exponent, c.step_scale};
      MlRun run;
      if (c.algorithm == "online_em") {
        OnlineEmOptions em_opt;
        em_opt.n_freeze = c.n_freeze;
        run = online_em(y, theta, sched, OnlineSmoothing::Forward, em_opt, opt, seed);
      } else {
        run = online_gradient(y, theta, sched, OnlineSmoothing::Forward, opt, seed);
      }
      write_estimate_trace_csv(c.out_dir + "/" + c.algorithm + suffix, run);
    } else if (c.algorithm == "pmmh") {
      PmmhOptions opt;
      opt.filter.num_particles = c.num_particles > 0 ? c.num_particles : 500;
      opt.filter.proposal = parse_proposal(c.proposal);
      RandomWalkSpec rw;
      rw.scale = {c.rw_scale, c.rw_scale, c.rw_scale};
      ChainRecord rec = pmmh(y, prior, rw, c.iters > 0 ? c.iters : 5000, theta, opt, seed);
      write_chain_csv(c.out_dir + "/pmmh" + suffix, rec);
    } else if (c.algorithm == "pgibbs") {
      PgibbsOptions opt;
      opt.filter.num_particles = c.num_particles > 0 ? c.num_particles : 50;
      ChainRecord rec = pgibbs(y, prior, c.iters > 0 ? c.iters : 3000, theta, opt, seed);
      write_chain_csv(c.out_dir + "/pgibbs" + suffix, rec);
    } else if (c.algorithm == "grid_posterior") {
      int free_count = theta.free_mask[0] + theta.free_mask[1] + theta.free_mask[2];
      if (free_count < 1 || free_count > 2)
        throw ConfigError("grid_posterior: need 1 or 2 free parameters");
      std::vector<GridAxis> axes;
      for (int param = 0; param < 3; ++param) {
        if (!theta.free_mask[param]) continue;
        GridAxis ax{param, {}};
        if (param == kRho)
          for (int i = 0; i < 200; ++i) ax.values.push_back(-1.0 + 2.0 * (i + 0.5) / 200.0);
        else
          for (int i = 0; i <= 300; ++i) ax.values.push_back(0.02 + i * 0.01);
        axes.push_back(std::move(ax));
      }
      GridPosterior g = grid_posterior(theta, prior, y, axes);
      write_grid_csv(c.out_dir + "/grid" + suffix, g);
    } else {
      throw ConfigError("config: unknown algorithm '" + c.algorithm + "'");
    }
  });
  return finish_run(meta, fails, c.out_dir);
}

}  // namespace

int run_experiment(const ExperimentConfig& config) {
  try {
    fs::create_directories(config.out_dir);
    MetadataWriter meta(config);
    if (config.experiment == "smoothing_bias_var") return run_smoothing_bias_var(config, meta);
    if (config.experiment == "offline_em") return run_offline_em_experiment(config, meta);
    if (config.experiment == "online_em") return run_online_em_experiment(config, meta);
    if (config.experiment == "degeneracy") return run_degeneracy_experiment(config, meta);
    if (config.experiment == "posterior_mcmc_smc") return run_posterior_mcmc_smc(config, meta);
    if (config.experiment == "pgibbs_compare") return run_pgibbs_compare_experiment(config, meta);
    if (config.experiment == "custom") return run_custom(config, meta);
    throw ConfigError("config: unknown experiment '" + config.experiment + "'");
  } catch (const ConfigError&) {
    throw;  // caller maps to exit code 2
  }
}

}  // namespace sspe
