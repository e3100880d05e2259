#pragma once

#include <string>
#include <vector>

#include "sspe/bayes.hpp"
#include "sspe/filter.hpp"
#include "sspe/kalman.hpp"
#include "sspe/ml.hpp"
#include "sspe/model.hpp"

namespace sspe {

// All numeric output uses 17 significant digits so write-then-read is
// bit-exact for doubles.
std::string format_double(double v);

void write_trajectory_csv(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory_csv(const std::string& path);

// Accepts `t,y` (or full `t,x,y`, taking the y column). Rejects empty files,
// malformed rows (with the line number) and gaps in t (naming the gap).
std::vector<double> read_observations_csv(const std::string& path);

struct FilterSummaryRow {
  long t;
  double loglik_increment, ess, filtered_mean, filtered_var;
};
void write_filter_summary_csv(const std::string& path, const std::vector<FilterSummaryRow>& rows);

struct EstimatorTraceRow {
  long n;
  std::string estimator;
  int component;
  double value;
};
void write_estimator_trace_csv(const std::string& path,
                               const std::vector<EstimatorTraceRow>& rows);

// iter_or_n,rho,tau2,sigma2,exact_loglik — the last column is left empty when
// the loglik was not computed.
void write_estimate_trace_csv(const std::string& path, const MlRun& run);

void write_chain_csv(const std::string& path, const ChainRecord& chain);

// param1,param2,log_unnorm,weight (param2 empty for one-dimensional grids)
void write_grid_csv(const std::string& path, const GridPosterior& grid);

struct DiagnosticsRow {
  long n;
  double unique_theta, unique_ancestors, rel_var_tau2, var_loglik;
};
void write_diagnostics_csv(const std::string& path, const std::vector<DiagnosticsRow>& rows);

// Generic helper for experiment aggregates: fixed header, string cells.
void write_table_csv(const std::string& path, const std::string& header,
                     const std::vector<std::vector<std::string>>& rows);

}  // namespace sspe
