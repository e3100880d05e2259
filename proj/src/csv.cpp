#include "sspe/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sspe {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  return f;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& path, long line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed number '" + s +
                             "'");
  return v;
}

}  // namespace

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream f = open_out(path);
  f << "t,x,y\n";
  for (std::size_t t = 0; t < traj.length(); ++t)
    f << t << ',' << format_double(traj.states[t]) << ',' << format_double(traj.observations[t])
      << '\n';
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || split_csv_line(line) != std::vector<std::string>{"t", "x", "y"})
    throw std::runtime_error(path + ": expected header t,x,y");
  Trajectory traj;
  long line_no = 1, expect_t = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 3)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 3 columns");
    long t = static_cast<long>(parse_double(cells[0], path, line_no));
    if (t != expect_t)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": gap in t (expected " +
                               std::to_string(expect_t) + ", got " + std::to_string(t) + ")");
    ++expect_t;
    traj.states.push_back(parse_double(cells[1], path, line_no));
    traj.observations.push_back(parse_double(cells[2], path, line_no));
  }
  if (traj.length() == 0) throw std::runtime_error(path + ": no observations");
  return traj;
}

std::vector<double> read_observations_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": no observations");
  auto header = split_csv_line(line);
  int y_col;
  if (header == std::vector<std::string>{"t", "y"})
    y_col = 1;
  else if (header == std::vector<std::string>{"t", "x", "y"})
    y_col = 2;
  else
    throw std::runtime_error(path + ": expected header t,y or t,x,y");

  std::vector<double> y;
  long line_no = 1, expect_t = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " columns");
    long t = static_cast<long>(parse_double(cells[0], path, line_no));
    if (t != expect_t)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": gap in t (expected " +
                               std::to_string(expect_t) + ", got " + std::to_string(t) + ")");
    ++expect_t;
    y.push_back(parse_double(cells[y_col], path, line_no));
  }
  if (y.empty()) throw std::runtime_error(path + ": no observations");
  return y;
}

void write_filter_summary_csv(const std::string& path,
                              const std::vector<FilterSummaryRow>& rows) {
  std::ofstream f = open_out(path);
  f << "t,loglik_increment,ess,filtered_mean,filtered_var\n";
  for (const auto& r : rows)
    f << r.t << ',' << format_double(r.loglik_increment) << ',' << format_double(r.ess) << ','
      << format_double(r.filtered_mean) << ',' << format_double(r.filtered_var) << '\n';
}

void write_estimator_trace_csv(const std::string& path,
                               const std::vector<EstimatorTraceRow>& rows) {
  std::ofstream f = open_out(path);
  f << "n,estimator,component,value\n";
  for (const auto& r : rows)
    f << r.n << ',' << r.estimator << ',' << r.component << ',' << format_double(r.value) << '\n';
}

void write_estimate_trace_csv(const std::string& path, const MlRun& run) {
  std::ofstream f = open_out(path);
  f << "iter_or_n,rho,tau2,sigma2,exact_loglik\n";
  for (const auto& p : run.trace) {
    f << p.index << ',' << format_double(p.theta.rho) << ',' << format_double(p.theta.tau2) << ','
      << format_double(p.theta.sigma2) << ',';
    if (std::isfinite(p.exact_loglik)) f << format_double(p.exact_loglik);
    f << '\n';
  }
}

void write_chain_csv(const std::string& path, const ChainRecord& chain) {
  std::ofstream f = open_out(path);
  f << "iter,rho,tau2,sigma2,loglik_hat,accepted\n";
  for (std::size_t i = 0; i < chain.size(); ++i)
    f << i << ',' << format_double(chain.draws[i].rho) << ','
      << format_double(chain.draws[i].tau2) << ',' << format_double(chain.draws[i].sigma2) << ','
      << format_double(chain.loglik_hat[i]) << ',' << int(chain.accepted[i]) << '\n';
}

void write_grid_csv(const std::string& path, const GridPosterior& grid) {
  std::ofstream f = open_out(path);
  f << "param1,param2,log_unnorm,weight\n";
  std::size_t rows = grid.axes[0].values.size();
  std::size_t cols = grid.axes.size() == 2 ? grid.axes[1].values.size() : 1;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      f << format_double(grid.axes[0].values[i]) << ',';
      if (grid.axes.size() == 2) f << format_double(grid.axes[1].values[j]);
      f << ',' << format_double(grid.log_unnorm[i * cols + j]) << ','
        << format_double(grid.weights[i * cols + j]) << '\n';
    }
}

void write_diagnostics_csv(const std::string& path, const std::vector<DiagnosticsRow>& rows) {
  std::ofstream f = open_out(path);
  f << "n,unique_theta,unique_ancestors,rel_var_tau2,var_loglik\n";
  for (const auto& r : rows)
    f << r.n << ',' << format_double(r.unique_theta) << ',' << format_double(r.unique_ancestors)
      << ',' << format_double(r.rel_var_tau2) << ',' << format_double(r.var_loglik) << '\n';
}

void write_table_csv(const std::string& path, const std::string& header,
                     const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f = open_out(path);
  f << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) f << ',';
      f << row[i];
    }
    f << '\n';
  }
}

}  // namespace sspe
