#include "sspe/smooth.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "sspe/numeric.hpp"

namespace sspe {

namespace {

// Fills row[j] = log W_j + log f(x | X_j) over the previous system; returns the max.
double kernel_row(const ModelContract& model, const ParticleSystem& prev, double x,
                  std::vector<double>& row) {
  const int n = prev.size();
  row.resize(n);
  double mx = kNegInf;
  for (int j = 0; j < n; ++j) {
    double l = std::log(prev.norm_weights[j]) + model.trans_logpdf(x, prev.positions[j]);
    row[j] = l;
    if (l > mx) mx = l;
  }
  return mx;
}

std::vector<double> weighted_estimate(const ParticleSystem& sys, const std::vector<double>& table,
                                      int dim) {
  std::vector<double> est(dim, 0.0);
  for (int i = 0; i < sys.size(); ++i)
    for (int d = 0; d < dim; ++d) est[d] += sys.norm_weights[i] * table[i * dim + d];
  return est;
}

}  // namespace

// --------------------------------------------------------------------------
// PathspaceSmoother
// --------------------------------------------------------------------------

PathspaceSmoother::PathspaceSmoother(AdditiveFunctional s, std::span<const double> y,
                                     bool record_all)
    : s_(std::move(s)), y_(y), record_all_(record_all), estimate_(s_.dim, 0.0) {}

void PathspaceSmoother::on_first(const ParticleSystem& s0, double) {
  const int n = s0.size();
  acc_.assign(static_cast<std::size_t>(n) * s_.dim, 0.0);
  if (s_.includes_initial_term) {
    for (int i = 0; i < n; ++i) s_.eval_init(s0.positions[i], y_[0], &acc_[i * s_.dim]);
  }
  estimate_ = weighted_estimate(s0, acc_, s_.dim);
  if (record_all_) trace_.push_back(estimate_);
}

void PathspaceSmoother::on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) {
  const int n = cur.size();
  const long k = cur.time_index;
  next_acc_.assign(static_cast<std::size_t>(n) * s_.dim, 0.0);
  std::vector<double> term(s_.dim);
  for (int i = 0; i < n; ++i) {
    int a = cur.ancestors[i];
    s_.eval(k, prev.positions[a], cur.positions[i], y_[k], term.data());
    for (int d = 0; d < s_.dim; ++d) next_acc_[i * s_.dim + d] = acc_[a * s_.dim + d] + term[d];
  }
  acc_.swap(next_acc_);
  estimate_ = weighted_estimate(cur, acc_, s_.dim);
  if (record_all_) trace_.push_back(estimate_);
}

// --------------------------------------------------------------------------
// ForwardSmoother
// --------------------------------------------------------------------------

ForwardSmoother::ForwardSmoother(const ModelContract& model, AdditiveFunctional s,
                                 std::span<const double> y, bool record_all)
    : model_(&model), s_(std::move(s)), y_(y), record_all_(record_all), estimate_(s_.dim, 0.0) {}

void ForwardSmoother::on_first(const ParticleSystem& s0, double) {
  const int n = s0.size();
  v_.assign(static_cast<std::size_t>(n) * s_.dim, 0.0);
  if (s_.includes_initial_term) {
    for (int i = 0; i < n; ++i) s_.eval_init(s0.positions[i], y_[0], &v_[i * s_.dim]);
  }
  estimate_ = weighted_estimate(s0, v_, s_.dim);
  if (record_all_) trace_.push_back(estimate_);
}

void ForwardSmoother::on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) {
  const int n = cur.size();
  const int np = prev.size();
  const long k = cur.time_index;
  const double yk = y_[k];
  const int dim = s_.dim;
  v_next_.assign(static_cast<std::size_t>(n) * dim, 0.0);
  std::vector<double> vbar(dim), term(dim);

  for (int i = 0; i < n; ++i) {
    double xi = cur.positions[i];
    double mx = kernel_row(*model_, prev, xi, row_);
    if (!std::isfinite(mx)) throw UnreachableParticleError(k, i);
    double m0 = 0.0;
    if (s_.eval_given_prev_moments) {
      double m1 = 0.0, m2 = 0.0;
      std::fill(vbar.begin(), vbar.end(), 0.0);
      for (int j = 0; j < np; ++j) {
        double e = std::exp(row_[j] - mx);
        m0 += e;
        double xj = prev.positions[j];
        m1 += e * xj;
        m2 += e * xj * xj;
        const double* vj = &v_[j * dim];
        for (int d = 0; d < dim; ++d) vbar[d] += e * vj[d];
      }
      m1 /= m0;
      m2 /= m0;
      s_.eval_given_prev_moments(k, m1, m2, xi, yk, term.data());
      for (int d = 0; d < dim; ++d) v_next_[i * dim + d] = vbar[d] / m0 + term[d];
    } else {
      std::fill(vbar.begin(), vbar.end(), 0.0);
      for (int j = 0; j < np; ++j) {
        double e = std::exp(row_[j] - mx);
        m0 += e;
        s_.eval(k, prev.positions[j], xi, yk, term.data());
        const double* vj = &v_[j * dim];
        for (int d = 0; d < dim; ++d) vbar[d] += e * (vj[d] + term[d]);
      }
      for (int d = 0; d < dim; ++d) v_next_[i * dim + d] = vbar[d] / m0;
    }
  }
  v_.swap(v_next_);
  estimate_ = weighted_estimate(cur, v_, dim);
  if (record_all_) trace_.push_back(estimate_);
}

// --------------------------------------------------------------------------
// FixedLagSmoother
// --------------------------------------------------------------------------

FixedLagSmoother::FixedLagSmoother(AdditiveFunctional s, std::span<const double> y, long lag,
                                   bool record_all)
    : s_(std::move(s)), y_(y), lag_(lag), record_all_(record_all), frozen_(s_.dim, 0.0) {
  if (lag_ < 0) throw std::invalid_argument("fixed-lag smoother: lag must be >= 0");
}

void FixedLagSmoother::on_first(const ParticleSystem& s0, double) {
  n_particles_ = s0.size();
  window_.clear();
  frozen_.assign(s_.dim, 0.0);
  if (s_.includes_initial_term) {
    std::vector<double> v0(static_cast<std::size_t>(n_particles_) * s_.dim, 0.0);
    for (int i = 0; i < n_particles_; ++i) s_.eval_init(s0.positions[i], y_[0], &v0[i * s_.dim]);
    window_.push_back(std::move(v0));
  }
  last_ = &s0;
  settle(s0);
  if (record_all_) trace_.push_back(current_estimate());
}

void FixedLagSmoother::settle(const ParticleSystem& cur) {
  // entry for term k leaves the window once cur.time_index >= k + lag; the
  // front entry has k = cur.time_index - window_.size() + 1
  while (!window_.empty() &&
         cur.time_index - (cur.time_index - static_cast<long>(window_.size()) + 1) >= lag_) {
    const std::vector<double>& vals = window_.front();
    for (int i = 0; i < n_particles_; ++i)
      for (int d = 0; d < s_.dim; ++d) frozen_[d] += cur.norm_weights[i] * vals[i * s_.dim + d];
    window_.pop_front();
  }
}

void FixedLagSmoother::on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) {
  const long k = cur.time_index;
  const int dim = s_.dim;
  // reindex pending terms through the new ancestry
  for (auto& vals : window_) {
    scratch_.assign(vals.size(), 0.0);
    for (int i = 0; i < n_particles_; ++i) {
      const double* src = &vals[cur.ancestors[i] * dim];
      std::memcpy(&scratch_[i * dim], src, sizeof(double) * dim);
    }
    vals.swap(scratch_);
  }
  std::vector<double> fresh(static_cast<std::size_t>(n_particles_) * dim);
  for (int i = 0; i < n_particles_; ++i) {
    int a = cur.ancestors[i];
    s_.eval(k, prev.positions[a], cur.positions[i], y_[k], &fresh[i * dim]);
  }
  window_.push_back(std::move(fresh));
  last_ = &cur;
  settle(cur);
  if (record_all_) trace_.push_back(current_estimate());
}

std::vector<double> FixedLagSmoother::current_estimate() const {
  std::vector<double> est = frozen_;
  if (last_ != nullptr) {
    for (const auto& vals : window_)
      for (int i = 0; i < n_particles_; ++i)
        for (int d = 0; d < s_.dim; ++d) est[d] += last_->norm_weights[i] * vals[i * s_.dim + d];
  }
  return est;
}

// --------------------------------------------------------------------------
// ParisSmoother
// --------------------------------------------------------------------------

namespace {

// Draws one index from p(j) proportional to W_j f(x | X_j): rejection against
// the transition bound, direct inversion after `cap` failed proposals.
int backward_draw(const ModelContract& model, const ParticleSystem& prev,
                  std::span<const double> cum, double x, Rng& rng, long cap, long& proposals,
                  long& fallbacks, std::vector<double>& row) {
  double log_bound = model.log_trans_bound;
  for (long a = 0; a < cap; ++a) {
    ++proposals;
    int j = invert_cumulative(cum, rng.uniform01());
    double lf = model.trans_logpdf(x, prev.positions[j]);
    if (lf > log_bound + 1e-9)
      throw std::logic_error("backward sampler: transition density exceeds its stated bound");
    if (std::log(rng.uniform01()) < lf - log_bound) return j;
  }
  ++fallbacks;
  double mx = kernel_row(model, prev, x, row);
  if (!std::isfinite(mx)) throw UnreachableParticleError(prev.time_index, -1);
  double total = 0.0;
  for (double& r : row) {
    r = std::exp(r - mx);
    total += r;
  }
  double u = rng.uniform01() * total;
  double acc = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    acc += row[j];
    if (acc >= u) return static_cast<int>(j);
  }
  return static_cast<int>(row.size()) - 1;
}

}  // namespace

ParisSmoother::ParisSmoother(const ModelContract& model, AdditiveFunctional s,
                             std::span<const double> y, int num_samples, Rng rng, bool record_all)
    : model_(&model),
      s_(std::move(s)),
      y_(y),
      k_(num_samples),
      rng_(rng),
      record_all_(record_all),
      estimate_(s_.dim, 0.0) {
  if (k_ < 1) throw std::invalid_argument("paris smoother: need at least one backward sample");
  if (!model.has_trans_bound)
    throw std::invalid_argument("paris smoother: model lacks a transition density bound");
}

void ParisSmoother::on_first(const ParticleSystem& s0, double) {
  const int n = s0.size();
  v_.assign(static_cast<std::size_t>(n) * s_.dim, 0.0);
  if (s_.includes_initial_term)
    for (int i = 0; i < n; ++i) s_.eval_init(s0.positions[i], y_[0], &v_[i * s_.dim]);
  estimate_ = weighted_estimate(s0, v_, s_.dim);
  if (record_all_) trace_.push_back(estimate_);
}

void ParisSmoother::on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) {
  const int n = cur.size();
  const long k = cur.time_index;
  const int dim = s_.dim;
  v_next_.assign(static_cast<std::size_t>(n) * dim, 0.0);

  std::vector<double> cum(prev.size());
  double acc = 0.0;
  for (int j = 0; j < prev.size(); ++j) {
    acc += prev.norm_weights[j];
    cum[j] = acc;
  }
  cum.back() = 1.0;

  const long cap = 100L * prev.size();
  std::vector<double> term(dim), row;
  long dummy_proposals = 0;
  for (int i = 0; i < n; ++i) {
    double xi = cur.positions[i];
    for (int draw = 0; draw < k_; ++draw) {
      int j = backward_draw(*model_, prev, cum, xi, rng_, cap, dummy_proposals, fallbacks_, row);
      s_.eval(k, prev.positions[j], xi, y_[k], term.data());
      for (int d = 0; d < dim; ++d) v_next_[i * dim + d] += v_[j * dim + d] + term[d];
    }
    for (int d = 0; d < dim; ++d) v_next_[i * dim + d] /= static_cast<double>(k_);
  }
  v_.swap(v_next_);
  estimate_ = weighted_estimate(cur, v_, dim);
  if (record_all_) trace_.push_back(estimate_);
}

// --------------------------------------------------------------------------
// Offline wrappers
// --------------------------------------------------------------------------

std::vector<std::vector<double>> pathspace_additive(const FilterOutput& filter,
                                                    const AdditiveFunctional& s,
                                                    std::span<const double> y) {
  PathspaceSmoother sm(s, y, true);
  FilterObserver* obs[] = {&sm};
  replay(filter, obs);
  return sm.estimates();
}

std::vector<std::vector<double>> fixedlag_additive(const FilterOutput& filter,
                                                   const AdditiveFunctional& s,
                                                   std::span<const double> y, long lag) {
  FixedLagSmoother sm(s, y, lag, true);
  FilterObserver* obs[] = {&sm};
  replay(filter, obs);
  return sm.estimates();
}

std::vector<std::vector<double>> forward_smooth(const FilterOutput& filter,
                                                const ModelContract& model,
                                                const AdditiveFunctional& s,
                                                std::span<const double> y) {
  ForwardSmoother sm(model, s, y, true);
  FilterObserver* obs[] = {&sm};
  replay(filter, obs);
  return sm.estimates();
}

std::vector<std::vector<double>> paris_additive(const FilterOutput& filter,
                                                const ModelContract& model,
                                                const AdditiveFunctional& s,
                                                std::span<const double> y, int num_samples,
                                                Rng rng) {
  ParisSmoother sm(model, s, y, num_samples, rng, true);
  FilterObserver* obs[] = {&sm};
  replay(filter, obs);
  return sm.estimates();
}

namespace {

// Backward pass shared by ffbsm_weights / ffbsm_additive. Per time step n the
// denominators d_j = sum_l W_n^l f(X_{n+1}^j | X_n^l) are computed once; the
// additive accumulation folds the pair law through the statistic's
// prev-moment evaluator when available.
void ffbsm_backward(const FilterOutput& filter, const ModelContract& model,
                    std::vector<std::vector<double>>* weights_out,
                    const AdditiveFunctional* s, std::span<const double> y,
                    std::vector<double>* additive_out) {
  if (filter.systems.empty())
    throw std::invalid_argument("ffbsm: filter output has no stored systems");
  const auto& sys = filter.systems;
  const std::size_t t_len = sys.size();
  const int dim = s ? s->dim : 0;

  std::vector<double> wbar = sys.back().norm_weights;  // W_{n|T}, initialized at n = T
  if (weights_out) {
    weights_out->assign(t_len, {});
    (*weights_out)[t_len - 1] = wbar;
  }
  if (additive_out) additive_out->assign(dim, 0.0);
  std::vector<double> term(dim), pair_term(dim);

  for (std::size_t n = t_len - 1; n-- > 0;) {
    const ParticleSystem& prev = sys[n];
    const ParticleSystem& next = sys[n + 1];
    const int np = prev.size();
    const int nn = next.size();

    std::vector<double> logw_prev(np);
    for (int i = 0; i < np; ++i) logw_prev[i] = std::log(prev.norm_weights[i]);

    std::vector<double> next_wbar(np, 0.0);
    for (int j = 0; j < nn; ++j) {
      double xj = next.positions[j];
      // denominator for target particle j
      double mx = kNegInf;
      std::vector<double> row(np);
      for (int i = 0; i < np; ++i) {
        row[i] = logw_prev[i] + model.trans_logpdf(xj, prev.positions[i]);
        if (row[i] > mx) mx = row[i];
      }
      if (!std::isfinite(mx)) throw UnreachableParticleError(static_cast<long>(n), j);
      double m0 = 0.0, m1 = 0.0, m2 = 0.0;
      for (int i = 0; i < np; ++i) {
        double e = std::exp(row[i] - mx);
        row[i] = e;
        m0 += e;
        m1 += e * prev.positions[i];
        m2 += e * prev.positions[i] * prev.positions[i];
      }
      // backward weight flow towards every source particle i
      double flow = wbar[j] / m0;
      for (int i = 0; i < np; ++i) next_wbar[i] += row[i] * flow;

      if (additive_out) {
        long k = next.time_index;
        if (s->eval_given_prev_moments) {
          s->eval_given_prev_moments(k, m1 / m0, m2 / m0, xj, y[k], pair_term.data());
        } else {
          std::fill(pair_term.begin(), pair_term.end(), 0.0);
          for (int i = 0; i < np; ++i) {
            s->eval(k, prev.positions[i], xj, y[k], term.data());
            for (int d = 0; d < dim; ++d) pair_term[d] += row[i] / m0 * term[d];
          }
        }
        for (int d = 0; d < dim; ++d) (*additive_out)[d] += wbar[j] * pair_term[d];
      }
    }
    wbar.swap(next_wbar);
    if (weights_out) (*weights_out)[n] = wbar;
  }

  if (additive_out && s->includes_initial_term) {
    const ParticleSystem& s0 = sys.front();
    for (int i = 0; i < s0.size(); ++i) {
      s->eval_init(s0.positions[i], y[0], term.data());
      for (int d = 0; d < dim; ++d) (*additive_out)[d] += wbar[i] * term[d];
    }
  }
}

}  // namespace

std::vector<std::vector<double>> ffbsm_weights(const FilterOutput& filter,
                                               const ModelContract& model) {
  std::vector<std::vector<double>> w;
  ffbsm_backward(filter, model, &w, nullptr, {}, nullptr);
  return w;
}

std::vector<double> ffbsm_additive(const FilterOutput& filter, const ModelContract& model,
                                   const AdditiveFunctional& s, std::span<const double> y) {
  std::vector<double> out;
  ffbsm_backward(filter, model, nullptr, &s, y, &out);
  return out;
}

FfbsaResult ffbsa_sample(const FilterOutput& filter, const ModelContract& model, int num_paths,
                         FfbsaMode mode, Rng& rng) {
  if (filter.systems.empty())
    throw std::invalid_argument("ffbsa_sample: filter output has no stored systems");
  if (mode == FfbsaMode::Rejection && !model.has_trans_bound)
    throw std::invalid_argument("ffbsa_sample: rejection mode needs a transition density bound");
  const auto& sys = filter.systems;
  const std::size_t t_len = sys.size();

  std::vector<std::vector<double>> cums(t_len);
  for (std::size_t n = 0; n < t_len; ++n) {
    cums[n].resize(sys[n].size());
    double acc = 0.0;
    for (int i = 0; i < sys[n].size(); ++i) {
      acc += sys[n].norm_weights[i];
      cums[n][i] = acc;
    }
    cums[n].back() = 1.0;
  }

  FfbsaResult res;
  res.paths.assign(num_paths, std::vector<double>(t_len, 0.0));
  std::vector<double> row;
  for (int m = 0; m < num_paths; ++m) {
    int idx = invert_cumulative(cums[t_len - 1], rng.uniform01());
    res.paths[m][t_len - 1] = sys[t_len - 1].positions[idx];
    for (std::size_t n = t_len - 1; n-- > 0;) {
      double x_next = res.paths[m][n + 1];
      const ParticleSystem& prev = sys[n];
      if (mode == FfbsaMode::Rejection) {
        long cap = 100L * prev.size();
        idx = backward_draw(model, prev, cums[n], x_next, rng, cap, res.proposals, res.fallbacks,
                            row);
      } else {
        double mx = kernel_row(model, prev, x_next, row);
        if (!std::isfinite(mx)) throw UnreachableParticleError(static_cast<long>(n), -1);
        double total = 0.0;
        for (double& r : row) {
          r = std::exp(r - mx);
          total += r;
        }
        double u = rng.uniform01() * total;
        double acc = 0.0;
        idx = prev.size() - 1;
        for (int j = 0; j < prev.size(); ++j) {
          acc += row[j];
          if (acc >= u) {
            idx = j;
            break;
          }
        }
      }
      res.paths[m][n] = prev.positions[idx];
    }
  }
  return res;
}

}  // namespace sspe
