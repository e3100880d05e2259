#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sspe/kalman.hpp"
#include "sspe/ml.hpp"
#include "sspe/numeric.hpp"
#include "support/dense_gaussian.hpp"

using namespace sspe;

namespace {

Theta random_theta(Rng& rng) {
  Theta th;
  th.rho = rng.uniform(-0.9, 0.9);
  th.tau2 = rng.uniform(0.05, 2.0);
  th.sigma2 = rng.uniform(0.1, 2.0);
  return th;
}

}  // namespace

TEST_CASE("single observation likelihood is the stationary marginal") {
  Theta th{0.8, 0.1, 1.0};
  std::vector<double> y{0.7};
  double v0 = th.tau2 / (1.0 - th.rho * th.rho);
  CHECK(kalman_loglik(th, y) == doctest::Approx(log_normal_pdf(0.7, 0.0, v0 + th.sigma2))
                                    .epsilon(1e-14));
}

TEST_CASE("degenerate state: rho = 0, tiny tau2 reduces to iid observations") {
  Theta th{0.0, 1e-12, 0.7};
  Rng rng(5);
  std::vector<double> y(50);
  for (double& v : y) v = rng.normal(0.0, 1.0);
  double expect = 0.0;
  for (double v : y) expect += log_normal_pdf(v, 0.0, th.sigma2);
  CHECK(kalman_loglik(th, y) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("filter log-likelihood matches the dense joint-Gaussian oracle at T=5") {
  Theta th{0.8, 0.1, 1.0};
  Rng rng(21);
  std::vector<double> y(6);
  for (double& v : y) v = rng.normal(0.0, 1.5);
  double exact = oracle::marginal_loglik(th, y);
  CHECK(std::abs(kalman_loglik(th, y) - exact) < 1e-10);
}

TEST_CASE("filter rejects non-finite observations with the index") {
  Theta th{0.5, 0.5, 1.0};
  std::vector<double> y{0.1, std::numeric_limits<double>::quiet_NaN(), 0.3};
  CHECK_THROWS_WITH_AS(kalman_filter(th, y) /* index named */,
                       doctest::Contains("index 1"), std::invalid_argument);
}

TEST_CASE("smoother boundary identity, variance ordering, dense-conditioning match at T=3") {
  Theta th{0.6, 0.4, 0.8};
  Rng rng(31);
  std::vector<double> y(4);
  for (double& v : y) v = rng.normal(0.0, 1.0);

  KalmanResult r = kalman_filter(th, y);
  rts_smoother(r, th);
  CHECK(r.smooth_mean.back() == doctest::Approx(r.filt_mean.back()).epsilon(1e-14));
  CHECK(r.smooth_var.back() == doctest::Approx(r.filt_var.back()).epsilon(1e-14));
  for (std::size_t n = 0; n < y.size(); ++n)
    CHECK(r.smooth_var[n] <= r.filt_var[n] + 1e-12);

  oracle::ConditionalMoments cm = oracle::conditional_moments(th, y);
  for (std::size_t n = 0; n < y.size(); ++n) {
    CHECK(std::abs(r.smooth_mean[n] - cm.mean[n]) < 1e-10);
    CHECK(std::abs(r.smooth_var[n] - cm.cov.at(n, n)) < 1e-10);
  }
  for (std::size_t n = 0; n + 1 < y.size(); ++n)
    CHECK(std::abs(r.lag1_cov[n] - cm.cov.at(n, n + 1)) < 1e-10);
}

TEST_CASE("loglik is invariant to splitting and chaining the filter") {
  Theta th{0.7, 0.3, 0.9};
  Rng rng(41);
  std::vector<double> y(40);
  for (double& v : y) v = rng.normal(0.0, 1.2);
  double whole = kalman_loglik(th, y);
  for (std::size_t cut : {1u, 7u, 20u, 39u}) {
    KalmanResult head = kalman_filter(th, std::span<const double>(y).subspan(0, cut));
    KalmanResult tail =
        kalman_filter_chained(th, std::span<const double>(y).subspan(cut), final_state(head));
    CHECK(std::abs(head.loglik() + tail.loglik() - whole) < 1e-12 * std::abs(whole) + 1e-12);
  }
}

TEST_CASE("exact_additive: zero functional, cross-product vs Monte Carlo, flat-data limit") {
  Theta th{0.5, 0.6, 0.9};
  Rng rng(51);
  std::vector<double> y(3);
  for (double& v : y) v = rng.normal(0.0, 1.0);

  AdditiveFunctional zero;
  zero.dim = 2;
  zero.eval = [](long, double, double, double, double* out) { out[0] = out[1] = 0.0; };
  zero.eval_pair_moments = [](long, const PairMoments&, double, double* out) {
    out[0] = out[1] = 0.0;
  };
  auto z = exact_additive(th, y, zero);
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);

  // non-quadratic statistic is rejected
  AdditiveFunctional abs_stat;
  abs_stat.dim = 1;
  abs_stat.eval = [](long, double xp, double, double, double* out) { out[0] = std::abs(xp); };
  CHECK_THROWS_AS(exact_additive(th, y, abs_stat), std::invalid_argument);

  // s_k = x_{k-1} x_k at T=2 against 1e6 exact posterior draws
  auto exact = exact_additive(th, y, cross_product_statistic());
  oracle::ConditionalMoments cm = oracle::conditional_moments(th, y);
  Rng srng(777);
  const int draws = 1000000;
  double mc = 0.0, mc2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    std::vector<double> x = oracle::sample_conditional(cm, srng);
    double v = x[0] * x[1] + x[1] * x[2];
    mc += v;
    mc2 += v * v;
  }
  double mean = mc / draws;
  double se = std::sqrt((mc2 / draws - mean * mean) / draws);
  CHECK(std::abs(exact[0] - mean) <= 3.0 * se);

  // huge observation noise: smoothed second moments revert to the prior ones
  Theta flat{0.5, 0.6, 1e8};
  std::vector<double> yf(20);
  Rng rng2(52);
  for (double& v : yf) v = rng2.normal(0.0, 1.0);
  auto sq = exact_additive(flat, yf, square_statistic());
  double v0 = flat.tau2 / (1.0 - 0.25);
  double expect = 0.0;
  double var = v0;
  for (std::size_t k = 1; k < yf.size(); ++k) {
    var = 0.25 * var + flat.tau2;  // unconditional Var(x_k); stationary here
    expect += var;
  }
  CHECK(std::abs(sq[0] - expect) / expect < 1e-3);
}

TEST_CASE("exact_score agrees with central finite differences on 20 random instances") {
  Rng rng(61);
  for (int inst = 0; inst < 20; ++inst) {
    Theta th = random_theta(rng);
    Trajectory data = simulate_lgssm(th, 30, 1000 + inst);
    std::span<const double> y(data.observations);

    auto g = exact_score(th, y);
    const double h = 1e-5;
    for (int p = 0; p < 3; ++p) {
      Theta up = th, dn = th;
      up[p] += h;
      dn[p] -= h;
      double fd = (kalman_loglik(up, y) - kalman_loglik(dn, y)) / (2.0 * h);
      double denom = std::max(std::abs(fd), 1e-8);
      CHECK(std::abs(g[p] - fd) / denom < 1e-4);
    }
  }
}

TEST_CASE("score vanishes at the grid ML point") {
  Theta truth{0.6, 0.4, 1.0};
  Trajectory data = simulate_lgssm(truth, 400, 2024);
  std::span<const double> y(data.observations);

  Theta base = truth;
  base.free_mask = {true, true, false};
  GridAxis rho_axis{kRho, {}};
  GridAxis tau_axis{kTau2, {}};
  for (int i = 0; i < 321; ++i) rho_axis.values.push_back(0.30 + i * 0.0015625);  // [0.30, 0.80]
  for (int i = 0; i < 321; ++i) tau_axis.values.push_back(0.15 + i * 0.0025);     // [0.15, 0.95]
  GridMl ml = grid_ml(base, y, {rho_axis, tau_axis});

  auto g = exact_score(ml.argmax, y);
  // the score slope over one grid cell bounds the achievable residual
  const double h_rho = ml.cell_width[kRho];
  const double h_tau = ml.cell_width[kTau2];
  Theta up = ml.argmax;
  up.rho += h_rho;
  Theta dn = ml.argmax;
  dn.rho -= h_rho;
  double curv_rho = std::abs(exact_score(up, y)[kRho] - exact_score(dn, y)[kRho]);
  up = ml.argmax; up.tau2 += h_tau;
  dn = ml.argmax; dn.tau2 -= h_tau;
  double curv_tau = std::abs(exact_score(up, y)[kTau2] - exact_score(dn, y)[kTau2]);
  CHECK(std::abs(g[kRho]) <= curv_rho);
  CHECK(std::abs(g[kTau2]) <= curv_tau);
}

TEST_CASE("tau2 score pushes towards the truth from below") {
  Theta truth{0.8, 0.1, 1.0};
  Trajectory data = simulate_lgssm(truth, 10000, 7);
  Theta low = truth;
  low.tau2 = 0.05;
  auto g = exact_score(low, data.observations);
  CHECK(g[kTau2] > 0.0);
}

TEST_CASE("grid posterior: degenerate grid, flat likelihood, refinement stability") {
  PriorSpec prior;

  // single grid point carries all mass
  Theta base{0.5, 0.6, 1.0};
  base.free_mask = {false, true, false};
  Rng rng(71);
  std::vector<double> y(30);
  for (double& v : y) v = rng.normal(0.0, 1.0);
  GridPosterior single = grid_posterior(base, prior, y, {GridAxis{kTau2, {0.6}}});
  CHECK(single.weights.size() == 1);
  CHECK(single.weights[0] == doctest::Approx(1.0));

  // sigma2 -> infinity surrogate: posterior equals the discretized prior in TV
  Theta flat{0.5, 0.6, 1e8};
  flat.free_mask = {false, true, false};
  GridAxis axis{kTau2, {}};
  for (int i = 0; i < 200; ++i) axis.values.push_back(0.02 + i * 0.12);
  GridPosterior post = grid_posterior(flat, prior, y, {axis});
  // discretized prior with the same cells
  double tv = 0.0;
  std::vector<double> pw(axis.values.size());
  {
    std::vector<double> lw(axis.values.size());
    for (std::size_t i = 0; i < axis.values.size(); ++i)
      lw[i] = prior.log_density_component(kTau2, axis.values[i]);
    // reuse the same trapezoid cells the implementation uses
    for (std::size_t i = 0; i < axis.values.size(); ++i) {
      double lo = (i == 0) ? axis.values[0] - 0.06 : 0.5 * (axis.values[i - 1] + axis.values[i]);
      double hi = (i + 1 == axis.values.size()) ? axis.values.back() + 0.06
                                                : 0.5 * (axis.values[i] + axis.values[i + 1]);
      pw[i] = std::exp(lw[i]) * (hi - lo);
    }
    double s = 0.0;
    for (double w : pw) s += w;
    for (std::size_t i = 0; i < pw.size(); ++i) {
      pw[i] /= s;
      tv += std::abs(pw[i] - post.weights[i]);
    }
  }
  CHECK(0.5 * tv < 1e-3);

  // refinement: posterior means move by less than a coarse cell
  Theta truth{0.5, 0.5, 1.0};
  Trajectory data = simulate_lgssm(truth, 200, 555);
  Theta b2 = truth;
  b2.free_mask = {true, false, true};
  auto make_axes = [](int n) {
    GridAxis ra{kRho, {}}, sa{kSigma2, {}};
    for (int i = 0; i < n; ++i) {
      ra.values.push_back(-0.95 + 1.9 * (i + 0.5) / n);
      sa.values.push_back(0.3 + 2.2 * (i + 0.5) / n);
    }
    return std::vector<GridAxis>{ra, sa};
  };
  GridPosterior coarse = grid_posterior(b2, prior, data.observations, make_axes(100));
  GridPosterior fine = grid_posterior(b2, prior, data.observations, make_axes(400));
  double cell_rho = 1.9 / 100, cell_sig = 2.2 / 100;
  CHECK(std::abs(coarse.mean[kRho] - fine.mean[kRho]) < cell_rho);
  CHECK(std::abs(coarse.mean[kSigma2] - fine.mean[kSigma2]) < cell_sig);

  // a grid that truncates the posterior is rejected
  GridAxis bad{kTau2, {}};
  for (int i = 0; i < 20; ++i) bad.values.push_back(1e-4 + i * 1e-5);
  Theta b3{0.5, 0.5, 1.0};
  b3.free_mask = {false, true, false};
  CHECK_THROWS_AS(grid_posterior(b3, prior, data.observations, {bad}), std::invalid_argument);
}

TEST_CASE("exact EM step: monotone loglik, fixed point, boundary flags") {
  Rng rng(81);
  // never decreases the exact log-likelihood on 50 random instances
  for (int inst = 0; inst < 50; ++inst) {
    Theta th = random_theta(rng);
    Theta start = random_theta(rng);
    Trajectory data = simulate_lgssm(th, 60, 3000 + inst);
    EmStepResult r = exact_em_step(start, data.observations);
    CHECK(r.loglik_after >= r.loglik_before - 1e-9 * std::abs(r.loglik_before) - 1e-9);
  }

  // run to convergence, then one more step stays put
  Theta truth{0.6, 0.3, 0.8};
  Trajectory data = simulate_lgssm(truth, 300, 91);
  Theta cur = truth;
  cur.rho = 0.2;
  cur.tau2 = 1.0;
  cur.sigma2 = 1.5;
  for (int k = 0; k < 100000; ++k) {
    Theta next = exact_em_step(cur, data.observations).theta;
    double move = std::abs(next.rho - cur.rho) + std::abs(next.tau2 - cur.tau2) +
                  std::abs(next.sigma2 - cur.sigma2);
    cur = next;
    if (move < 1e-12) break;
  }
  EmStepResult last = exact_em_step(cur, data.observations);
  CHECK(std::abs(last.theta.rho - cur.rho) < 1e-8);
  CHECK(std::abs(last.theta.tau2 - cur.tau2) < 1e-8);
  CHECK(std::abs(last.theta.sigma2 - cur.sigma2) < 1e-8);
}

TEST_CASE("lambda_map closed form, boundaries, and Q-grid maximization") {
  // perfect-fit trajectory x = y = (1,1,1): rho = 1, tau2 and sigma2 at zero boundary
  // raw statistic: z1 = 0, z2 = 2, z3 = 2, z4 = 2 over T = 2 transitions
  Theta base{0.3, 0.5, 0.5};
  LambdaResult r = lambda_map({0.0, 1.0, 1.0, 1.0}, 2, base);
  CHECK(r.raw[kRho] == doctest::Approx(1.0));
  CHECK(r.rho_clamped);
  CHECK(r.tau2_boundary);
  CHECK(r.sigma2_boundary);

  // documented resolution of the printed M-step: rho = z3 / z2
  LambdaResult r2 = lambda_map({0.4, 2.0, 1.0, 3.0}, 10, base);
  CHECK(r2.theta.rho == doctest::Approx(0.5));
  CHECK(r2.theta.tau2 == doctest::Approx(3.0 - 1.0 / 2.0));

  CHECK_THROWS_AS(lambda_map({0.1, -1.0, 0.0, 1.0}, 5, base), std::invalid_argument);

  // against brute-force maximization of the intermediate quantity
  Theta truth{0.6, 0.4, 0.9};
  Trajectory data = simulate_lgssm(truth, 120, 17);
  std::span<const double> y(data.observations);
  Theta at = truth;
  at.rho = 0.2;
  at.tau2 = 1.1;
  at.sigma2 = 0.5;
  std::vector<double> s = exact_additive(at, y, em_statistic());
  const double horizon = static_cast<double>(y.size()) - 1.0;
  LambdaResult step = lambda_map({s[0] / horizon, s[1] / horizon, s[2] / horizon, s[3] / horizon},
                                 static_cast<long>(horizon), at);
  // grid over (rho', tau2'): expected complete-data log-density given x_0
  double best = -1e300, best_rho = 0.0, best_tau = 0.0;
  for (int i = 0; i < 2000; ++i) {
    double rho = -0.999 + 1.998 * i / 1999.0;
    double resid = s[3] - 2.0 * rho * s[2] + rho * rho * s[1];
    double tau2 = resid / horizon;  // inner maximizer for fixed rho
    double q = -0.5 * horizon * std::log(tau2) - resid / (2.0 * tau2);
    if (q > best) {
      best = q;
      best_rho = rho;
      best_tau = tau2;
    }
  }
  CHECK(std::abs(step.theta.rho - best_rho) < 2e-3);
  CHECK(std::abs(step.theta.tau2 - best_tau) < 2e-3);
  // sigma2 maximizer of the observation part
  double best_s = -1e300, best_sig = 0.0;
  for (int i = 1; i < 4000; ++i) {
    double sig = 0.001 * i;
    double q = -0.5 * (horizon + 1.0) * std::log(sig) - s[0] / (2.0 * sig);
    if (q > best_s) {
      best_s = q;
      best_sig = sig;
    }
  }
  CHECK(std::abs(step.theta.sigma2 - best_sig) < 2e-3);
}
