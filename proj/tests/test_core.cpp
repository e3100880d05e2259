#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "sspe/model.hpp"
#include "sspe/numeric.hpp"
#include "sspe/particle.hpp"
#include "sspe/rng.hpp"

using namespace sspe;

TEST_CASE("rng determinism and stream independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng root(7);
  Rng c1 = root.child(1), c2 = root.child(2);
  int agree = 0;
  for (int i = 0; i < 64; ++i) agree += ((c1.next_u64() & 1) == (c2.next_u64() & 1));
  CHECK(agree < 55);  // substreams are not copies of each other

  // child() is const and repeatable
  Rng d1 = root.child(5), d2 = root.child(5);
  CHECK(d1.next_u64() == d2.next_u64());
}

TEST_CASE("rng uniform01 stays inside the open interval") {
  Rng r(3);
  for (int i = 0; i < 100000; ++i) {
    double u = r.uniform01();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("rng normal and gamma moments") {
  Rng r(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(s2 / n - 1.0) < 3.0 * std::sqrt(2.0 / n));

  double g = 0.0, g2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = r.gamma(3.0);
    g += x;
    g2 += x * x;
  }
  double mean = g / n;
  CHECK(std::abs(mean - 3.0) < 3.0 * std::sqrt(3.0 / n));
  CHECK(std::abs(g2 / n - mean * mean - 3.0) < 0.15);
}

TEST_CASE("truncated normal stays in bounds and matches central moments") {
  Rng r(13);
  double s = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double x = r.truncated_normal(0.0, 1.0, -1.0, 1.0);
    REQUIRE(x >= -1.0);
    REQUIRE(x <= 1.0);
    s += x;
  }
  CHECK(std::abs(s / n) < 0.01);
  // far tail draw
  for (int i = 0; i < 1000; ++i) {
    double x = r.truncated_normal(0.0, 1.0, 5.0, 6.0);
    REQUIRE(x >= 5.0);
    REQUIRE(x <= 6.0);
  }
}

TEST_CASE("normalize_log_weights examples") {
  std::vector<double> out(2);
  double lm = normalize_log_weights(std::vector<double>{0.0, 0.0}, out);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));
  CHECK(lm == doctest::Approx(0.0));

  // shift invariance at c = 1e6 (tolerance: representing c + log 3 in a double
  // already costs ~1e-10 relative)
  double c = 1e6;
  normalize_log_weights(std::vector<double>{c, c + std::log(3.0)}, out);
  CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(out[1] == doctest::Approx(0.75).epsilon(1e-9));

  std::vector<double> out3(3);
  lm = normalize_log_weights(
      std::vector<double>{std::log(1.0), std::log(2.0), std::log(5.0)}, out3);
  CHECK(out3[0] == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(out3[1] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(out3[2] == doctest::Approx(0.625).epsilon(1e-14));
  CHECK(lm == doctest::Approx(std::log(8.0 / 3.0)));

  std::vector<double> all_inf{kNegInf, kNegInf};
  CHECK_THROWS_AS(normalize_log_weights(all_inf, out, 17), ParticleCollapseError);
  try {
    normalize_log_weights(all_inf, out, 17);
  } catch (const ParticleCollapseError& e) {
    CHECK(e.time_index == 17);
  }
}

TEST_CASE("ess examples and permutation invariance") {
  std::vector<double> u(100, 0.01);
  CHECK(ess(u) == doctest::Approx(100.0));
  std::vector<double> point{1.0, 0.0, 0.0};
  CHECK(ess(point) == doctest::Approx(1.0));
  std::vector<double> w{0.5, 0.25, 0.25};
  CHECK(ess(w) == doctest::Approx(8.0 / 3.0));
  std::vector<double> wp{0.25, 0.5, 0.25};
  CHECK(ess(w) == doctest::Approx(ess(wp)));
}

TEST_CASE("resample point mass and systematic stratification") {
  Rng rng(5);
  std::vector<double> w{1.0, 0.0, 0.0};
  std::vector<int> idx(3);
  resample(w, idx, ResampleScheme::Multinomial, rng);
  for (int i : idx) CHECK(i == 0);

  // uniform weights: systematic yields each index exactly once, any u
  const int n = 64;
  std::vector<double> uw(n, 1.0 / n);
  std::vector<int> out(n);
  for (int rep = 0; rep < 50; ++rep) {
    Rng r2(rep);
    resample(uw, out, ResampleScheme::Systematic, r2);
    std::set<int> s(out.begin(), out.end());
    CHECK(s.size() == static_cast<std::size_t>(n));
  }
}

TEST_CASE("multinomial offspring moments match binomial oracle") {
  // weights (0.7, 0.3), 10 draws per set, 1e5 sets
  Rng rng(100);
  std::vector<double> w{0.7, 0.3};
  std::vector<int> idx(10);
  const int reps = 100000;
  double count0 = 0.0;
  for (int r = 0; r < reps; ++r) {
    resample(w, idx, ResampleScheme::Multinomial, rng);
    for (int i : idx) count0 += (i == 0);
  }
  double mean_count = count0 / reps;
  double se = std::sqrt(10.0 * 0.7 * 0.3 / reps);
  CHECK(std::abs(mean_count - 7.0) <= 3.0 * se);
}

TEST_CASE("resampling unbiasedness for random weight vectors, both schemes") {
  Rng seed_rng(2024);
  const int n = 6;
  const int reps = 100000;
  for (int vec = 0; vec < 10; ++vec) {
    std::vector<double> w(n);
    double tot = 0.0;
    for (double& x : w) {
      x = seed_rng.uniform01();
      tot += x;
    }
    for (double& x : w) x /= tot;
    for (ResampleScheme scheme : {ResampleScheme::Multinomial, ResampleScheme::Systematic}) {
      Rng rng = seed_rng.child(vec * 2 + (scheme == ResampleScheme::Systematic));
      std::vector<double> counts(n, 0.0);
      std::vector<int> idx(n);
      for (int r = 0; r < reps; ++r) {
        resample(w, idx, scheme, rng);
        for (int i : idx) counts[i] += 1.0;
      }
      for (int i = 0; i < n; ++i) {
        double expect = n * w[i] * reps;
        // binomial bound covers the lower-variance systematic case too
        double sd = std::sqrt(reps * n * w[i] * (1.0 - w[i]));
        CHECK(std::abs(counts[i] - expect) <= 4.0 * sd + 4.0);
      }
    }
  }
}

TEST_CASE("systematic offspring counts deviate less than one from expectation") {
  Rng rng(77);
  const int n = 12;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> w(n);
    double tot = 0.0;
    for (double& x : w) {
      x = rng.uniform01();
      tot += x;
    }
    for (double& x : w) x /= tot;
    std::vector<int> idx(n);
    Rng r2 = rng.child(rep);
    resample(w, idx, ResampleScheme::Systematic, r2);
    std::vector<int> counts(n, 0);
    for (int i : idx) counts[i]++;
    for (int i = 0; i < n; ++i) CHECK(std::abs(counts[i] - n * w[i]) < 1.0);
  }
}

TEST_CASE("simulate_lgssm reproducibility and degenerate cases") {
  Theta th{0.8, 0.1, 1.0};
  Trajectory a = simulate_lgssm(th, 500, 99);
  Trajectory b = simulate_lgssm(th, 500, 99);
  CHECK(a.states == b.states);
  CHECK(a.observations == b.observations);
  Trajectory c = simulate_lgssm(th, 500, 100);
  CHECK(a.states != c.states);

  // |rho| = 1 rejected under the stationary initialization
  Theta unit{1.0, 1.0, 1.0};
  CHECK_THROWS_AS(simulate_lgssm(unit, 10, 1), std::invalid_argument);
  // but allowed with an explicit fixed initial law
  Trajectory rw = simulate_lgssm(unit, 10, 1, InitLaw::fixed(1.0));
  CHECK(rw.length() == 11);

  // rho = 0, near-noiseless observation: y tracks x, x iid N(0,1)
  Theta iid{0.0, 1.0, 1e-30};
  Trajectory d = simulate_lgssm(iid, 4000, 7);
  double max_gap = 0.0, s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < d.length(); ++i) {
    max_gap = std::max(max_gap, std::abs(d.observations[i] - d.states[i]));
    s += d.states[i];
    s2 += d.states[i] * d.states[i];
  }
  CHECK(max_gap < 1e-12);
  double n = static_cast<double>(d.length());
  CHECK(std::abs(s / n) < 3.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("simulate_lgssm stationary lag-one autocovariance") {
  Theta th{0.5, 0.01, 1.0};
  Trajectory t = simulate_lgssm(th, 5000, 4242);
  double m = mean_of(t.states);
  double g0 = 0.0, g1 = 0.0;
  for (std::size_t i = 0; i < t.length(); ++i) g0 += (t.states[i] - m) * (t.states[i] - m);
  for (std::size_t i = 0; i + 1 < t.length(); ++i)
    g1 += (t.states[i] - m) * (t.states[i + 1] - m);
  g0 /= t.length();
  g1 /= t.length() - 1;
  double r1 = g1 / g0;
  // SE of the lag-1 autocorrelation of an AR(1) is about sqrt((1-rho^2)/T)
  double se = std::sqrt((1.0 - 0.25) / 5000.0);
  CHECK(std::abs(r1 - 0.5) <= 3.0 * se);
}

TEST_CASE("lg_densities closed-form values") {
  Theta th{0.8, 0.1, 1.0};
  ModelContract m = lg_densities(th);
  CHECK(m.trans_logpdf(0.8, 1.0) ==
        doctest::Approx(-0.5 * std::log(2.0 * 3.14159265358979323846 * 0.1)).epsilon(1e-14));
  CHECK(m.obs_logpdf(2.5, 2.5) ==
        doctest::Approx(-0.5 * std::log(2.0 * 3.14159265358979323846 * 1.0)).epsilon(1e-14));

  Theta th2{0.5, 0.75, 1.0};  // stationary variance 0.75 / (1 - 0.25) = 1
  ModelContract m2 = lg_densities(th2);
  CHECK(m2.init_logpdf(0.0) ==
        doctest::Approx(-0.5 * std::log(2.0 * 3.14159265358979323846)).epsilon(1e-14));

  // bootstrap predictive weight is identically zero in log space
  CHECK(m.predictive_weight(3.0, -1.0) == 0.0);
}

TEST_CASE("transition density integrates to one") {
  Theta th{0.6, 0.3, 0.5};
  ModelContract m = lg_densities(th);
  for (double x : {-2.0, 0.0, 1.5}) {
    double lo = th.rho * x - 10.0 * std::sqrt(th.tau2);
    double hi = th.rho * x + 10.0 * std::sqrt(th.tau2);
    int n = 20001;
    double h = (hi - lo) / (n - 1);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      s += w * std::exp(m.trans_logpdf(lo + i * h, x));
    }
    CHECK(std::abs(s * h - 1.0) < 1e-6);
  }
}

TEST_CASE("optimal proposal closed form and limits") {
  // tau2 = sigma2 = 1, rho = 1, x = 0, y = 2: v = 0.5, m = 1
  Theta th{0.9999999, 1.0, 1.0};  // rho only enters through rho*x = 0 here
  ModelContract m = lg_optimal_proposal(th);
  CHECK(m.proposal_logpdf(1.0, 2.0, 0.0) ==
        doctest::Approx(log_normal_pdf(1.0, 1.0, 0.5)).epsilon(1e-12));
  CHECK(m.predictive_weight(2.0, 0.0) ==
        doctest::Approx(log_normal_pdf(2.0, 0.0, 2.0)).epsilon(1e-12));

  // sigma2 -> infinity: proposal degrades to the prior
  Theta wide{0.7, 0.4, 1e12};
  ModelContract mw = lg_optimal_proposal(wide);
  ModelContract prior = lg_densities(wide);
  for (double xp : {-1.0, 0.3}) {
    for (double xn : {-0.5, 0.9}) {
      CHECK(mw.proposal_logpdf(xn, 5.0, xp) ==
            doctest::Approx(prior.trans_logpdf(xn, xp)).epsilon(1e-6));
    }
  }
}

TEST_CASE("optimal proposal makes the incremental weight constant") {
  Theta th{0.8, 0.1, 1.0};
  ModelContract m = lg_optimal_proposal(th);
  Rng rng(17);
  double first = 0.0;
  double lo = 0.0, hi = 0.0;
  for (int i = 0; i < 100; ++i) {
    double x = rng.normal();
    double y = rng.normal(0.0, 2.0);
    Rng prng = rng.child(i);
    double xn = m.proposal_sample(y, x, prng);
    double logw = m.obs_logpdf(y, xn) + m.trans_logpdf(xn, x) - m.proposal_logpdf(xn, y, x) -
                  m.predictive_weight(y, x);
    if (i == 0) {
      first = logw;
      lo = hi = logw;
    }
    lo = std::min(lo, logw);
    hi = std::max(hi, logw);
  }
  (void)first;
  CHECK(hi - lo <= 1e-10);  // max/min weight ratio within 1 + 1e-10
}

TEST_CASE("unconstrained transform round trip and jacobian") {
  Theta th{-0.4, 0.25, 2.5};
  auto u = to_unconstrained(th);
  Theta back = from_unconstrained(u, th);
  CHECK(back.rho == doctest::Approx(th.rho).epsilon(1e-14));
  CHECK(back.tau2 == doctest::Approx(th.tau2).epsilon(1e-14));
  CHECK(back.sigma2 == doctest::Approx(th.sigma2).epsilon(1e-14));

  auto j = unconstrained_jacobian(th);
  CHECK(j[0] == doctest::Approx(1.0 - 0.16));
  CHECK(j[1] == doctest::Approx(0.25));
  CHECK(j[2] == doctest::Approx(2.5));

  Theta masked = th;
  masked.free_mask = {true, false, true};
  Theta moved = from_unconstrained({0.0, 99.0, std::log(4.0)}, masked);
  CHECK(moved.rho == doctest::Approx(0.0));
  CHECK(moved.tau2 == doctest::Approx(0.25));  // fixed component untouched
  CHECK(moved.sigma2 == doctest::Approx(4.0));
}
