#pragma once

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "sspe/additive.hpp"
#include "sspe/filter.hpp"

namespace sspe {

// ---------------------------------------------------------------------------
// Streaming smoothers. Each consumes filter steps through the FilterObserver
// hook, maintains O(N)-per-particle state, and exposes the running estimate
// S_n of the smoothed additive functional. Offline wrappers below replay a
// stored FilterOutput through them.
// ---------------------------------------------------------------------------

// Path-space estimator: per-particle accumulators along surviving ancestries.
// O(N) per step; variance of S_n grows quadratically in n.
class PathspaceSmoother : public FilterObserver {
 public:
  PathspaceSmoother(AdditiveFunctional s, std::span<const double> y, bool record_all = false);
  void on_first(const ParticleSystem& s0, double) override;
  void on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) override;

  std::vector<double> current_estimate() const { return estimate_; }
  const std::vector<std::vector<double>>& estimates() const { return trace_; }

 private:
  AdditiveFunctional s_;
  std::span<const double> y_;
  bool record_all_;
  std::vector<double> acc_, next_acc_;  // N x dim accumulators
  std::vector<double> estimate_;
  std::vector<std::vector<double>> trace_;
};

// Forward-only implementation of the marginal forward-backward estimator:
// value functions V_n per particle updated through the particle backward
// kernel. O(N^2) per step; reproduces the FFBSm additive estimate exactly.
class ForwardSmoother : public FilterObserver {
 public:
  ForwardSmoother(const ModelContract& model, AdditiveFunctional s, std::span<const double> y,
                  bool record_all = false);
  void on_first(const ParticleSystem& s0, double) override;
  void on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) override;

  std::vector<double> current_estimate() const { return estimate_; }
  const std::vector<std::vector<double>>& estimates() const { return trace_; }
  const std::vector<double>& value_table() const { return v_; }  // N x dim

 private:
  const ModelContract* model_;
  AdditiveFunctional s_;
  std::span<const double> y_;
  bool record_all_;
  std::vector<double> v_, v_next_;  // N x dim
  std::vector<double> row_;         // scratch log kernel row
  std::vector<double> estimate_;
  std::vector<std::vector<double>> trace_;
};

// Fixed-lag estimator: the expectation of s_k is settled with the weights at
// time (k+L) and frozen afterwards. O(N L) memory, O(N L) per step.
class FixedLagSmoother : public FilterObserver {
 public:
  FixedLagSmoother(AdditiveFunctional s, std::span<const double> y, long lag,
                   bool record_all = false);
  void on_first(const ParticleSystem& s0, double) override;
  void on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) override;

  // frozen part plus pending window terms under the current weights
  std::vector<double> current_estimate() const;
  const std::vector<std::vector<double>>& estimates() const { return trace_; }

 private:
  void settle(const ParticleSystem& cur);

  AdditiveFunctional s_;
  std::span<const double> y_;
  long lag_;
  bool record_all_;
  int n_particles_ = 0;
  std::deque<std::vector<double>> window_;  // pending per-particle term values (N x dim each)
  std::vector<double> frozen_;
  const ParticleSystem* last_ = nullptr;
  std::vector<std::vector<double>> trace_;
  std::vector<double> scratch_;
};

// K-sample Monte Carlo variant of the forward smoother: ancestors are drawn
// from the particle backward kernel by rejection, expected O(N K) per step.
class ParisSmoother : public FilterObserver {
 public:
  ParisSmoother(const ModelContract& model, AdditiveFunctional s, std::span<const double> y,
                int num_samples, Rng rng, bool record_all = false);
  void on_first(const ParticleSystem& s0, double) override;
  void on_step(const ParticleSystem& prev, const ParticleSystem& cur, double) override;

  std::vector<double> current_estimate() const { return estimate_; }
  const std::vector<std::vector<double>>& estimates() const { return trace_; }
  long rejection_fallbacks() const { return fallbacks_; }

 private:
  const ModelContract* model_;
  AdditiveFunctional s_;
  std::span<const double> y_;
  int k_;
  Rng rng_;
  bool record_all_;
  std::vector<double> v_, v_next_;
  std::vector<double> estimate_;
  std::vector<std::vector<double>> trace_;
  long fallbacks_ = 0;
};

// ---------------------------------------------------------------------------
// Offline operations on a stored FilterOutput.
// ---------------------------------------------------------------------------

// Per-time path-space estimates S_0..S_T (requires stored systems).
std::vector<std::vector<double>> pathspace_additive(const FilterOutput& filter,
                                                    const AdditiveFunctional& s,
                                                    std::span<const double> y);

std::vector<std::vector<double>> fixedlag_additive(const FilterOutput& filter,
                                                   const AdditiveFunctional& s,
                                                   std::span<const double> y, long lag);

// Backward-smoothing weights W_{n|T} for every n (row n has N entries).
std::vector<std::vector<double>> ffbsm_weights(const FilterOutput& filter,
                                               const ModelContract& model);

// Full additive estimate S_T via the backward pair law.
std::vector<double> ffbsm_additive(const FilterOutput& filter, const ModelContract& model,
                                   const AdditiveFunctional& s, std::span<const double> y);

enum class FfbsaMode { Direct, Rejection };

struct FfbsaResult {
  std::vector<std::vector<double>> paths;  // M rows of length T+1
  long proposals = 0;                      // rejection-mode proposal count
  long fallbacks = 0;                      // draws that hit the attempt cap
};

// Draws M trajectories from the particle smoothing distribution.
// Rejection mode needs model.has_trans_bound; each draw falls back to the
// direct sampler after 100*N rejected proposals.
FfbsaResult ffbsa_sample(const FilterOutput& filter, const ModelContract& model, int num_paths,
                         FfbsaMode mode, Rng& rng);

// Forward-smoothing estimates S_0..S_T (replays stored systems).
std::vector<std::vector<double>> forward_smooth(const FilterOutput& filter,
                                                const ModelContract& model,
                                                const AdditiveFunctional& s,
                                                std::span<const double> y);

std::vector<std::vector<double>> paris_additive(const FilterOutput& filter,
                                                const ModelContract& model,
                                                const AdditiveFunctional& s,
                                                std::span<const double> y, int num_samples,
                                                Rng rng);

}  // namespace sspe
