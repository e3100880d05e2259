#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sspe/rng.hpp"

namespace sspe {

// All normalized weights hit -inf simultaneously: the filter lost every particle.
struct ParticleCollapseError : std::runtime_error {
  long time_index;
  explicit ParticleCollapseError(long t)
      : std::runtime_error("particle collapse at time step " + std::to_string(t)),
        time_index(t) {}
};

// A backward-kernel denominator vanished: particle j at time n cannot be reached
// from any weighted predecessor.
struct UnreachableParticleError : std::runtime_error {
  long time_index;
  int particle;
  UnreachableParticleError(long t, int j)
      : std::runtime_error("unreachable particle " + std::to_string(j) + " at time step " +
                           std::to_string(t)),
        time_index(t),
        particle(j) {}
};

// One time slice of a particle filter. Weights satisfy
// norm_weights = softmax(log_weights); ancestors index the previous slice
// (identity at time 0).
struct ParticleSystem {
  std::vector<double> positions;
  std::vector<double> log_weights;
  std::vector<double> norm_weights;
  std::vector<int> ancestors;
  long time_index = 0;

  int size() const { return static_cast<int>(positions.size()); }
};

// Shift-invariant softmax of log weights. Returns log((1/N) sum exp(logw)),
// the quantity the likelihood increment needs. Throws ParticleCollapseError
// when every entry is -inf (time_index only annotates the message).
double normalize_log_weights(std::span<const double> logw, std::span<double> out,
                             long time_index = -1);

// Effective sample size 1 / sum W_i^2, in [1, N].
double ess(std::span<const double> norm_weights);

enum class ResampleScheme { Multinomial, Systematic };

// Draws out.size() ancestor indices with E[#offspring of i] = out.size() * W_i.
// Cumulative-weight inversion resolves ties to the lowest index; systematic uses
// a single uniform with stratified positions.
void resample(std::span<const double> norm_weights, std::span<int> out, ResampleScheme scheme,
              Rng& rng);

// Inverts a cumulative weight array at point u (lowest index on ties).
int invert_cumulative(std::span<const double> cum, double u);

}  // namespace sspe
