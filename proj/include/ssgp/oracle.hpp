#pragma once

#include <span>
#include <vector>

#include "ssgp/assembly.hpp"
#include "ssgp/smoother.hpp"

namespace ssgp {

/// Joint Gaussian over stacked latent outputs at every time, built from
/// kernel evaluations. Layout: time-major blocks of `block` outputs.
struct DensePrior {
  Vector mean;
  Matrix cov;
  Index times = 0;
  Index block = 0;
};

struct DensePosterior {
  Vector mean;
  Matrix cov;
};

/// Linear observation y = offset + H·u + ε of the stacked unknowns u.
struct DenseObservation {
  Matrix H;
  Vector offset;
  Vector noise_var;
  Vector y;
};

constexpr Index kDenseGuard = 5000;

DensePrior assemble_dense_prior(const std::vector<LatentChannel>& channels, const Vector& channel_mean,
                                std::span<const double> times, Index guard = kDenseGuard);
/// Channels of a joint model; channel means follow from m0.
DensePrior assemble_dense_prior(const JointModel& model, std::span<const double> times, Index guard = kDenseGuard);

/// Stacks the per-time observation rows of a joint model over the prior's
/// channel outputs, dropping missing entries.
DenseObservation dense_observation(const JointModel& model, std::span<const double> times,
                                   std::span<const double> h_plus, std::span<const double> h_minus,
                                   const Matrix& strains);

/// Conditioning through a Cholesky factor of H·Σ·Hᵀ + R.
DensePosterior dense_condition(const DensePrior& prior, const DenseObservation& obs);

/// Independent second path: Σ⁻¹ and Hᵀ·R⁻¹·H in information form. Needs an
/// invertible prior covariance and positive noise.
DensePosterior dense_condition_information(const DensePrior& prior, const DenseObservation& obs);

/// Largest deviations between the smoother and the dense posterior over
/// every channel output at every time, each relative to the largest
/// oracle magnitude of that quantity.
struct OracleComparison {
  double mean_rel = 0.0;
  double variance_rel = 0.0;
  double covariance_rel = 0.0;  // per-time channel covariance blocks
  double filter_last_rel = 0.0;  // analyzed state at the last time
  Index dense_dim = 0;
  Index state_dim = 0;
  Index times = 0;
};

OracleComparison compare_with_oracle(const JointModel& model, const ObservationSeries& obs,
                                     Index guard = kDenseGuard);

}  // namespace ssgp
