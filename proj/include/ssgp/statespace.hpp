#pragma once

#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "ssgp/kernels.hpp"
#include "ssgp/linalg.hpp"

namespace ssgp {

/// Linear time-invariant SDE  dv = F v dt + L dβ,  z = H v,  v(0) ~ N(m0, P0),
/// with white-noise spectral density Q. For a kernel realization P0 is the
/// stationary covariance, so z is a stationary GP with that kernel.
struct LtiSde {
  Matrix F;
  Matrix L;
  Matrix Q;
  Matrix H;
  Matrix P0;
  Vector m0;

  Index state_dim() const { return F.rows(); }
  Index output_dim() const { return H.rows(); }

  /// ‖F·P0 + P0·Fᵀ + L·Q·Lᵀ‖_F / max(1, ‖P0‖_F).
  double lyapunov_residual() const;

  /// Checks dimensions and P0 symmetry; throws ConstructionError.
  void validate() const;
};

/// One-step Gauss-Markov transition v_{k+1} = Fbar v_k + q,  q ~ N(0, Qbar).
struct DiscreteTransition {
  Matrix Fbar;
  Matrix Qbar;
  double dt = 0.0;
};

LtiSde matern_to_sde(MaternNu nu, double length, double variance);

/// Deterministic harmonic oscillator bank whose stationary output covariance
/// is the periodic kernel truncated after `order` harmonics.
LtiSde periodic_to_sde(double period, double length, double variance, int order);

/// Per-harmonic stationary variances q_j², j = 0..order.
std::vector<double> periodic_harmonic_variances(double length, double variance, int order);

/// Smallest order whose discarded coefficient mass is ≤ tol·σ², capped.
int default_periodic_order(double length, double tol = 1e-6, int cap = 12);

/// Kronecker realization of periodic × (Matérn or constant) for the
/// quasi-periodic kernel. The first argument must have Q = 0.
LtiSde product_sde(const LtiSde& periodic, const LtiSde& matern);

/// Block-diagonal concatenation with H = [α₁H₁ … α_N H_N].
LtiSde sum_sde(std::span<const LtiSde> parts, std::span<const double> weights);

/// Frozen state with random initial value: F = L = Q = 0, H = I, P0 = cov.
LtiSde constant_sde(const Matrix& cov);

/// Realizes a stationary temporal kernel. Supports Matérn, Constant,
/// Periodic (default order), sums, and products of one periodic factor with
/// one Matérn/Constant factor. Anything else raises ConstructionError.
LtiSde kernel_to_sde(const KernelExpr& kernel);

/// Exact discretization; Qbar via the matrix-fraction (augmented
/// exponential) construction, symmetrized.
DiscreteTransition discretize(const LtiSde& sde, double dt);

/// H·exp(F|τ|)·P0·Hᵀ, the realized output covariance at lag τ.
Matrix output_covariance(const LtiSde& sde, double tau);

/// Block-diagonal transition for a block-diagonal SDE.
struct BlockTransition {
  std::vector<DiscreteTransition> blocks;
  std::vector<Index> offsets;
  Index dim = 0;
  double dt = 0.0;

  Vector apply(const Vector& v) const;          // Fbar·v
  Matrix left_apply(const Matrix& m) const;     // Fbar·M
  Matrix right_apply_t(const Matrix& m) const;  // M·Fbarᵀ
  void add_noise(Matrix& m) const;              // M += Qbar
  /// Fbar·Σ·Fbarᵀ + Qbar; also returns Fbar·Σ through `fs` when non-null.
  Matrix predict_cov(const Matrix& sigma, Matrix* fs = nullptr) const;
  Matrix dense_fbar() const;
  Matrix dense_qbar() const;
};

/// An SDE kept as independent diagonal blocks so discretization and
/// covariance propagation never touch the off-diagonal zeros.
class BlockDiagonalSde {
 public:
  Index add(std::string name, LtiSde block);  // returns the block offset

  Index dim() const { return dim_; }
  std::size_t block_count() const { return blocks_.size(); }
  const LtiSde& block(std::size_t i) const { return blocks_[i]; }
  const std::string& block_name(std::size_t i) const { return names_[i]; }
  Index block_offset(std::size_t i) const { return offsets_[i]; }

  Matrix stationary_cov() const;
  Vector initial_mean() const;

  /// Dense assembly (F, L, Q, P0 block-diagonal; H block rows stacked
  /// diagonally). Used for diagnostics and tests.
  LtiSde combined() const;

  BlockTransition discretize(double dt) const;

 private:
  std::vector<LtiSde> blocks_;
  std::vector<std::string> names_;
  std::vector<Index> offsets_;
  Index dim_ = 0;
};

/// Transitions keyed by step length, quantized to 1e-10 time units so that
/// timestamps differing only by rounding share an entry. Safe for
/// concurrent lookup; inserts are exclusive.
class TransitionCache {
 public:
  explicit TransitionCache(std::shared_ptr<const BlockDiagonalSde> sde);

  std::shared_ptr<const BlockTransition> get(double dt) const;
  std::size_t size() const;

  static constexpr double kResolution = 1e-10;

 private:
  std::shared_ptr<const BlockDiagonalSde> sde_;
  mutable std::shared_mutex mutex_;
  mutable std::map<long long, std::shared_ptr<const BlockTransition>> entries_;
};

}  // namespace ssgp
