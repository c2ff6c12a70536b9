#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssgp/condense.hpp"
#include "ssgp/kernels.hpp"
#include "ssgp/klreduce.hpp"
#include "ssgp/statespace.hpp"

namespace ssgp {

/// Piecewise-linear per-gage function of time (days), no extrapolation.
struct TimeTable {
  Vector times;
  Matrix values;  // gages × times
  Vector operator()(double t) const;
};

/// Prior over one boundary traction field
///   w(x, h, t) = μ(x, h) + Σ_(i,j) V_x,i(x)·V_h,j(h)·z_ij(t),
/// with z_ij independent GPs sharing `time_kernel`.
struct LoadPrior {
  std::string side;
  /// μ at the side's reduced DOFs (rows in ReducedElasticModel::side_indices order).
  LevelTable mean;
  /// Nodal force per unit traction for each side DOF: w_r = projection ⊙ w(x).
  Vector projection;
  /// Truncated basis whose seeds are the side DOF coordinates (same order).
  KlBasis spatial;
  /// Truncated basis over water levels; seeds have dimension 1 (h⁺) or 2 (h⁺, h⁻).
  KlBasis height;
  KernelExpr time_kernel = KernelExpr::constant(1.0);
};

struct ErrorModel {
  CoregionalModel thermal;
  Matrix bias_cov;
  Vector noise_var;                      // per gage, strain²
  std::optional<TimeTable> thermal_mean;  // μ_T(t); zero when absent
};

/// One retained (spatial mode i, height mode j) pair of a load side.
struct LoadPair {
  std::size_t load = 0;  // index into JointModel::loads()
  Index i = 0;
  Index j = 0;
  double energy = 0.0;  // λ_xi·λ_hj
  std::size_t block = 0;
};

struct BlockRange {
  std::string name;
  Index offset = 0;
  Index dim = 0;
};

/// A group of latent outputs read from the state by `rows`, with
/// Cov[c(t), c(t′)] = k(t, t′)·scale. The dense oracle builds its prior
/// from these without touching the state-space realization.
struct LatentChannel {
  std::string name;
  Matrix rows;   // outputs × state
  Matrix scale;  // outputs × outputs
  KernelExpr kernel = KernelExpr::constant(1.0);
};

struct ObservationModel {
  Vector mean;  // μ_obs(t, h)
  Matrix H;     // gages × state
};

/// Interface the Kalman filter and smoother run on.
class LinearGaussianModel {
 public:
  virtual ~LinearGaussianModel() = default;
  virtual std::shared_ptr<const BlockDiagonalSde> dynamics() const = 0;
  virtual ObservationModel observe(double t, double h_plus, double h_minus) const = 0;
  virtual Vector noise_variance() const = 0;
  Index state_dim() const { return dynamics()->dim(); }
};

/// Joint latent model with block layout [thermal | bias | load pairs].
class JointModel : public LinearGaussianModel {
 public:
  std::shared_ptr<const BlockDiagonalSde> dynamics() const override { return sde_; }
  ObservationModel observe(double t, double h_plus, double h_minus) const override;
  Vector noise_variance() const override { return err_.noise_var; }

  Index gages() const { return reduced_->gages(); }
  const ReducedElasticModel& reduced() const { return *reduced_; }
  const ErrorModel& error_model() const { return err_; }
  const std::vector<LoadPrior>& loads() const { return loads_; }
  const std::vector<LoadPair>& pairs() const { return pairs_; }
  const BlockRange& thermal_range() const { return thermal_; }
  const BlockRange& bias_range() const { return bias_; }
  const std::vector<BlockRange>& load_ranges() const { return load_ranges_; }
  std::size_t load_index(const std::string& side) const;  // DomainError when unknown

  /// Rows mapping the state to the thermal strain (√Σ_T·H_T) and bias.
  Matrix thermal_rows() const;
  Matrix bias_rows() const;
  /// Rows mapping the state to the elastic strain caused by the random part
  /// of the loads at levels h.
  Matrix load_strain_rows(double h_plus, double h_minus) const;
  /// Deterministic elastic strain: hydrostatic plus prior-mean loads.
  Vector mean_elastic_strain(double h_plus, double h_minus) const;
  Vector thermal_mean(double t) const;

  /// V_h(h) for one load side: √λ_hj·φ_hj(h).
  Vector height_factor(std::size_t load, double h_plus, double h_minus) const;

  /// Latent channels in state order (thermal components, bias, pairs).
  std::vector<LatentChannel> channels() const;
  /// Maps the stacked channel outputs at levels h to strain.
  Matrix channel_output_map(double h_plus, double h_minus) const;

  /// Model accounting: block dimensions, mode counts, truncation energies,
  /// and parameter counts for `times` observation times.
  nlohmann::json accounting(Index times) const;

 private:
  friend JointModel build_joint_model(std::shared_ptr<const ReducedElasticModel>, std::vector<LoadPrior>, ErrorModel);
  explicit JointModel(ErrorModel err) : err_(std::move(err)) {}

  std::shared_ptr<const ReducedElasticModel> reduced_;
  std::vector<LoadPrior> loads_;
  ErrorModel err_;
  std::shared_ptr<BlockDiagonalSde> sde_;
  BlockRange thermal_;
  BlockRange bias_;
  std::vector<BlockRange> load_ranges_;
  std::vector<LoadPair> pairs_;
  std::vector<Matrix> side_maps_;  // gages × K_x: Gr[:, side]·diag(projection)·V_x
  Matrix h_thermal_;              // N_g × thermal dim, √Σ_T·blockdiag(H_i)
  std::vector<Index> thermal_offsets_;
  std::vector<Vector> thermal_h_;
  std::vector<Vector> pair_h_;  // per load: H row of its time-kernel realization
};

/// Retained pairs: (i, j) within the truncated rectangle with
/// λ_xi·λ_hj ≥ min(λ_x1·λ_h,Kh, λ_x,Kx·λ_h1).
std::vector<std::pair<Index, Index>> retained_pairs(const Vector& lambda_x, const Vector& lambda_h);

JointModel build_joint_model(std::shared_ptr<const ReducedElasticModel> reduced, std::vector<LoadPrior> loads,
                             ErrorModel err);

struct LoadMarginals {
  Vector mean;
  Vector variance;
};

/// Pushes a state Gaussian through the load field of one side at levels h
/// and query points on that side.
LoadMarginals loads_from_state(const JointModel& model, const std::string& side, const Vector& mean,
                               const Matrix& cov, double h_plus, double h_minus, std::span<const Point> queries);

}  // namespace ssgp
