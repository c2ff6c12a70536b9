#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ssgp/assembly.hpp"

namespace ssgp {

/// Strain observations at strictly increasing times (days since
/// `epoch_seconds`). Missing entries are NaN.
struct ObservationSeries {
  std::vector<double> times;
  std::vector<double> h_plus;
  std::vector<double> h_minus;
  Matrix strains;  // gages × times, in strain
  std::vector<std::string> gage_ids;
  double epoch_seconds = 0.0;

  Index size() const { return static_cast<Index>(times.size()); }
  Index gages() const { return strains.rows(); }
  bool present(Index gage, Index i) const { return std::isfinite(strains(gage, i)); }
  /// Throws DomainError on shape mismatch, non-increasing times, or
  /// non-finite levels.
  void validate() const;
};

/// Unit of the strain columns in an observation CSV.
enum class StrainUnit { Strain, Microstrain };
StrainUnit parse_strain_unit(const std::string& text);  // ConfigError otherwise
double strain_unit_scale(StrainUnit unit);               // to strain

/// CSV columns: time_iso8601, h_plus, h_minus, then one column per gage.
/// Empty or "nan" cells are missing. Missing levels hold the previous
/// value. Errors name the offending row and raise ConfigError.
ObservationSeries read_observation_csv(const std::filesystem::path& path, StrainUnit unit = StrainUnit::Strain);
void write_observation_csv(const std::filesystem::path& path, const ObservationSeries& series);

enum class StateKind { Forecast, Analyzed, Smoothed };

struct GaussianState {
  Vector mean;
  Matrix cov;
  double time = 0.0;
  StateKind kind = StateKind::Forecast;
};

/// Fixed-size records of (mean, packed upper-triangular covariance),
/// in memory or in a scratch file removed on destruction.
class TrajectoryStore {
 public:
  virtual ~TrajectoryStore() = default;
  virtual void put(Index i, const Vector& mean, const Matrix& cov) = 0;
  virtual void get(Index i, Vector& mean, Matrix& cov) const = 0;
  virtual bool on_disk() const = 0;
  Index dim() const { return dim_; }
  Index count() const { return count_; }

  /// Disk-backed when 8·dim²·count exceeds the budget.
  static std::unique_ptr<TrajectoryStore> create(Index dim, Index count, std::size_t budget_bytes,
                                                 const std::filesystem::path& scratch_dir);

 protected:
  TrajectoryStore(Index dim, Index count) : dim_(dim), count_(count) {}
  Index dim_;
  Index count_;
};

struct FilterOptions {
  std::size_t memory_budget_bytes = std::size_t{1024} << 20;
  std::filesystem::path scratch_dir;  // empty: system temporary directory
};

struct FilterStep {
  Index index = 0;
  const GaussianState& forecast;
  const GaussianState& analyzed;
  Index observed = 0;
  double log_density = 0.0;
};
using FilterObserver = std::function<void(const FilterStep&)>;

struct FilterResult {
  std::vector<double> times;
  std::vector<double> h_plus;
  std::vector<double> h_minus;
  Matrix means;  // analyzed means, state × times
  std::unique_ptr<TrajectoryStore> states;
  double log_evidence = 0.0;
  Index observed_entries = 0;
};

/// Forward pass from (m0, P0) at the first time with row deletion for
/// missing gages and a Joseph-form update.
FilterResult kalman_filter(const LinearGaussianModel& model, const ObservationSeries& obs,
                           const FilterOptions& options = {}, const FilterObserver& observer = {});

/// Smoothed marginals at every observation time. `states` holds smoothed
/// records after rts_smooth and analyzed records for a filter-only run.
struct PosteriorTrajectory {
  std::vector<double> times;
  std::vector<double> h_plus;
  std::vector<double> h_minus;
  Matrix means;
  std::unique_ptr<TrajectoryStore> states;
  double log_evidence = 0.0;
  StateKind kind = StateKind::Smoothed;

  Index size() const { return static_cast<Index>(times.size()); }
  GaussianState state(Index i) const;
  /// Index of an exact observation time; DomainError otherwise.
  Index time_index(double t) const;
};

using SmootherObserver = std::function<void(Index, const GaussianState&)>;

/// Rauch–Tung–Striebel backward pass; forecasts are recomputed from the
/// stored analyzed states. Consumes the filter result.
PosteriorTrajectory rts_smooth(const LinearGaussianModel& model, FilterResult&& filtered,
                               const SmootherObserver& observer = {});

/// Filter-only trajectory (analyzed marginals).
PosteriorTrajectory filtered_trajectory(FilterResult&& filtered);

/// Time-invariant observation of a block-diagonal SDE: y = mean + H·v + ε.
class LtiObservationModel : public LinearGaussianModel {
 public:
  LtiObservationModel(std::shared_ptr<const BlockDiagonalSde> sde, Matrix h, Vector noise_var, Vector mean = Vector());
  std::shared_ptr<const BlockDiagonalSde> dynamics() const override { return sde_; }
  ObservationModel observe(double t, double h_plus, double h_minus) const override;
  Vector noise_variance() const override { return noise_; }

 private:
  std::shared_ptr<const BlockDiagonalSde> sde_;
  Matrix h_;
  Vector noise_;
  Vector mean_;
};

struct Marginals {
  Vector mean;
  Vector stddev;
};

/// Quantities: "thermal", "bias", "elastic", "predicted-strain", "loads"
/// (with `side` and `points`). Unknown names raise DomainError.
struct PosteriorQuery {
  std::string what;
  std::string side;
  std::vector<Point> points;
};

Marginals extract_posterior(const JointModel& model, const GaussianState& state, double h_plus, double h_minus,
                            const PosteriorQuery& query);
Marginals extract_posterior(const JointModel& model, const PosteriorTrajectory& traj, double t,
                            const PosteriorQuery& query);

/// A draw of the model's own prior: latent states and the observed series.
struct PriorDraw {
  ObservationSeries obs;
  Matrix states;  // state_dim × times
};

/// Samples the SDE forward blockwise (one transition per distinct step) and
/// pushes each state through the observation model with noise.
PriorDraw simulate_from_prior(const LinearGaussianModel& model, std::vector<double> times,
                              std::vector<double> h_plus, std::vector<double> h_minus, std::uint64_t seed);

}  // namespace ssgp
