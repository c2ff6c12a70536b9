#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "ssgp/assembly.hpp"
#include "ssgp/condense.hpp"
#include "ssgp/smoother.hpp"

namespace ssgp::beam {

enum class RightSupport { Clamped, Roller };

/// Boundary temperatures (°C) at the top and bottom faces. Either the
/// default diurnal sinusoid plus trend, or a table in days.
struct TemperatureSignal {
  double mean = 20.0;
  double top_amplitude = 6.0;
  double bottom_amplitude = 2.0;
  double top_phase = 0.375;  // days; peak at phase + 0.25
  double bottom_phase = 0.45;
  double top_trend = 0.4;  // °C per day
  double bottom_trend = 0.1;
  std::optional<Vector> table_times;
  std::optional<Vector> table_top;
  std::optional<Vector> table_bottom;

  double top(double t) const;
  double bottom(double t) const;
  /// Finest spacing of the table, or +∞ for the analytic signal.
  double resolution() const;
};

/// Tabulated true left-edge tractions (Pa) as functions of h⁺.
struct TrueLoads {
  std::vector<double> levels;
  std::vector<double> normal;
  std::vector<double> tangential;

  double normal_at(double h) const;
  double tangential_at(double h) const;
  /// Prior means perturbed by one smooth bump each.
  static TrueLoads defaults(double height);
};

struct BeamConfig {
  double length = 12.0;
  double height = 1.0;
  double thickness = 1.0;
  int nx = 48;
  int ny = 4;
  double youngs = 200e9;
  double poisson = 0.3;
  double expansion = 1.2e-5;    // 1/°C
  double rho_cp = 3.6e6;        // J/(m³·°C)
  double conductivity = 45.0;   // W/(m·°C)
  double reference_temperature = 20.0;
  RightSupport support = RightSupport::Clamped;
  std::vector<std::array<double, 2>> gages{{{2.0, 0.5}}, {{6.0, 0.5}}, {{10.0, 0.5}}};

  double water_period = 0.25;  // days
  double water_low = 0.3;      // fraction of height
  double water_high = 0.9;
  double hydro_pressure = 1e6;  // upward bottom pressure per unit level, Pa

  TemperatureSignal temperature;
  TrueLoads loads = TrueLoads::defaults(1.0);
  std::vector<double> bias{2e-4, -2e-4, 1e-4};
  double noise_var = 1e-10;
  std::uint64_t seed = 1;

  double start_seconds = 1472688000.0;  // 2016-09-01T00:00:00Z
  double days = 5.0;
  double cadence_minutes = 1.0;
  int heat_nodes = 41;

  void validate() const;  // ConfigError
};

/// Unknown keys raise ConfigError. "temperature": {"csv": path} reads a
/// table with columns time_days, t_top, t_bottom relative to base_dir.
BeamConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const BeamConfig& c);

/// Rectangle (0,0)–(length,height) meshed with nx×ny plane-stress Q4
/// elements; node = j·(nx+1) + i, element = j·nx + i.
struct PlateGrid {
  double length = 1.0;
  double height = 1.0;
  int nx = 2;
  int ny = 2;
  double youngs = 1.0;
  double poisson = 0.3;
  double thickness = 1.0;

  Index nodes() const { return static_cast<Index>(nx + 1) * (ny + 1); }
  double x(Index node) const { return length * static_cast<double>(node % (nx + 1)) / nx; }
  double y(Index node) const { return height * static_cast<double>(node / (nx + 1)) / ny; }
};

/// All 2·nodes DOFs, no supports.
SparseMatrix plate_stiffness(const PlateGrid& g);
/// Nearest element center; ties go to the lower element index.
int nearest_element(const PlateGrid& g, double x1, double x2);
/// Full-DOF coefficients of a strain component (0 = xx, 1 = yy, 2 = xy) at
/// an element center.
std::vector<std::pair<Index, double>> center_strain_row(const PlateGrid& g, int element, int component);

PlateGrid plate_of(const BeamConfig& c);

/// Plane-stress Q4 system on the free DOFs (full DOF = 2·node + component,
/// node = j·(nx+1) + i).
struct BeamFem {
  SparseMatrix K;
  SparseMatrix B;  // ε_xx at the gage element centers
  Vector normal_unit;
  Vector tangential_unit;
  Vector hydro_unit;  // unit upward bottom pressure
  std::vector<Index> free_to_full;
  std::vector<Index> full_to_free;  // −1 where constrained
  Matrix nodes;                     // (nodes × 2)
  std::vector<int> gage_elements;
  std::vector<Index> left_nodes;  // bottom to top
  Vector left_tributary;          // edge length attributed to each left node
};

BeamFem assemble_beam_fem(const BeamConfig& c);
/// 8×8 plane-stress stiffness of one bilinear quad; corners counterclockwise
/// as rows of `xy`. A non-positive Jacobian raises ConstructionError.
Matrix q4_stiffness(const Matrix& xy, double youngs, double poisson, double thickness);
/// All 2·nodes DOFs, no supports.
SparseMatrix assemble_unconstrained_stiffness(const BeamConfig& c);
/// Displacements on the free DOFs for the given loads.
Vector solve_displacement(const BeamFem& fem, const Vector& load);

double water_level(const BeamConfig& c, double t);
std::vector<double> default_times(const BeamConfig& c);

struct HeatResult {
  Vector z;            // node heights
  Matrix temperature;  // nodes × times
  Matrix thermal_strain;  // gages × times
  bool resampled = false;
};

/// Backward-Euler conduction through the thickness with Dirichlet faces,
/// starting from the steady profile at the first time.
HeatResult simulate_heat(const BeamConfig& c, const std::vector<double>& times);

struct Truth {
  Matrix elastic;
  Matrix thermal;
  Matrix bias;
  Matrix noise;
  Vector normal;      // true w_n(h⁺(t))
  Vector tangential;  // true w_t(h⁺(t))
};

struct Synthetic {
  ObservationSeries obs;
  Truth truth;
};

Synthetic generate_synthetic(const BeamConfig& c, const std::vector<double>& times);
Synthetic generate_synthetic(const BeamConfig& c);

/// Inference prior for the beam experiment.
struct BeamPrior {
  double thermal_variance = 5e-9;
  double thermal_rho = 0.9;
  KernelExpr thermal_kernel = KernelExpr::sum(
      {KernelExpr::product({KernelExpr::periodic(1.0, 0.8, 1.0), KernelExpr::matern(2.5, 0.8, 0.5)}),
       KernelExpr::matern(1.5, 5.0, 0.5)});
  double bias_variance = 1e-2;
  double noise_var = 1e-10;
  double load_variance = 2e12;
  double load_length = 5.0;
  double load_nu = 2.5;
  double normal_mean = 0.0;
  double tangential_mean = -5e6;
  int height_seeds = 33;
  double height_energy = 0.999999;
};

BeamPrior prior_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json prior_to_json(const BeamPrior& p);

struct BeamModel {
  std::shared_ptr<const ReducedElasticModel> reduced;
  std::shared_ptr<const JointModel> joint;
};

/// Condenses the beam onto the left-edge DOFs (sides "normal" and
/// "tangential") plus the gage DOFs and builds the joint model.
BeamModel build_beam_model(const BeamConfig& c, const BeamFem& fem, const BeamPrior& prior);

/// Full-model hydrostatic table over h⁺ ∈ {0, height}.
LevelTable hydro_table(const BeamConfig& c, const BeamFem& fem);

}  // namespace ssgp::beam
