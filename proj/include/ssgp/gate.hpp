#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include <json.hpp>

#include "ssgp/assembly.hpp"
#include "ssgp/condense.hpp"
#include "ssgp/simbeam.hpp"
#include "ssgp/smoother.hpp"

namespace ssgp::gate {

/// Thermal kernel of one gage: periodic × Matérn 3/2 plus a long Matérn 3/2,
/// variances in microstrain².
struct ThermalSpec {
  double period = 1.0;
  double periodic_length = 0.5;
  double periodic_variance = 1.0;
  double local_length = 0.5;
  double local_variance = 225.0;
  double trend_length = 28.0;
  double trend_variance = 900.0;

  KernelExpr kernel(double unit_scale) const;
};

/// Gage on girder `girder` (1 = top) at horizontal station `station`.
struct GageSpec {
  int girder = 1;
  double station = 0.0;
  ThermalSpec thermal;
};

/// Synthetic stand-in for a large lock gate: a plane-stress plate whose
/// left edge (quoin) and right edge (miter) carry the unknown tractions.
/// Units: inches, kips, ksi; strain observations in strain.
struct GateConfig {
  double height = 336.0;
  double width = 120.0;
  double thickness = 1.0;
  int nx = 20;
  int ny = 280;
  double youngs = 29000.0;
  double poisson = 0.3;
  int girders = 13;
  double station_span = 36.0;  // stations map to x = width·station/station_span
  std::vector<GageSpec> gages = default_gages();

  // Load prior.
  double girder_width = 4.0;         // in
  double girder_intensity = 0.015;   // kip/in per inch of head
  double spatial_length = 10.0;      // Matérn 3/2
  double spatial_variance = 2.0;
  double beta = 5.0;
  double spatial_energy = 0.95;
  int spatial_modes = 35;            // fixed count per edge; 0 truncates by spatial_energy
  double height_length = 120.0;      // Matérn 5/2
  double height_variance = 1.0;
  double height_energy = 0.99;
  int height_seeds = 8;              // per axis
  double weight_density = 3.6e-5;    // kip/in³, drives the known water load

  // Levels (in) and time (days).
  std::array<double, 2> h_plus_range{{240.0, 330.0}};
  std::array<double, 2> h_minus_range{{60.0, 150.0}};
  int times = 2200;
  double days = 2.0;

  // Error model.
  double thermal_rho = 0.5;
  double bias_std = 100.0;   // microstrain
  double noise_var = 9.0;    // microstrain²
  double unit_scale = 1e-12;  // microstrain² → strain²
  std::uint64_t seed = 1;

  static std::vector<GageSpec> default_gages();
  void validate() const;  // ConfigError
};

GateConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const GateConfig& c);

/// Hydrostatic-like load mean at the quoin, peaked at the girders and
/// growing with head above each girder. Values in kip/in.
double girder_mean(const GateConfig& c, double x2, double h_plus);

/// Mean-scaled spatial kernel |μ(x₂, h̄)| + β around a Matérn 3/2.
KernelExpr spatial_kernel(const GateConfig& c);
KlBasis spatial_basis(const GateConfig& c);

struct GateModel {
  std::shared_ptr<const ReducedElasticModel> reduced;
  std::shared_ptr<const JointModel> joint;
  Index full_dofs = 0;
  Index quoin_dofs = 0;
  Index miter_dofs = 0;
};

GateModel build_gate_model(const GateConfig& c);

/// Times and water levels of the synthetic record.
struct GateSchedule {
  std::vector<double> times;
  std::vector<double> h_plus;
  std::vector<double> h_minus;
};
GateSchedule gate_schedule(const GateConfig& c);

/// Observations drawn from the model's own prior along the schedule.
PriorDraw simulate_gate(const GateConfig& c, const GateModel& model);

}  // namespace ssgp::gate
