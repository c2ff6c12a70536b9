#pragma once

#include <random>

#include "ssgp/assembly.hpp"
#include "ssgp/smoother.hpp"

namespace ssgp {

/// Small randomized joint model: a random SPD reduced system with two
/// boundary sides of `side_dofs` DOFs each and `gages` gage rows.
struct RandomJointOptions {
  Index gages = 3;
  Index side_dofs = 5;
  Index spatial_modes = 2;
  Index height_modes = 2;
  bool periodic_thermal = false;
  bool with_loads = true;
  double time_length = 0.4;  // days
};

JointModel make_random_joint_model(std::mt19937_64& rng, const RandomJointOptions& opt = {});

/// Draws a series from the model's own prior through its SDE, with levels
/// sweeping [0.1, 0.9] and entries dropped with probability `missing`.
ObservationSeries simulate_random_series(const LinearGaussianModel& model, Index times, std::mt19937_64& rng,
                                         double missing = 0.0, double spacing = 0.05);

}  // namespace ssgp
