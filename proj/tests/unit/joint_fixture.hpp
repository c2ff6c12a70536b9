#pragma once

#include <random>

#include "ssgp/random_model.hpp"
#include "test_support.hpp"

namespace ssgp::test {

using SmallJointOptions = RandomJointOptions;

inline LevelTable level_table(Index rows, std::mt19937_64& rng, double scale) {
  const std::vector<double> hp{0.0, 0.5, 1.0};
  const std::vector<double> hm{0.0, 1.0};
  return LevelTable(hp, hm, scale * random_matrix(rows, 6, rng));
}

inline JointModel make_small_joint_model(std::mt19937_64& rng, const SmallJointOptions& opt = {}) {
  return make_random_joint_model(rng, opt);
}

inline ObservationSeries simulate_series(const LinearGaussianModel& model, Index times, std::mt19937_64& rng,
                                         double missing = 0.0, double spacing = 0.05) {
  return simulate_random_series(model, times, rng, missing, spacing);
}

}  // namespace ssgp::test
