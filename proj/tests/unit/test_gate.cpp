#include <cmath>

#include "ssgp/error.hpp"
#include "ssgp/gate.hpp"
#include "ssgp/klreduce.hpp"
#include "test_support.hpp"

using namespace ssgp;
using namespace ssgp::gate;

namespace {

GateConfig coarse_config() {
  GateConfig c;
  c.nx = 4;
  c.ny = 26;
  c.spatial_modes = 6;
  c.height_seeds = 4;
  c.times = 40;
  c.days = 0.5;
  return c;
}

}  // namespace

TEST_CASE("default gage table") {
  const GateConfig c;
  REQUIRE(c.gages.size() == 14);
  CHECK(c.gages[0].girder == 3);
  CHECK(c.gages[13].station == 32.0);
  CHECK(c.gages[4].thermal.local_variance == 225.0);
  CHECK(c.gages[5].thermal.trend_variance == 400.0);
  CHECK(c.gages[10].thermal.local_variance == 2.5);
  CHECK(c.gages[13].thermal.trend_variance == 100.0);
  for (const auto& g : c.gages) CHECK(g.thermal.period == 1.0);
}

TEST_CASE("thermal kernel converts microstrain squared") {
  ThermalSpec t;
  const KernelExpr k = t.kernel(1e-12);
  // Periodic factor is 1 at zero lag.
  CHECK(eval(k, 0.0, 0.0) == doctest::Approx((225.0 + 900.0) * 1e-12).epsilon(1e-12));
  CHECK(eval(k, 0.0, 1.0) < eval(k, 0.0, 0.0));
}

TEST_CASE("girder mean peaks at submerged girders") {
  const GateConfig c;
  const double y7 = c.height * (1.0 - 6.5 / 13.0);
  CHECK(girder_mean(c, y7, 300.0) > 10.0 * girder_mean(c, y7 + 12.0, 300.0));
  // The top girder is dry at h⁺ = 300; only far Gaussian tails remain.
  CHECK(girder_mean(c, c.height * (1.0 - 0.5 / 13.0), 300.0) < 1e-12 * girder_mean(c, y7, 300.0));
  CHECK(girder_mean(c, y7, 300.0) > girder_mean(c, y7, 250.0));
  CHECK(girder_mean(c, y7, 300.0) == doctest::Approx(c.girder_intensity * (300.0 - y7)).epsilon(1e-6));
}

TEST_CASE("gate-scale spatial basis keeps 20 to 60 modes at 95% energy") {
  const GateConfig c;
  const KlBasis b = spatial_basis(c);
  CHECK(b.modes() >= 20);
  CHECK(b.modes() <= 60);
  CHECK(b.captured_fraction() >= 0.95);
  CHECK(b.seeds.size() == 281);
}

TEST_CASE("default gate model dimensions") {
  const GateConfig c;
  const GateModel m = build_gate_model(c);
  CHECK(m.quoin_dofs == 281);
  CHECK(m.miter_dofs == 280);
  CHECK(m.reduced->side_indices("quoin").size() == 281);
  CHECK(m.reduced->side_indices("miter").size() == 280);
  CHECK(m.joint->gages() == 14);
  CHECK(m.joint->thermal_range().dim == 14 * 48);
  CHECK(m.joint->bias_range().dim == 14);
  for (const auto& l : m.joint->loads()) CHECK(l.spatial.modes() == 35);
  const auto acc = m.joint->accounting(c.times);
  CHECK(acc["parameters"]["reduced"].get<Index>() == (35 + 35 + 14) * 2200);
  CHECK(acc["parameters"]["full"].get<Index>() == (281 + 280 + 14) * 2200);
}

TEST_CASE("coarse gate: energy truncation and prior draw") {
  GateConfig c = coarse_config();
  const GateModel m = build_gate_model(c);
  CHECK(m.quoin_dofs == 27);
  CHECK(m.miter_dofs == 26);
  for (const auto& l : m.joint->loads()) CHECK(l.spatial.modes() == 6);

  const PriorDraw d = simulate_gate(c, m);
  CHECK(d.obs.strains.rows() == 14);
  CHECK(d.obs.strains.cols() == 40);
  CHECK(d.obs.strains.allFinite());
  const PriorDraw again = simulate_gate(c, m);
  CHECK((d.obs.strains.array() == again.obs.strains.array()).all());

  c.spatial_modes = 0;
  const GateModel e = build_gate_model(c);
  for (const auto& l : e.joint->loads()) CHECK(l.spatial.captured_fraction() >= c.spatial_energy);
}

TEST_CASE("schedule stays inside the level ranges") {
  const GateConfig c = coarse_config();
  const GateSchedule s = gate_schedule(c);
  REQUIRE(s.times.size() == 40);
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    if (i > 0) CHECK(s.times[i] > s.times[i - 1]);
    CHECK(s.h_plus[i] >= c.h_plus_range[0]);
    CHECK(s.h_plus[i] <= c.h_plus_range[1]);
    CHECK(s.h_minus[i] >= c.h_minus_range[0]);
    CHECK(s.h_minus[i] <= c.h_minus_range[1]);
  }
}

TEST_CASE("gate config JSON") {
  GateConfig c = coarse_config();
  c.thermal_rho = 0.3;
  c.gages[2].thermal.trend_length = 14.0;
  const GateConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(back.gages[2].thermal.trend_length == 14.0);

  CHECK(config_from_json(nlohmann::json::object()).ny == 280);
  CHECK_THROWS_AS(config_from_json({{"hieght", 3.0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"ny", "many"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"h_plus_range", {300.0, 400.0}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"thermal_rho", -0.5}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"spatial_modes", -1}}), ConfigError);
}
