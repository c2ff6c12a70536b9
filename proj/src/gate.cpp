#include "ssgp/gate.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "ssgp/error.hpp"
#include "ssgp/klreduce.hpp"

namespace ssgp::gate {
namespace {

using nlohmann::json;
using beam::PlateGrid;

double girder_height(const GateConfig& c, int girder) {
  return c.height * (1.0 - (girder - 0.5) / c.girders);
}

template <class T>
void read(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field gate.") + key + " has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (!seen.count(k)) throw ConfigError("unknown field " + where + "." + k);
  }
}

ThermalSpec thermal_from_json(const json& j, const std::string& where) {
  ThermalSpec t;
  std::set<std::string> seen;
  read(j, "period", t.period, seen);
  read(j, "periodic_length", t.periodic_length, seen);
  read(j, "periodic_variance", t.periodic_variance, seen);
  read(j, "local_length", t.local_length, seen);
  read(j, "local_variance", t.local_variance, seen);
  read(j, "trend_length", t.trend_length, seen);
  read(j, "trend_variance", t.trend_variance, seen);
  reject_unknown(j, seen, where);
  return t;
}

json thermal_to_json(const ThermalSpec& t) {
  return {{"period", t.period},
          {"periodic_length", t.periodic_length},
          {"periodic_variance", t.periodic_variance},
          {"local_length", t.local_length},
          {"local_variance", t.local_variance},
          {"trend_length", t.trend_length},
          {"trend_variance", t.trend_variance}};
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return v;
}

}  // namespace

KernelExpr ThermalSpec::kernel(double unit_scale) const {
  return KernelExpr::sum(
      {KernelExpr::product({KernelExpr::periodic(period, periodic_length, periodic_variance),
                            KernelExpr::matern(1.5, local_length, local_variance * unit_scale)}),
       KernelExpr::matern(1.5, trend_length, trend_variance * unit_scale)});
}

std::vector<GageSpec> GateConfig::default_gages() {
  const int girders[14] = {3, 3, 5, 5, 7, 7, 9, 9, 11, 11, 12, 12, 13, 13};
  const double stations[14] = {3, 11, 6, 19, 6, 19, 6, 19, 9, 26, 9, 26, 12, 32};
  std::vector<GageSpec> g;
  for (int i = 0; i < 14; ++i) {
    GageSpec s;
    s.girder = girders[i];
    s.station = stations[i];
    if (i >= 10) {
      s.thermal.local_variance = 2.5;
      s.thermal.trend_variance = 100.0;
    } else if (i >= 5) {
      s.thermal.local_variance = 25.0;
      s.thermal.trend_variance = 400.0;
    }
    g.push_back(s);
  }
  return g;
}

void GateConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("gate config: " + m); };
  if (nx < 2 || ny < 2) fail("grid must be at least 2x2");
  if (!(height > 0) || !(width > 0) || !(thickness > 0) || !(youngs > 0)) fail("geometry and modulus must be positive");
  if (girders < 1) fail("need at least one girder");
  if (gages.empty()) fail("need at least one gage");
  for (const auto& g : gages) {
    if (g.girder < 1 || g.girder > girders) fail("gage girder out of range");
    if (!(g.station >= 0 && g.station <= station_span)) fail("gage station out of range");
  }
  if (!(spatial_energy > 0 && spatial_energy <= 1) || !(height_energy > 0 && height_energy <= 1)) {
    fail("energy fractions must lie in (0, 1]");
  }
  if (height_seeds < 2) fail("height_seeds must be at least 2");
  if (spatial_modes < 0) fail("spatial_modes must be non-negative");
  for (const auto& r : {h_plus_range, h_minus_range}) {
    if (!(r[0] >= 0 && r[0] < r[1] && r[1] <= height)) fail("water level ranges must lie inside the gate height");
  }
  if (times < 2 || !(days > 0)) fail("times and days must be positive");
  if (!(noise_var > 0) || !(bias_std > 0) || !(unit_scale > 0)) fail("noise, bias and unit scale must be positive");
  const double rho_floor = gages.size() > 1 ? -1.0 / static_cast<double>(gages.size() - 1) : -1.0;
  if (!(thermal_rho > rho_floor) || !(thermal_rho < 1)) {
    fail("thermal_rho does not give a positive definite correlation");
  }
}

GateConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("gate config must be an object");
  GateConfig c;
  std::set<std::string> seen;
  read(j, "height", c.height, seen);
  read(j, "width", c.width, seen);
  read(j, "thickness", c.thickness, seen);
  read(j, "nx", c.nx, seen);
  read(j, "ny", c.ny, seen);
  read(j, "youngs", c.youngs, seen);
  read(j, "poisson", c.poisson, seen);
  read(j, "girders", c.girders, seen);
  read(j, "station_span", c.station_span, seen);
  read(j, "girder_width", c.girder_width, seen);
  read(j, "girder_intensity", c.girder_intensity, seen);
  read(j, "spatial_length", c.spatial_length, seen);
  read(j, "spatial_variance", c.spatial_variance, seen);
  read(j, "beta", c.beta, seen);
  read(j, "spatial_energy", c.spatial_energy, seen);
  read(j, "spatial_modes", c.spatial_modes, seen);
  read(j, "height_length", c.height_length, seen);
  read(j, "height_variance", c.height_variance, seen);
  read(j, "height_energy", c.height_energy, seen);
  read(j, "height_seeds", c.height_seeds, seen);
  read(j, "weight_density", c.weight_density, seen);
  read(j, "h_plus_range", c.h_plus_range, seen);
  read(j, "h_minus_range", c.h_minus_range, seen);
  read(j, "times", c.times, seen);
  read(j, "days", c.days, seen);
  read(j, "thermal_rho", c.thermal_rho, seen);
  read(j, "bias_std", c.bias_std, seen);
  read(j, "noise_var", c.noise_var, seen);
  read(j, "unit_scale", c.unit_scale, seen);
  read(j, "seed", c.seed, seen);
  seen.insert("gages");
  if (j.contains("gages")) {
    if (!j.at("gages").is_array()) throw ConfigError("field gate.gages must be a list");
    c.gages.clear();
    std::size_t k = 0;
    for (const auto& g : j.at("gages")) {
      const std::string where = "gate.gages[" + std::to_string(k++) + "]";
      if (!g.is_object()) throw ConfigError("field " + where + " must be an object");
      GageSpec s;
      std::set<std::string> gs{"thermal"};
      read(g, "girder", s.girder, gs);
      read(g, "station", s.station, gs);
      if (g.contains("thermal")) s.thermal = thermal_from_json(g.at("thermal"), where + ".thermal");
      reject_unknown(g, gs, where);
      c.gages.push_back(s);
    }
  }
  reject_unknown(j, seen, "gate");
  c.validate();
  return c;
}

json config_to_json(const GateConfig& c) {
  json gages = json::array();
  for (const auto& g : c.gages) {
    gages.push_back({{"girder", g.girder}, {"station", g.station}, {"thermal", thermal_to_json(g.thermal)}});
  }
  return {{"height", c.height},
          {"width", c.width},
          {"thickness", c.thickness},
          {"nx", c.nx},
          {"ny", c.ny},
          {"youngs", c.youngs},
          {"poisson", c.poisson},
          {"girders", c.girders},
          {"station_span", c.station_span},
          {"gages", gages},
          {"girder_width", c.girder_width},
          {"girder_intensity", c.girder_intensity},
          {"spatial_length", c.spatial_length},
          {"spatial_variance", c.spatial_variance},
          {"beta", c.beta},
          {"spatial_energy", c.spatial_energy},
          {"spatial_modes", c.spatial_modes},
          {"height_length", c.height_length},
          {"height_variance", c.height_variance},
          {"height_energy", c.height_energy},
          {"height_seeds", c.height_seeds},
          {"weight_density", c.weight_density},
          {"h_plus_range", c.h_plus_range},
          {"h_minus_range", c.h_minus_range},
          {"times", c.times},
          {"days", c.days},
          {"thermal_rho", c.thermal_rho},
          {"bias_std", c.bias_std},
          {"noise_var", c.noise_var},
          {"unit_scale", c.unit_scale},
          {"seed", c.seed}};
}

double girder_mean(const GateConfig& c, double x2, double h_plus) {
  double m = 0.0;
  for (int g = 1; g <= c.girders; ++g) {
    const double y = girder_height(c, g);
    const double head = std::max(h_plus - y, 0.0);
    m += c.girder_intensity * head * std::exp(-std::pow((x2 - y) / c.girder_width, 2));
  }
  return m;
}

KernelExpr spatial_kernel(const GateConfig& c) {
  const double h_bar = 0.5 * (c.h_plus_range[0] + c.h_plus_range[1]);
  std::vector<double> ys = linspace(0.0, c.height, c.ny + 1);
  std::vector<double> mu;
  for (double y : ys) mu.push_back(girder_mean(c, y, h_bar));
  return KernelExpr::mean_scaled(KernelExpr::matern(1.5, c.spatial_length, c.spatial_variance),
                                 ScaleTable(std::move(ys), std::move(mu)), c.beta);
}

KlBasis spatial_basis(const GateConfig& c) {
  std::vector<Point> seeds;
  std::vector<double> ys = linspace(0.0, c.height, c.ny + 1);
  for (double y : ys) seeds.push_back(point(y));
  Vector w = Vector::Constant(c.ny + 1, c.height / c.ny);
  w(0) *= 0.5;
  w(c.ny) *= 0.5;
  return truncate_energy(nystrom_eig(spatial_kernel(c), seeds, w), c.spatial_energy);
}

GateModel build_gate_model(const GateConfig& c) {
  c.validate();
  const PlateGrid grid{c.width, c.height, c.nx, c.ny, c.youngs, c.poisson, c.thickness};
  const SparseMatrix kfull = beam::plate_stiffness(grid);
  const Index ndof = 2 * grid.nodes();
  const int row = c.nx + 1;

  // Bottom edge on rollers; the bottom miter corner is pinned horizontally.
  std::vector<bool> fixed(static_cast<std::size_t>(ndof), false);
  for (int i = 0; i <= c.nx; ++i) fixed[static_cast<std::size_t>(2 * i + 1)] = true;
  fixed[static_cast<std::size_t>(2 * c.nx)] = true;
  std::vector<Index> full_to_free(static_cast<std::size_t>(ndof), -1);
  Index nfree = 0;
  for (Index d = 0; d < ndof; ++d) {
    if (!fixed[static_cast<std::size_t>(d)]) full_to_free[static_cast<std::size_t>(d)] = nfree++;
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (Index col = 0; col < kfull.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(kfull, col); it; ++it) {
      const Index r = full_to_free[static_cast<std::size_t>(it.row())];
      const Index cc = full_to_free[static_cast<std::size_t>(it.col())];
      if (r >= 0 && cc >= 0) trip.emplace_back(r, cc, it.value());
    }
  }
  SparseMatrix k(nfree, nfree);
  k.setFromTriplets(trip.begin(), trip.end());

  std::vector<Eigen::Triplet<double>> btrip;
  for (std::size_t g = 0; g < c.gages.size(); ++g) {
    const double x1 = c.width * c.gages[g].station / c.station_span;
    const double x2 = girder_height(c, c.gages[g].girder);
    for (const auto& [full, v] : beam::center_strain_row(grid, beam::nearest_element(grid, x1, x2), 0)) {
      const Index free = full_to_free[static_cast<std::size_t>(full)];
      if (free >= 0) btrip.emplace_back(static_cast<Index>(g), free, v);
    }
  }
  SparseMatrix b(static_cast<Index>(c.gages.size()), nfree);
  b.setFromTriplets(btrip.begin(), btrip.end());

  // Known water load: horizontal body force from the differential head.
  const double dx = c.width / c.nx;
  const double dy = c.height / c.ny;
  const std::vector<double> hp = linspace(c.h_plus_range[0], c.h_plus_range[1], 10);
  const std::vector<double> hm = linspace(c.h_minus_range[0], c.h_minus_range[1], 10);
  Matrix hydro = Matrix::Zero(nfree, static_cast<Index>(hp.size() * hm.size()));
  for (Index n = 0; n < grid.nodes(); ++n) {
    const Index free = full_to_free[static_cast<std::size_t>(2 * n)];
    if (free < 0) continue;
    const int i = static_cast<int>(n % row);
    const int j = static_cast<int>(n / row);
    const double area = dx * dy * ((i == 0 || i == c.nx) ? 0.5 : 1.0) * ((j == 0 || j == c.ny) ? 0.5 : 1.0);
    const double y = grid.y(n);
    for (std::size_t a = 0; a < hp.size(); ++a) {
      for (std::size_t m = 0; m < hm.size(); ++m) {
        const double head = std::max(hp[a] - y, 0.0) - std::max(hm[m] - y, 0.0);
        hydro(free, static_cast<Index>(a + hp.size() * m)) = c.weight_density * head * area * c.thickness;
      }
    }
  }

  std::vector<ReducedDof> dofs;
  std::vector<Index> quoin_nodes, miter_nodes;
  for (int j = 0; j <= c.ny; ++j) quoin_nodes.push_back(static_cast<Index>(j) * row);
  for (int j = 1; j <= c.ny; ++j) miter_nodes.push_back(static_cast<Index>(j) * row + c.nx);
  for (Index n : quoin_nodes) dofs.push_back(ReducedDof{full_to_free[static_cast<std::size_t>(2 * n)], "quoin", {0.0, grid.y(n), 0.0}});
  for (Index n : miter_nodes) {
    dofs.push_back(ReducedDof{full_to_free[static_cast<std::size_t>(2 * n)], "miter", {c.width, grid.y(n), 0.0}});
  }

  GateModel out;
  out.full_dofs = nfree;
  out.quoin_dofs = static_cast<Index>(quoin_nodes.size());
  out.miter_dofs = static_cast<Index>(miter_nodes.size());
  out.reduced = std::make_shared<ReducedElasticModel>(schur_reduce(k, b, dofs, LevelTable(hp, hm, hydro)));

  auto truncate_spatial = [&](const KlBasis& full) {
    return c.spatial_modes > 0 ? truncate_count(full, c.spatial_modes) : truncate_energy(full, c.spatial_energy);
  };
  std::vector<Point> quoin_seeds;
  for (double y : linspace(0.0, c.height, c.ny + 1)) quoin_seeds.push_back(point(y));
  Vector quoin_w = Vector::Constant(c.ny + 1, dy);
  quoin_w(0) *= 0.5;
  quoin_w(c.ny) *= 0.5;
  const auto height_seeds = left_point_grid_2d(c.h_plus_range[0], c.h_plus_range[1], c.h_minus_range[0],
                                               c.h_minus_range[1], c.height_seeds);
  const double area = (c.h_plus_range[1] - c.h_plus_range[0]) * (c.h_minus_range[1] - c.h_minus_range[0]);
  const KlBasis height = truncate_energy(
      nystrom_eig(KernelExpr::matern(2.5, c.height_length, c.height_variance), height_seeds,
                  equal_weights(height_seeds.size(), area)),
      c.height_energy);

  std::vector<LoadPrior> loads;
  for (const char* side : {"quoin", "miter"}) {
    const bool quoin = std::string(side) == "quoin";
    const auto& nodes = quoin ? quoin_nodes : miter_nodes;
    const auto ns = static_cast<Index>(nodes.size());
    LoadPrior lp;
    lp.side = side;
    Matrix mean(ns, static_cast<Index>(hp.size()));
    for (Index r = 0; r < ns; ++r) {
      for (std::size_t a = 0; a < hp.size(); ++a) mean(r, static_cast<Index>(a)) = girder_mean(c, grid.y(nodes[static_cast<std::size_t>(r)]), hp[a]);
    }
    lp.mean = LevelTable(hp, {c.h_minus_range[0]}, mean);
    lp.projection.resize(ns);
    for (Index r = 0; r < ns; ++r) {
      const Index j = nodes[static_cast<std::size_t>(r)] / row;
      const double trib = (j == 0 || j == c.ny) ? 0.5 * dy : dy;
      lp.projection(r) = (quoin ? 1.0 : -1.0) * trib * c.thickness;
    }
    if (quoin) {
      lp.spatial = truncate_spatial(nystrom_eig(spatial_kernel(c), quoin_seeds, quoin_w));
    } else {
      // Miter seeds exclude the pinned bottom node; reuse the quoin kernel.
      std::vector<Point> seeds;
      for (Index n : miter_nodes) seeds.push_back(point(grid.y(n)));
      Vector w = Vector::Constant(ns, dy);
      w(ns - 1) *= 0.5;
      lp.spatial = truncate_spatial(nystrom_eig(spatial_kernel(c), seeds, w));
    }
    lp.height = height;
    lp.time_kernel = KernelExpr::constant(1.0);
    loads.push_back(std::move(lp));
  }

  const auto ng = static_cast<Index>(c.gages.size());
  std::vector<KernelExpr> thermal;
  for (const auto& g : c.gages) thermal.push_back(g.thermal.kernel(c.unit_scale));
  const std::vector<double> ones(static_cast<std::size_t>(ng), 1.0);
  ErrorModel err{CoregionalModel(CoregionalModel::equicorrelated(ones, c.thermal_rho), std::move(thermal)),
                 c.bias_std * c.bias_std * c.unit_scale * Matrix::Identity(ng, ng),
                 Vector::Constant(ng, c.noise_var * c.unit_scale), std::nullopt};
  out.joint = std::make_shared<JointModel>(build_joint_model(out.reduced, std::move(loads), std::move(err)));
  return out;
}

GateSchedule gate_schedule(const GateConfig& c) {
  GateSchedule s;
  const double mp = 0.5 * (c.h_plus_range[0] + c.h_plus_range[1]);
  const double ap = 0.4 * (c.h_plus_range[1] - c.h_plus_range[0]);
  const double mm = 0.5 * (c.h_minus_range[0] + c.h_minus_range[1]);
  const double am = 0.4 * (c.h_minus_range[1] - c.h_minus_range[0]);
  for (int i = 0; i < c.times; ++i) {
    // Whole seconds, so ISO timestamps round-trip exactly.
    const double t = std::round(c.days * 86400.0 * i / c.times) / 86400.0;
    s.times.push_back(t);
    s.h_plus.push_back(mp + ap * std::sin(2.0 * std::numbers::pi * t / 0.9));
    s.h_minus.push_back(mm - am * std::sin(2.0 * std::numbers::pi * t / 1.7));
  }
  return s;
}

PriorDraw simulate_gate(const GateConfig& c, const GateModel& model) {
  GateSchedule s = gate_schedule(c);
  return simulate_from_prior(*model.joint, std::move(s.times), std::move(s.h_plus), std::move(s.h_minus), c.seed);
}

}  // namespace ssgp::gate
