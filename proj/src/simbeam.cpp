#include "ssgp/simbeam.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/SparseCholesky>

#include "ssgp/error.hpp"
#include "ssgp/io.hpp"
#include "ssgp/kernel_json.hpp"
#include "ssgp/klreduce.hpp"

namespace ssgp::beam {
namespace {

using nlohmann::json;

double interp(std::span<const double> xs, std::span<const double> ys, double x, const char* what) {
  const double span = xs.back() - xs.front();
  const double tol = 1e-12 * std::max(1.0, std::abs(span));
  if (x < xs.front() - tol || x > xs.back() + tol) {
    throw ExtrapolationError(std::string(what) + ": " + io::format_double(x) + " is outside [" +
                             io::format_double(xs.front()) + ", " + io::format_double(xs.back()) + "]");
  }
  if (xs.size() == 1) return ys[0];
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  std::size_t k = static_cast<std::size_t>(std::distance(xs.begin(), it));
  k = std::clamp<std::size_t>(k, 1, xs.size() - 1);
  const double w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
  return (1.0 - std::clamp(w, 0.0, 1.0)) * ys[k - 1] + std::clamp(w, 0.0, 1.0) * ys[k];
}

std::span<const double> span_of(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

/// Reads optional fields and rejects keys it never saw.
class Fields {
 public:
  Fields(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j.is_object()) throw ConfigError(where("") + " must be an object");
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("field " + where(key) + " has the wrong type");
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string where(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown field " + where(k));
    }
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

TemperatureSignal read_temperature_csv(const std::filesystem::path& path, const std::string& field) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("field " + field + ": file not found: " + path.string());
  }
  const io::CsvTable t = io::read_csv(path);
  const std::size_t ct = t.column("time_days");
  const std::size_t top = t.column("t_top");
  const std::size_t bot = t.column("t_bottom");
  const auto n = static_cast<Index>(t.rows.size());
  if (n < 2) throw ConfigError("field " + field + ": need at least two rows");
  Vector tt(n), vt(n), vb(n);
  for (Index r = 0; r < n; ++r) {
    const auto& row = t.rows[static_cast<std::size_t>(r)];
    const std::string ctx = field + " row " + std::to_string(r + 1);
    tt(r) = io::parse_double(row.at(ct), ctx);
    vt(r) = io::parse_double(row.at(top), ctx);
    vb(r) = io::parse_double(row.at(bot), ctx);
    if (r > 0 && !(tt(r) > tt(r - 1))) throw ConfigError(ctx + ": time_days must increase");
  }
  TemperatureSignal s;
  s.table_times = tt;
  s.table_top = vt;
  s.table_bottom = vb;
  return s;
}

// Shape functions of the bilinear quad at (ξ, η): derivatives in ξ and η.
void shape_derivs(double xi, double eta, double dxi[4], double deta[4]) {
  dxi[0] = -0.25 * (1 - eta);
  dxi[1] = 0.25 * (1 - eta);
  dxi[2] = 0.25 * (1 + eta);
  dxi[3] = -0.25 * (1 + eta);
  deta[0] = -0.25 * (1 - xi);
  deta[1] = -0.25 * (1 + xi);
  deta[2] = 0.25 * (1 + xi);
  deta[3] = 0.25 * (1 - xi);
}

/// Strain-displacement matrix (3×8) and Jacobian determinant at (ξ, η).
double strain_matrix(const double x[4], const double y[4], double xi, double eta, Eigen::Matrix<double, 3, 8>& b) {
  double dxi[4], deta[4];
  shape_derivs(xi, eta, dxi, deta);
  double j11 = 0, j12 = 0, j21 = 0, j22 = 0;
  for (int a = 0; a < 4; ++a) {
    j11 += dxi[a] * x[a];
    j12 += dxi[a] * y[a];
    j21 += deta[a] * x[a];
    j22 += deta[a] * y[a];
  }
  const double det = j11 * j22 - j12 * j21;
  b.setZero();
  if (!(det > 0.0)) return det;
  for (int a = 0; a < 4; ++a) {
    const double dx = (j22 * dxi[a] - j12 * deta[a]) / det;
    const double dy = (-j21 * dxi[a] + j11 * deta[a]) / det;
    b(0, 2 * a) = dx;
    b(1, 2 * a + 1) = dy;
    b(2, 2 * a) = dy;
    b(2, 2 * a + 1) = dx;
  }
  return det;
}

struct Mesh {
  int nx, ny;
  Matrix nodes;
  std::vector<std::array<Index, 4>> elements;  // counterclockwise
};

Mesh make_mesh(const PlateGrid& c) {
  Mesh m{c.nx, c.ny, Matrix((c.nx + 1) * (c.ny + 1), 2), {}};
  for (int j = 0; j <= c.ny; ++j) {
    for (int i = 0; i <= c.nx; ++i) {
      const Index n = j * (c.nx + 1) + i;
      m.nodes(n, 0) = c.length * i / c.nx;
      m.nodes(n, 1) = c.height * j / c.ny;
    }
  }
  for (int j = 0; j < c.ny; ++j) {
    for (int i = 0; i < c.nx; ++i) {
      const Index n0 = j * (c.nx + 1) + i;
      m.elements.push_back({n0, n0 + 1, n0 + 1 + (c.nx + 1), n0 + (c.nx + 1)});
    }
  }
  return m;
}

Eigen::Matrix<double, 8, 8> element_stiffness(const double x[4], const double y[4], double youngs, double poisson,
                                             double thickness, std::size_t e) {
  const double f = youngs / (1.0 - poisson * poisson);
  Eigen::Matrix3d d;
  d << f, f * poisson, 0, f * poisson, f, 0, 0, 0, f * (1.0 - poisson) / 2.0;
  const double g = 1.0 / std::sqrt(3.0);
  Eigen::Matrix<double, 8, 8> ke = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 3, 8> b;
  for (double xi : {-g, g}) {
    for (double eta : {-g, g}) {
      const double det = strain_matrix(x, y, xi, eta, b);
      if (!(det > 0.0)) throw ConstructionError("beam assembly: element " + std::to_string(e) + " is degenerate");
      ke += b.transpose() * d * b * (det * thickness);
    }
  }
  return ke;
}

SparseMatrix assemble_stiffness(const PlateGrid& c, const Mesh& mesh) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.elements.size() * 64);
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    const auto& el = mesh.elements[e];
    double x[4], y[4];
    for (int a = 0; a < 4; ++a) {
      x[a] = mesh.nodes(el[static_cast<std::size_t>(a)], 0);
      y[a] = mesh.nodes(el[static_cast<std::size_t>(a)], 1);
    }
    const auto ke = element_stiffness(x, y, c.youngs, c.poisson, c.thickness, e);
    for (int a = 0; a < 8; ++a) {
      for (int bb = 0; bb < 8; ++bb) {
        trip.emplace_back(2 * el[static_cast<std::size_t>(a / 2)] + a % 2, 2 * el[static_cast<std::size_t>(bb / 2)] + bb % 2,
                          ke(a, bb));
      }
    }
  }
  const Index n = 2 * mesh.nodes.rows();
  SparseMatrix k(n, n);
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

/// Edge lengths attributed to the nodes of a polyline given by coordinates.
Vector tributary(const std::vector<double>& s) {
  Vector t = Vector::Zero(static_cast<Index>(s.size()));
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    const double len = s[k + 1] - s[k];
    t(static_cast<Index>(k)) += 0.5 * len;
    t(static_cast<Index>(k + 1)) += 0.5 * len;
  }
  return t;
}

Vector restrict_free(const Vector& full, const std::vector<Index>& free_to_full) {
  Vector v(static_cast<Index>(free_to_full.size()));
  for (std::size_t k = 0; k < free_to_full.size(); ++k) v(static_cast<Index>(k)) = full(free_to_full[k]);
  return v;
}

/// Tridiagonal solve (Thomas); a sub, b diag, c super.
void thomas(std::vector<double> a, std::vector<double> b, std::vector<double> c, std::vector<double>& d) {
  const std::size_t n = d.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    d[i] -= w * d[i - 1];
  }
  d[n - 1] /= b[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) d[i] = (d[i] - c[i] * d[i + 1]) / b[i];
}

}  // namespace

double TemperatureSignal::top(double t) const {
  if (table_times) return interp(span_of(*table_times), span_of(*table_top), t, "temperature table");
  return mean + top_amplitude * std::sin(2.0 * std::numbers::pi * (t - top_phase)) + top_trend * t;
}

double TemperatureSignal::bottom(double t) const {
  if (table_times) return interp(span_of(*table_times), span_of(*table_bottom), t, "temperature table");
  return mean + bottom_amplitude * std::sin(2.0 * std::numbers::pi * (t - bottom_phase)) + bottom_trend * t;
}

double TemperatureSignal::resolution() const {
  if (!table_times) return std::numeric_limits<double>::infinity();
  double r = std::numeric_limits<double>::infinity();
  for (Index i = 1; i < table_times->size(); ++i) r = std::min(r, (*table_times)(i) - (*table_times)(i - 1));
  return r;
}

double TrueLoads::normal_at(double h) const { return interp(levels, normal, h, "true normal load"); }
double TrueLoads::tangential_at(double h) const { return interp(levels, tangential, h, "true tangential load"); }

TrueLoads TrueLoads::defaults(double height) {
  TrueLoads l;
  constexpr int n = 101;
  for (int k = 0; k < n; ++k) {
    const double s = static_cast<double>(k) / (n - 1);
    l.levels.push_back(height * s);
    l.normal.push_back(1e6 * std::exp(-std::pow((s - 0.5) / 0.25, 2)));
    l.tangential.push_back(-5e6 + 1e6 * std::exp(-std::pow((s - 0.6) / 0.3, 2)));
  }
  return l;
}

void BeamConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("beam config: " + m); };
  if (nx < 2 || ny < 2) fail("grid must be at least 2x2");
  if (!(length > 0) || !(height > 0) || !(thickness > 0)) fail("length, height and thickness must be positive");
  if (!(youngs > 0) || !(poisson > -1.0 && poisson < 0.5)) fail("material constants out of range");
  if (!(rho_cp > 0) || !(conductivity > 0)) fail("thermal constants must be positive");
  if (gages.empty()) fail("at least one gage is required");
  for (const auto& g : gages) {
    if (!(g[0] >= 0 && g[0] <= length && g[1] >= 0 && g[1] <= height)) fail("gage position outside the domain");
  }
  if (bias.size() != gages.size()) fail("bias length must equal the number of gages");
  if (!(noise_var >= 0)) fail("noise_var must be non-negative");
  if (!(water_period > 0) || !(water_low >= 0 && water_high <= 1 && water_low <= water_high)) {
    fail("water signal out of range");
  }
  if (!(days > 0) || !(cadence_minutes > 0)) fail("days and cadence_minutes must be positive");
  if (heat_nodes < 3) fail("heat_nodes must be at least 3");
  if (loads.levels.size() < 2 || loads.normal.size() != loads.levels.size() ||
      loads.tangential.size() != loads.levels.size()) {
    fail("true load tables need matching levels, normal and tangential columns");
  }
  if (!std::is_sorted(loads.levels.begin(), loads.levels.end())) fail("true load levels must increase");
  if (loads.levels.front() > height * water_low + 1e-12 || loads.levels.back() < height * water_high - 1e-12) {
    fail("true load tables must cover the water signal range");
  }
  if (temperature.table_times &&
      (temperature.table_top->size() != temperature.table_times->size() ||
       temperature.table_bottom->size() != temperature.table_times->size())) {
    fail("temperature table columns differ in length");
  }
}

BeamConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  BeamConfig c;
  Fields f(j, "");
  f.get("length", c.length);
  f.get("height", c.height);
  f.get("thickness", c.thickness);
  f.get("nx", c.nx);
  f.get("ny", c.ny);
  f.get("youngs", c.youngs);
  f.get("poisson", c.poisson);
  f.get("expansion", c.expansion);
  f.get("rho_cp", c.rho_cp);
  f.get("conductivity", c.conductivity);
  f.get("reference_temperature", c.reference_temperature);
  std::string support = "clamped";
  f.get("right_support", support);
  if (support == "clamped") {
    c.support = RightSupport::Clamped;
  } else if (support == "roller") {
    c.support = RightSupport::Roller;
  } else {
    throw ConfigError("field right_support must be \"clamped\" or \"roller\"");
  }
  if (const json* g = f.sub("gages")) {
    c.gages.clear();
    try {
      for (const auto& p : *g) c.gages.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    } catch (const json::exception&) {
      throw ConfigError("field gages must be a list of [x1, x2] pairs");
    }
  }
  if (const json* w = f.sub("water")) {
    Fields fw(*w, "water");
    fw.get("period", c.water_period);
    fw.get("low", c.water_low);
    fw.get("high", c.water_high);
    fw.get("hydro_pressure", c.hydro_pressure);
    fw.finish();
  }
  if (const json* t = f.sub("temperature")) {
    Fields ft(*t, "temperature");
    if (const json* csv = ft.sub("csv")) {
      if (!csv->is_string()) throw ConfigError("field temperature.csv must be a path");
      std::filesystem::path p = csv->get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      c.temperature = read_temperature_csv(p, "temperature.csv");
    }
    if (const json* tab = ft.sub("table")) {
      Fields fb(*tab, "temperature.table");
      std::vector<double> tt, vt, vb;
      fb.get("time_days", tt);
      fb.get("t_top", vt);
      fb.get("t_bottom", vb);
      fb.finish();
      if (tt.size() < 2 || vt.size() != tt.size() || vb.size() != tt.size()) {
        throw ConfigError("field temperature.table needs matching columns of at least two rows");
      }
      c.temperature.table_times = Eigen::Map<const Vector>(tt.data(), static_cast<Index>(tt.size()));
      c.temperature.table_top = Eigen::Map<const Vector>(vt.data(), static_cast<Index>(vt.size()));
      c.temperature.table_bottom = Eigen::Map<const Vector>(vb.data(), static_cast<Index>(vb.size()));
    }
    ft.get("mean", c.temperature.mean);
    ft.get("top_amplitude", c.temperature.top_amplitude);
    ft.get("bottom_amplitude", c.temperature.bottom_amplitude);
    ft.get("top_phase", c.temperature.top_phase);
    ft.get("bottom_phase", c.temperature.bottom_phase);
    ft.get("top_trend", c.temperature.top_trend);
    ft.get("bottom_trend", c.temperature.bottom_trend);
    ft.finish();
  }
  c.loads = TrueLoads::defaults(c.height);
  if (const json* l = f.sub("true_loads")) {
    Fields fl(*l, "true_loads");
    fl.get("levels", c.loads.levels);
    fl.get("normal", c.loads.normal);
    fl.get("tangential", c.loads.tangential);
    fl.finish();
  }
  f.get("bias", c.bias);
  f.get("noise_var", c.noise_var);
  f.get("seed", c.seed);
  if (const json* s = f.sub("start")) {
    if (!s->is_string()) throw ConfigError("field start must be an ISO-8601 string");
    try {
      c.start_seconds = io::parse_iso8601(s->get<std::string>());
    } catch (const Error& e) {
      throw ConfigError(std::string("field start: ") + e.what());
    }
  }
  f.get("days", c.days);
  f.get("cadence_minutes", c.cadence_minutes);
  f.get("heat_nodes", c.heat_nodes);
  f.finish();
  c.validate();
  return c;
}

json config_to_json(const BeamConfig& c) {
  json g = json::array();
  for (const auto& p : c.gages) g.push_back({p[0], p[1]});
  json j = {{"length", c.length},
            {"height", c.height},
            {"thickness", c.thickness},
            {"nx", c.nx},
            {"ny", c.ny},
            {"youngs", c.youngs},
            {"poisson", c.poisson},
            {"expansion", c.expansion},
            {"rho_cp", c.rho_cp},
            {"conductivity", c.conductivity},
            {"reference_temperature", c.reference_temperature},
            {"right_support", c.support == RightSupport::Clamped ? "clamped" : "roller"},
            {"gages", g},
            {"water",
             {{"period", c.water_period}, {"low", c.water_low}, {"high", c.water_high},
              {"hydro_pressure", c.hydro_pressure}}},
            {"true_loads", {{"levels", c.loads.levels}, {"normal", c.loads.normal}, {"tangential", c.loads.tangential}}},
            {"bias", c.bias},
            {"noise_var", c.noise_var},
            {"seed", c.seed},
            {"start", io::format_iso8601(c.start_seconds)},
            {"days", c.days},
            {"cadence_minutes", c.cadence_minutes},
            {"heat_nodes", c.heat_nodes}};
  const auto& t = c.temperature;
  if (t.table_times) {
    j["temperature"]["table"] = {{"time_days", std::vector<double>(t.table_times->begin(), t.table_times->end())},
                              {"t_top", std::vector<double>(t.table_top->begin(), t.table_top->end())},
                              {"t_bottom", std::vector<double>(t.table_bottom->begin(), t.table_bottom->end())}};
  } else {
    j["temperature"] = {{"mean", t.mean},
                        {"top_amplitude", t.top_amplitude},
                        {"bottom_amplitude", t.bottom_amplitude},
                        {"top_phase", t.top_phase},
                        {"bottom_phase", t.bottom_phase},
                        {"top_trend", t.top_trend},
                        {"bottom_trend", t.bottom_trend}};
  }
  return j;
}

PlateGrid plate_of(const BeamConfig& c) {
  return {c.length, c.height, c.nx, c.ny, c.youngs, c.poisson, c.thickness};
}

SparseMatrix plate_stiffness(const PlateGrid& g) {
  if (g.nx < 1 || g.ny < 1) throw ConstructionError("plate grid needs at least one element");
  return assemble_stiffness(g, make_mesh(g));
}

int nearest_element(const PlateGrid& g, double x1, double x2) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  const double dx = g.length / g.nx;
  const double dy = g.height / g.ny;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const double d = std::hypot(dx * (i + 0.5) - x1, dy * (j + 0.5) - x2);
      if (d < best_d - 1e-12 * std::max(g.length, g.height)) {
        best_d = d;
        best = j * g.nx + i;
      }
    }
  }
  return best;
}

std::vector<std::pair<Index, double>> center_strain_row(const PlateGrid& g, int element, int component) {
  if (element < 0 || element >= g.nx * g.ny || component < 0 || component > 2) {
    throw DomainError("center_strain_row: element or component out of range");
  }
  const int i = element % g.nx;
  const int j = element / g.nx;
  const Index n0 = static_cast<Index>(j) * (g.nx + 1) + i;
  const Index nodes[4] = {n0, n0 + 1, n0 + 1 + (g.nx + 1), n0 + (g.nx + 1)};
  double x[4], y[4];
  for (int a = 0; a < 4; ++a) {
    x[a] = g.x(nodes[a]);
    y[a] = g.y(nodes[a]);
  }
  Eigen::Matrix<double, 3, 8> b;
  strain_matrix(x, y, 0.0, 0.0, b);
  std::vector<std::pair<Index, double>> row;
  for (int a = 0; a < 8; ++a) {
    if (b(component, a) != 0.0) row.emplace_back(2 * nodes[a / 2] + a % 2, b(component, a));
  }
  return row;
}

Matrix q4_stiffness(const Matrix& xy, double youngs, double poisson, double thickness) {
  if (xy.rows() != 4 || xy.cols() != 2) throw ConstructionError("q4_stiffness: need 4 corners");
  double x[4], y[4];
  for (int a = 0; a < 4; ++a) {
    x[a] = xy(a, 0);
    y[a] = xy(a, 1);
  }
  return element_stiffness(x, y, youngs, poisson, thickness, 0);
}

SparseMatrix assemble_unconstrained_stiffness(const BeamConfig& c) {
  c.validate();
  return plate_stiffness(plate_of(c));
}

BeamFem assemble_beam_fem(const BeamConfig& c) {
  c.validate();
  const PlateGrid grid = plate_of(c);
  const Mesh mesh = make_mesh(grid);
  const SparseMatrix kfull = assemble_stiffness(grid, mesh);
  const Index nnodes = mesh.nodes.rows();
  const Index ndof = 2 * nnodes;

  std::vector<bool> fixed(static_cast<std::size_t>(ndof), false);
  for (int j = 0; j <= c.ny; ++j) {
    const Index n = j * (c.nx + 1) + c.nx;
    fixed[static_cast<std::size_t>(2 * n)] = true;
    if (c.support == RightSupport::Clamped || j == 0) fixed[static_cast<std::size_t>(2 * n + 1)] = true;
  }

  BeamFem fem;
  fem.nodes = mesh.nodes;
  fem.full_to_free.assign(static_cast<std::size_t>(ndof), -1);
  for (Index d = 0; d < ndof; ++d) {
    if (fixed[static_cast<std::size_t>(d)]) continue;
    fem.full_to_free[static_cast<std::size_t>(d)] = static_cast<Index>(fem.free_to_full.size());
    fem.free_to_full.push_back(d);
  }
  const auto nfree = static_cast<Index>(fem.free_to_full.size());
  std::vector<Eigen::Triplet<double>> trip;
  for (Index col = 0; col < kfull.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(kfull, col); it; ++it) {
      const Index r = fem.full_to_free[static_cast<std::size_t>(it.row())];
      const Index cc = fem.full_to_free[static_cast<std::size_t>(it.col())];
      if (r >= 0 && cc >= 0) trip.emplace_back(r, cc, it.value());
    }
  }
  fem.K.resize(nfree, nfree);
  fem.K.setFromTriplets(trip.begin(), trip.end());

  std::vector<double> ys, xs;
  for (int j = 0; j <= c.ny; ++j) {
    fem.left_nodes.push_back(j * (c.nx + 1));
    ys.push_back(mesh.nodes(j * (c.nx + 1), 1));
  }
  for (int i = 0; i <= c.nx; ++i) xs.push_back(mesh.nodes(i, 0));
  fem.left_tributary = tributary(ys);
  const Vector bottom_trib = tributary(xs);

  Vector fn = Vector::Zero(ndof), ft = Vector::Zero(ndof), fh = Vector::Zero(ndof);
  for (std::size_t k = 0; k < fem.left_nodes.size(); ++k) {
    const Index n = fem.left_nodes[k];
    fn(2 * n) = -fem.left_tributary(static_cast<Index>(k)) * c.thickness;
    ft(2 * n + 1) = fem.left_tributary(static_cast<Index>(k)) * c.thickness;
  }
  for (int i = 0; i <= c.nx; ++i) fh(2 * i + 1) = bottom_trib(i) * c.thickness;
  fem.normal_unit = restrict_free(fn, fem.free_to_full);
  fem.tangential_unit = restrict_free(ft, fem.free_to_full);
  fem.hydro_unit = restrict_free(fh, fem.free_to_full);

  // Gage rows: ε_xx at the nearest element center, ties to the lower index.
  std::vector<Eigen::Triplet<double>> btrip;
  for (std::size_t g = 0; g < c.gages.size(); ++g) {
    const int best = nearest_element(grid, c.gages[g][0], c.gages[g][1]);
    fem.gage_elements.push_back(best);
    for (const auto& [full, v] : center_strain_row(grid, best, 0)) {
      const Index free = fem.full_to_free[static_cast<std::size_t>(full)];
      if (free >= 0) btrip.emplace_back(static_cast<Index>(g), free, v);
    }
  }
  fem.B.resize(static_cast<Index>(c.gages.size()), nfree);
  fem.B.setFromTriplets(btrip.begin(), btrip.end());
  return fem;
}

Vector solve_displacement(const BeamFem& fem, const Vector& load) {
  const Eigen::SimplicialLDLT<SparseMatrix> ldlt(fem.K);
  if (ldlt.info() != Eigen::Success) throw NumericalError("beam stiffness factorization failed");
  return ldlt.solve(load);
}

double water_level(const BeamConfig& c, double t) {
  const double phase = std::fmod(t, c.water_period);
  const double frac = (phase < 0.5 * c.water_period && phase >= 0.0) ? c.water_low : c.water_high;
  return frac * c.height;
}

std::vector<double> default_times(const BeamConfig& c) {
  const double dt = c.cadence_minutes / 1440.0;
  const auto n = static_cast<std::size_t>(std::llround(c.days / dt));
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) * dt;
  return t;
}

HeatResult simulate_heat(const BeamConfig& c, const std::vector<double>& times) {
  c.validate();
  if (times.empty()) throw DomainError("simulate_heat: no times");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw DomainError("simulate_heat: times must increase");
  }
  const int nz = c.heat_nodes;
  const double dz = c.height / (nz - 1);
  const double kappa = c.conductivity / c.rho_cp * io::kSecondsPerDay;  // m²/day
  HeatResult r;
  r.z.resize(nz);
  for (int k = 0; k < nz; ++k) r.z(k) = dz * k;
  r.temperature.resize(nz, static_cast<Index>(times.size()));
  r.thermal_strain.resize(static_cast<Index>(c.gages.size()), static_cast<Index>(times.size()));

  const double resolution = c.temperature.resolution();
  const double max_step = std::min(1.0 / 1440.0, resolution);
  std::vector<double> temp(static_cast<std::size_t>(nz));
  // Unknowns are offsets from the reference temperature, so a constant
  // reference field stays exactly zero.
  const double t_ref = c.reference_temperature;
  const double tb0 = c.temperature.bottom(times[0]) - t_ref;
  const double tt0 = c.temperature.top(times[0]) - t_ref;
  for (int k = 0; k < nz; ++k) temp[static_cast<std::size_t>(k)] = tb0 + (tt0 - tb0) * r.z(k) / c.height;

  const std::size_t ni = static_cast<std::size_t>(nz - 2);
  std::vector<double> rhs(ni);
  double t = times[0];
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (i > 0) {
      const double span = times[i] - times[i - 1];
      if (span > resolution * (1.0 + 1e-12) && !r.resampled) {
        r.resampled = true;
        std::cerr << "warning: observation spacing exceeds the temperature signal resolution; "
                     "resampling the conduction solve at the signal resolution\n";
      }
      const int nsub = std::max(1, static_cast<int>(std::ceil(span / max_step - 1e-9)));
      const double dt = span / nsub;
      const double a = kappa * dt / (dz * dz);
      for (int s = 0; s < nsub; ++s) {
        t = times[i - 1] + dt * (s + 1);
        const double tb = c.temperature.bottom(t) - t_ref;
        const double tt = c.temperature.top(t) - t_ref;
        for (std::size_t k = 0; k < ni; ++k) rhs[k] = temp[k + 1];
        rhs[0] += a * tb;
        rhs[ni - 1] += a * tt;
        thomas(std::vector<double>(ni, -a), std::vector<double>(ni, 1.0 + 2.0 * a), std::vector<double>(ni, -a), rhs);
        temp[0] = tb;
        temp[static_cast<std::size_t>(nz - 1)] = tt;
        for (std::size_t k = 0; k < ni; ++k) temp[k + 1] = rhs[k];
      }
    }
    for (int k = 0; k < nz; ++k) r.temperature(k, static_cast<Index>(i)) = temp[static_cast<std::size_t>(k)] + t_ref;
    for (std::size_t g = 0; g < c.gages.size(); ++g) {
      const double tg = interp(span_of(r.z), std::span<const double>(temp), c.gages[g][1], "gage height");
      r.thermal_strain(static_cast<Index>(g), static_cast<Index>(i)) = c.expansion * tg;
    }
  }
  return r;
}

Synthetic generate_synthetic(const BeamConfig& c, const std::vector<double>& times) {
  c.validate();
  const BeamFem fem = assemble_beam_fem(c);
  const Eigen::SimplicialLDLT<SparseMatrix> ldlt(fem.K);
  if (ldlt.info() != Eigen::Success) throw NumericalError("beam stiffness factorization failed");
  const Vector eh = fem.B * ldlt.solve(fem.hydro_unit);
  const Vector en = fem.B * ldlt.solve(fem.normal_unit);
  const Vector et = fem.B * ldlt.solve(fem.tangential_unit);
  const HeatResult heat = simulate_heat(c, times);

  const auto m = static_cast<Index>(times.size());
  const auto ng = static_cast<Index>(c.gages.size());
  Synthetic s;
  Truth& tr = s.truth;
  tr.elastic.resize(ng, m);
  tr.thermal = heat.thermal_strain;
  tr.bias.resize(ng, m);
  tr.noise.resize(ng, m);
  tr.normal.resize(m);
  tr.tangential.resize(m);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> gauss;
  const double sd = std::sqrt(c.noise_var);
  s.obs.times = times;
  s.obs.epoch_seconds = c.start_seconds;
  for (Index g = 0; g < ng; ++g) s.obs.gage_ids.push_back("gage_" + std::to_string(g));
  s.obs.strains.resize(ng, m);
  for (Index i = 0; i < m; ++i) {
    const double h = water_level(c, times[static_cast<std::size_t>(i)]);
    tr.normal(i) = c.loads.normal_at(h);
    tr.tangential(i) = c.loads.tangential_at(h);
    tr.elastic.col(i) = c.hydro_pressure * h * eh + tr.normal(i) * en + tr.tangential(i) * et;
    s.obs.h_plus.push_back(h);
    s.obs.h_minus.push_back(0.0);
    for (Index g = 0; g < ng; ++g) {
      tr.bias(g, i) = c.bias[static_cast<std::size_t>(g)];
      tr.noise(g, i) = sd * gauss(rng);
    }
  }
  s.obs.strains = tr.elastic + tr.thermal + tr.bias + tr.noise;
  return s;
}

Synthetic generate_synthetic(const BeamConfig& c) { return generate_synthetic(c, default_times(c)); }

BeamPrior prior_from_json(const json& j, const std::filesystem::path& base_dir) {
  BeamPrior p;
  Fields f(j, "prior");
  f.get("thermal_variance", p.thermal_variance);
  f.get("thermal_rho", p.thermal_rho);
  if (const json* k = f.sub("thermal_kernel")) p.thermal_kernel = kernel_from_json(*k, base_dir);
  f.get("bias_variance", p.bias_variance);
  f.get("noise_var", p.noise_var);
  f.get("load_variance", p.load_variance);
  f.get("load_length", p.load_length);
  f.get("load_nu", p.load_nu);
  f.get("normal_mean", p.normal_mean);
  f.get("tangential_mean", p.tangential_mean);
  f.get("height_seeds", p.height_seeds);
  f.get("height_energy", p.height_energy);
  f.finish();
  if (!(p.thermal_variance > 0) || !(p.thermal_rho > -0.5 && p.thermal_rho < 1) || !(p.bias_variance > 0) ||
      !(p.noise_var > 0) || !(p.load_variance > 0) || !(p.load_length > 0) || p.height_seeds < 2 ||
      !(p.height_energy > 0 && p.height_energy <= 1)) {
    throw ConfigError("prior: parameter out of range");
  }
  return p;
}

json prior_to_json(const BeamPrior& p) {
  return {{"thermal_variance", p.thermal_variance},
          {"thermal_rho", p.thermal_rho},
          {"thermal_kernel", kernel_to_json(p.thermal_kernel)},
          {"bias_variance", p.bias_variance},
          {"noise_var", p.noise_var},
          {"load_variance", p.load_variance},
          {"load_length", p.load_length},
          {"load_nu", p.load_nu},
          {"normal_mean", p.normal_mean},
          {"tangential_mean", p.tangential_mean},
          {"height_seeds", p.height_seeds},
          {"height_energy", p.height_energy}};
}

LevelTable hydro_table(const BeamConfig& c, const BeamFem& fem) {
  Matrix v(fem.hydro_unit.size(), 2);
  v.col(0).setZero();
  v.col(1) = c.hydro_pressure * c.height * fem.hydro_unit;
  return LevelTable({0.0, c.height}, {0.0}, v);
}

BeamModel build_beam_model(const BeamConfig& c, const BeamFem& fem, const BeamPrior& prior) {
  std::vector<ReducedDof> dofs;
  std::vector<Point> seeds;
  for (const char* side : {"normal", "tangential"}) {
    const int comp = std::string(side) == "normal" ? 0 : 1;
    for (Index n : fem.left_nodes) {
      const Index free = fem.full_to_free[static_cast<std::size_t>(2 * n + comp)];
      if (free < 0) throw ConstructionError("beam model: left edge DOF is constrained");
      dofs.push_back({free, side, {fem.nodes(n, 0), fem.nodes(n, 1), 0.0}});
    }
  }
  for (Index n : fem.left_nodes) seeds.push_back(point(fem.nodes(n, 1)));

  BeamModel out;
  out.reduced = std::make_shared<ReducedElasticModel>(schur_reduce(fem.K, fem.B, dofs, hydro_table(c, fem)));

  const KlBasis spatial = truncate_count(nystrom_eig(KernelExpr::constant(1.0), seeds, fem.left_tributary), 1);
  const KlBasis height =
      truncate_energy(nystrom_eig(KernelExpr::matern(prior.load_nu, prior.load_length, prior.load_variance),
                                  left_point_grid(0.0, c.height, prior.height_seeds),
                                  equal_weights(static_cast<std::size_t>(prior.height_seeds), c.height)),
                      prior.height_energy);
  const auto ns = static_cast<Index>(fem.left_nodes.size());
  std::vector<LoadPrior> loads;
  for (const char* side : {"normal", "tangential"}) {
    const bool normal = std::string(side) == "normal";
    LoadPrior lp;
    lp.side = side;
    lp.mean = LevelTable({0.0, c.height}, {0.0},
                         Matrix::Constant(ns, 2, normal ? prior.normal_mean : prior.tangential_mean));
    lp.projection = (normal ? -c.thickness : c.thickness) * fem.left_tributary;
    lp.spatial = spatial;
    lp.height = height;
    lp.time_kernel = KernelExpr::constant(1.0);
    loads.push_back(std::move(lp));
  }
  const auto ng = static_cast<Index>(c.gages.size());
  const std::vector<double> sig(static_cast<std::size_t>(ng), std::sqrt(prior.thermal_variance));
  ErrorModel err{CoregionalModel(CoregionalModel::equicorrelated(sig, prior.thermal_rho),
                                 std::vector<KernelExpr>(static_cast<std::size_t>(ng), prior.thermal_kernel)),
                 prior.bias_variance * Matrix::Identity(ng, ng), Vector::Constant(ng, prior.noise_var), std::nullopt};
  out.joint = std::make_shared<JointModel>(build_joint_model(out.reduced, std::move(loads), std::move(err)));
  return out;
}

}  // namespace ssgp::beam
