#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssgp/assembly.hpp"
#include "ssgp/condense.hpp"
#include "ssgp/error.hpp"
#include "ssgp/gate.hpp"
#include "ssgp/io.hpp"
#include "ssgp/kernel_json.hpp"
#include "ssgp/klreduce.hpp"
#include "ssgp/oracle.hpp"
#include "ssgp/random_model.hpp"
#include "ssgp/simbeam.hpp"
#include "ssgp/smoother.hpp"
#include "ssgp/statespace.hpp"

namespace ssgp::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr const char* kVersion = "0.1.0";

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Options {
  std::string command;
  fs::path config_path;
  fs::path out_dir = "ssgp_out";
  std::optional<std::uint64_t> seed;
  std::optional<double> budget_mb;
  bool filter_only = false;
  fs::path observations;
};

struct Context {
  Options opt;
  json config = json::object();
  fs::path base_dir;
  std::ostream& out;
  std::ostream& err;
};

// ------------------------------------------------------------ config access

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("field " + where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown field " + where + "." + k);
  }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field " + where + "." + key + " has the wrong type");
  }
}

json section(const json& config, const std::string& key) {
  if (!config.contains(key)) return json::object();
  const json& s = config.at(key);
  if (!s.is_object()) throw ConfigError("field " + key + " must be an object");
  return s;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

fs::path existing_file(const json& j, const std::string& key, const fs::path& base, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("field " + where + "." + key + " is required");
  const fs::path p = resolve(base, get_or<std::string>(j, key, "", where));
  if (!fs::exists(p)) throw ConfigError("field " + where + "." + key + ": file not found: " + p.string());
  return p;
}

json load_config(const fs::path& path) {
  if (path.empty()) return json::object();
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  check_keys(j, {"model", "prior", "error", "run", "validate", "bench", "kernel"}, "config");
  return j;
}

std::size_t budget_bytes(const Context& ctx) {
  const json run = section(ctx.config, "run");
  const double mb = ctx.opt.budget_mb.value_or(get_or<double>(run, "memory_budget_mb", 1024.0, "run"));
  if (!(mb > 0)) throw ConfigError("memory budget must be positive");
  return static_cast<std::size_t>(mb * 1024.0 * 1024.0);
}

std::string config_hash(const Context& ctx) {
  json h = {{"command", ctx.opt.command}, {"config", ctx.config}, {"filter_only", ctx.opt.filter_only}};
  h["seed"] = ctx.opt.seed ? json(*ctx.opt.seed) : json(nullptr);
  return io::fnv1a_hex(h.dump());
}

void write_manifest(const Context& ctx, const std::vector<std::string>& files) {
  json m = {{"tool", "ssgp"},
            {"version", kVersion},
            {"command", ctx.opt.command},
            {"config_hash", config_hash(ctx)},
            {"config", ctx.config},
            {"files", files}};
  m["seed"] = ctx.opt.seed ? json(*ctx.opt.seed) : json(nullptr);
  io::write_text(ctx.opt.out_dir / "manifest.json", m.dump(2) + "\n");
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

json vector_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

double peak_rss_mb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) return std::stod(line.substr(6)) / 1024.0;
  }
  return 0.0;
}

// ------------------------------------------------------------------ models

struct ModelSpec {
  std::string type;
  beam::BeamConfig beam;
  beam::BeamPrior prior;
  gate::GateConfig gate;
  json files;
};

ModelSpec model_spec(const Context& ctx) {
  const json m = section(ctx.config, "model");
  check_keys(m, {"type", "beam", "gate", "files"}, "model");
  ModelSpec s;
  s.type = get_or<std::string>(m, "type", "beam", "model");
  const bool has_prior = ctx.config.contains("prior");
  const bool has_error = ctx.config.contains("error");
  if (s.type == "beam") {
    if (has_error) throw ConfigError("field error: the beam model takes its error model from the prior section");
    s.beam = beam::config_from_json(m.value("beam", json::object()), ctx.base_dir);
    if (ctx.opt.seed) s.beam.seed = *ctx.opt.seed;
    s.prior = beam::prior_from_json(section(ctx.config, "prior"), ctx.base_dir);
  } else if (s.type == "gate") {
    if (has_prior || has_error) throw ConfigError("field model.gate carries the gate prior and error model");
    s.gate = gate::config_from_json(m.value("gate", json::object()));
    if (ctx.opt.seed) s.gate.seed = *ctx.opt.seed;
  } else if (s.type == "files") {
    if (!m.contains("files")) throw ConfigError("field model.files is required for model type files");
    s.files = m.at("files");
    check_keys(s.files, {"bundle", "stiffness", "strain_operator", "dofs", "levels", "hydro"}, "model.files");
  } else {
    throw ConfigError("field model.type: unknown model '" + s.type + "' (expected beam, gate or files)");
  }
  return s;
}

std::shared_ptr<const ReducedElasticModel> files_reduced(const json& f, const fs::path& base) {
  if (f.contains("bundle")) {
    const fs::path dir = resolve(base, get_or<std::string>(f, "bundle", "", "model.files"));
    if (!fs::is_directory(dir)) throw ConfigError("field model.files.bundle: directory not found: " + dir.string());
    return std::make_shared<ReducedElasticModel>(read_condense_bundle(dir));
  }
  const SparseMatrix k = io::read_matrix_market(existing_file(f, "stiffness", base, "model.files"));
  const SparseMatrix b = io::read_matrix_market(existing_file(f, "strain_operator", base, "model.files"));
  std::vector<ReducedDof> dofs = read_dof_sidecar(existing_file(f, "dofs", base, "model.files"));
  const LevelTable hydro = read_level_table(existing_file(f, "levels", base, "model.files"),
                                            existing_file(f, "hydro", base, "model.files"));
  return std::make_shared<ReducedElasticModel>(schur_reduce(k, b, std::move(dofs), hydro));
}

Vector tributary_weights(const std::vector<double>& x) {
  const auto n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Vector w = Vector::Zero(static_cast<Index>(n));
  for (std::size_t r = 0; r + 1 < n; ++r) {
    const double half = 0.5 * (x[order[r + 1]] - x[order[r]]);
    w(static_cast<Index>(order[r])) += half;
    w(static_cast<Index>(order[r + 1])) += half;
  }
  return w;
}

KlBasis truncated(const KlBasis& full, const json& j, double default_energy, const std::string& where) {
  if (j.contains("modes")) return truncate_count(full, get_or<Index>(j, "modes", 1, where));
  return truncate_energy(full, get_or<double>(j, "energy", default_energy, where));
}

LoadPrior load_prior_from_json(const json& j, const ReducedElasticModel& red, const fs::path& base,
                               const std::string& where) {
  check_keys(j, {"side", "coordinate", "projection", "mean", "kernel", "beta", "h_bar", "energy", "modes",
                 "height", "time_kernel"},
             where);
  LoadPrior lp;
  lp.side = get_or<std::string>(j, "side", "", where);
  const std::vector<Index> idx = red.side_indices(lp.side);
  if (idx.empty()) throw ConfigError("field " + where + ".side: no reduced DOFs labelled '" + lp.side + "'");
  const auto ns = static_cast<Index>(idx.size());
  const int axis = get_or<int>(j, "coordinate", 1, where);
  if (axis < 0 || axis > 2) throw ConfigError("field " + where + ".coordinate must be 0, 1 or 2");
  std::vector<double> coord;
  for (Index r : idx) coord.push_back(red.dofs[static_cast<std::size_t>(r)].x[static_cast<std::size_t>(axis)]);

  if (!j.contains("projection") || j.at("projection").is_number()) {
    lp.projection = Vector::Constant(ns, get_or<double>(j, "projection", 1.0, where));
  } else {
    const auto p = get_or<std::vector<double>>(j, "projection", {}, where);
    if (static_cast<Index>(p.size()) != ns) throw ConfigError("field " + where + ".projection has the wrong length");
    lp.projection = Eigen::Map<const Vector>(p.data(), ns);
  }

  const json mean = j.value("mean", json{{"constant", 0.0}});
  check_keys(mean, {"constant", "levels", "values"}, where + ".mean");
  if (mean.contains("constant")) {
    lp.mean = LevelTable({0.0}, {0.0}, Matrix::Constant(ns, 1, get_or<double>(mean, "constant", 0.0, where + ".mean")));
  } else {
    lp.mean = read_level_table(existing_file(mean, "levels", base, where + ".mean"),
                               existing_file(mean, "values", base, where + ".mean"));
    if (lp.mean.rows() != ns) throw ConfigError("field " + where + ".mean: table rows do not match the side DOFs");
  }

  if (!j.contains("kernel")) throw ConfigError("field " + where + ".kernel is required");
  KernelExpr spatial = kernel_from_json(j.at("kernel"), base);
  if (j.contains("beta")) {
    const auto& hp = lp.mean.h_plus();
    const auto& hm = lp.mean.h_minus();
    const auto hbar = get_or<std::vector<double>>(
        j, "h_bar", {0.5 * (hp.front() + hp.back()), 0.5 * (hm.front() + hm.back())}, where);
    if (hbar.size() != 2) throw ConfigError("field " + where + ".h_bar must be [h_plus, h_minus]");
    const Vector mu = lp.mean(hbar[0], hbar[1]);
    std::vector<std::size_t> order(coord.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return coord[a] < coord[b]; });
    std::vector<double> xs, vs;
    for (std::size_t o : order) {
      xs.push_back(coord[o]);
      vs.push_back(mu(static_cast<Index>(o)));
    }
    spatial = KernelExpr::mean_scaled(spatial, ScaleTable(std::move(xs), std::move(vs)),
                                      get_or<double>(j, "beta", 0.0, where));
  }
  std::vector<Point> seeds;
  for (double c : coord) seeds.push_back(point(c));
  lp.spatial = truncated(nystrom_eig(spatial, seeds, tributary_weights(coord)), j, 0.95, where);

  const json h = j.value("height", json::object());
  check_keys(h, {"kernel", "h_plus", "h_minus", "seeds", "energy", "modes"}, where + ".height");
  const KernelExpr hk = h.contains("kernel") ? kernel_from_json(h.at("kernel"), base) : KernelExpr::constant(1.0);
  const auto hp = get_or<std::vector<double>>(h, "h_plus", {0.0, 1.0}, where + ".height");
  const int m = get_or<int>(h, "seeds", 8, where + ".height");
  if (hp.size() != 2 || !(hp[0] < hp[1]) || m < 1) throw ConfigError("field " + where + ".height is malformed");
  std::vector<Point> hs;
  double measure = hp[1] - hp[0];
  if (h.contains("h_minus")) {
    const auto hm = get_or<std::vector<double>>(h, "h_minus", {}, where + ".height");
    if (hm.size() != 2 || !(hm[0] < hm[1])) throw ConfigError("field " + where + ".height.h_minus is malformed");
    hs = left_point_grid_2d(hp[0], hp[1], hm[0], hm[1], m);
    measure *= hm[1] - hm[0];
  } else {
    hs = left_point_grid(hp[0], hp[1], m);
  }
  lp.height = truncated(nystrom_eig(hk, hs, equal_weights(hs.size(), measure)), h, 0.99, where + ".height");
  lp.time_kernel = j.contains("time_kernel") ? kernel_from_json(j.at("time_kernel"), base) : KernelExpr::constant(1.0);
  return lp;
}

Vector per_gage(const json& j, const std::string& key, double fallback, Index gages, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_number()) return Vector::Constant(gages, get_or<double>(j, key, fallback, where));
  const auto v = get_or<std::vector<double>>(j, key, {}, where);
  if (static_cast<Index>(v.size()) != gages) throw ConfigError("field " + where + "." + key + " needs one value per gage");
  return Eigen::Map<const Vector>(v.data(), gages);
}

ErrorModel error_from_json(const json& j, Index gages, const fs::path& base) {
  check_keys(j, {"strain_unit", "thermal", "sigma", "rho", "bias_var", "noise_var"}, "error");
  const double s = strain_unit_scale(parse_strain_unit(get_or<std::string>(j, "strain_unit", "strain", "error")));
  if (!j.contains("thermal")) throw ConfigError("field error.thermal is required");
  const Vector sigma = per_gage(j, "sigma", 1.0, gages, "error") * s;
  const double rho = get_or<double>(j, "rho", 0.0, "error");
  std::vector<double> sg(sigma.data(), sigma.data() + gages);
  const Matrix cov = CoregionalModel::equicorrelated(sg, rho);
  const json& t = j.at("thermal");
  std::optional<CoregionalModel> thermal;
  if (t.is_array()) {
    if (static_cast<Index>(t.size()) != gages) throw ConfigError("field error.thermal needs one kernel per gage");
    std::vector<KernelExpr> ks;
    for (const auto& k : t) ks.push_back(kernel_from_json(k, base));
    thermal.emplace(cov, std::move(ks));
  } else {
    thermal.emplace(cov, kernel_from_json(t, base));
  }
  const Vector bias = per_gage(j, "bias_var", 1.0, gages, "error") * (s * s);
  const Vector noise = per_gage(j, "noise_var", 1.0, gages, "error") * (s * s);
  return ErrorModel{std::move(*thermal), Matrix(bias.asDiagonal()), noise, std::nullopt};
}

struct Built {
  std::shared_ptr<const ReducedElasticModel> reduced;
  std::shared_ptr<const JointModel> joint;
  std::optional<beam::Synthetic> beam_data;  // in-process data when no file is given
};

Built build_model(const Context& ctx, const ModelSpec& spec, bool need_joint) {
  Built b;
  if (spec.type == "beam") {
    const beam::BeamFem fem = beam::assemble_beam_fem(spec.beam);
    const beam::BeamModel m = beam::build_beam_model(spec.beam, fem, spec.prior);
    b.reduced = m.reduced;
    b.joint = m.joint;
  } else if (spec.type == "gate") {
    const gate::GateModel m = gate::build_gate_model(spec.gate);
    b.reduced = m.reduced;
    b.joint = m.joint;
  } else {
    b.reduced = files_reduced(spec.files, ctx.base_dir);
    if (need_joint) {
      const json prior = section(ctx.config, "prior");
      check_keys(prior, {"loads"}, "prior");
      std::vector<LoadPrior> loads;
      const json list = prior.value("loads", json::array());
      if (!list.is_array()) throw ConfigError("field prior.loads must be an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        loads.push_back(load_prior_from_json(list[i], *b.reduced, ctx.base_dir, "prior.loads[" + std::to_string(i) + "]"));
      }
      b.joint = std::make_shared<JointModel>(
          build_joint_model(b.reduced, std::move(loads), error_from_json(section(ctx.config, "error"), b.reduced->gages(), ctx.base_dir)));
    }
  }
  return b;
}

// ---------------------------------------------------------------- simulate

void write_beam_truth(const fs::path& path, const beam::Synthetic& s) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  const Index ng = s.obs.gages();
  f << "time_iso8601,h_plus,h_minus";
  for (const char* part : {"elastic", "thermal", "bias", "noise"}) {
    for (Index g = 0; g < ng; ++g) f << ',' << part << '_' << g;
  }
  f << ",load_normal,load_tangential\n";
  for (Index i = 0; i < s.obs.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    f << io::format_iso8601(s.obs.epoch_seconds + s.obs.times[k] * io::kSecondsPerDay) << ','
      << io::format_double(s.obs.h_plus[k]) << ',' << io::format_double(s.obs.h_minus[k]);
    for (const Matrix* m : {&s.truth.elastic, &s.truth.thermal, &s.truth.bias, &s.truth.noise}) {
      for (Index g = 0; g < ng; ++g) f << ',' << io::format_double((*m)(g, i));
    }
    f << ',' << io::format_double(s.truth.normal(i)) << ',' << io::format_double(s.truth.tangential(i)) << '\n';
  }
}

void write_state_truth(const fs::path& path, const JointModel& model, const PriorDraw& d) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  const Index ng = model.gages();
  f << "time_iso8601,h_plus,h_minus";
  for (const char* part : {"elastic", "thermal", "bias"}) {
    for (Index g = 0; g < ng; ++g) f << ',' << part << '_' << g;
  }
  f << '\n';
  const Matrix tr = model.thermal_rows();
  const Matrix br = model.bias_rows();
  for (Index i = 0; i < d.obs.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double t = d.obs.times[k];
    const ObservationModel om = model.observe(t, d.obs.h_plus[k], d.obs.h_minus[k]);
    const Vector v = d.states.col(i);
    const Vector thermal = tr * v + model.thermal_mean(t);
    const Vector bias = br * v;
    const Vector elastic = om.mean + om.H * v - thermal - bias;
    f << io::format_iso8601(d.obs.epoch_seconds + t * io::kSecondsPerDay) << ','
      << io::format_double(d.obs.h_plus[k]) << ',' << io::format_double(d.obs.h_minus[k]);
    for (const Vector* x : {&elastic, &thermal, &bias}) {
      for (Index g = 0; g < ng; ++g) f << ',' << io::format_double((*x)(g));
    }
    f << '\n';
  }
}

int cmd_simulate(Context& ctx) {
  const ModelSpec spec = model_spec(ctx);
  fs::create_directories(ctx.opt.out_dir);
  if (spec.type == "beam") {
    const beam::Synthetic s = beam::generate_synthetic(spec.beam);
    write_observation_csv(ctx.opt.out_dir / "observations.csv", s.obs);
    write_beam_truth(ctx.opt.out_dir / "truth.csv", s);
    ctx.out << "simulate: beam, " << s.obs.size() << " times, " << s.obs.gages() << " gages\n";
  } else if (spec.type == "gate") {
    const gate::GateModel m = gate::build_gate_model(spec.gate);
    const PriorDraw d = gate::simulate_gate(spec.gate, m);
    write_observation_csv(ctx.opt.out_dir / "observations.csv", d.obs);
    write_state_truth(ctx.opt.out_dir / "truth.csv", *m.joint, d);
    ctx.out << "simulate: gate, " << d.obs.size() << " times, " << d.obs.gages() << " gages\n";
  } else {
    throw ConfigError("field model.type: simulate supports the beam and gate models");
  }
  write_manifest(ctx, {"observations.csv", "truth.csv"});
  return kOk;
}

// ---------------------------------------------------------------- condense

int cmd_condense(Context& ctx) {
  const ModelSpec spec = model_spec(ctx);
  const Built b = build_model(ctx, spec, false);
  const fs::path dir = ctx.opt.out_dir / "bundle";
  write_condense_bundle(dir, *b.reduced, config_hash(ctx));
  write_manifest(ctx, {"bundle/manifest.json"});
  ctx.out << "condense: " << b.reduced->size() << " reduced DOFs, " << b.reduced->gages() << " gages -> "
          << dir.string() << '\n';
  return kOk;
}

// --------------------------------------------------------------------- fit

std::optional<fs::path> observation_path(const Context& ctx) {
  if (!ctx.opt.observations.empty()) return ctx.opt.observations;
  const json run = section(ctx.config, "run");
  if (run.contains("observations")) return resolve(ctx.base_dir, get_or<std::string>(run, "observations", "", "run"));
  return std::nullopt;
}

int cmd_fit(Context& ctx) {
  const json run = section(ctx.config, "run");
  check_keys(run, {"memory_budget_mb", "scratch_dir", "observations", "strain_unit", "export_stride"}, "run");
  const auto t_build = Clock::now();
  const ModelSpec spec = model_spec(ctx);
  Built b = build_model(ctx, spec, true);
  const JointModel& model = *b.joint;
  const double build_s = seconds_since(t_build);

  ObservationSeries obs;
  std::optional<beam::Truth> truth;
  if (const auto path = observation_path(ctx)) {
    if (!fs::exists(*path)) throw ConfigError("observations file not found: " + path->string());
    obs = read_observation_csv(*path, parse_strain_unit(get_or<std::string>(run, "strain_unit", "strain", "run")));
  } else if (spec.type == "beam") {
    beam::Synthetic s = beam::generate_synthetic(spec.beam);
    obs = std::move(s.obs);
    truth = std::move(s.truth);
  } else if (spec.type == "gate") {
    obs = gate::simulate_gate(spec.gate, gate::GateModel{b.reduced, b.joint, 0, 0, 0}).obs;
  } else {
    throw ConfigError("fit needs observations: pass --observations or set run.observations");
  }
  if (obs.gages() != model.gages()) {
    throw ConfigError("observations have " + std::to_string(obs.gages()) + " gages but the model has " +
                      std::to_string(model.gages()));
  }

  fs::create_directories(ctx.opt.out_dir);
  FilterOptions fo;
  fo.memory_budget_bytes = budget_bytes(ctx);
  fo.scratch_dir = run.contains("scratch_dir") ? resolve(ctx.base_dir, get_or<std::string>(run, "scratch_dir", "", "run"))
                                               : ctx.opt.out_dir;
  const auto t_filter = Clock::now();
  FilterResult filtered = kalman_filter(model, obs, fo);
  const double filter_s = seconds_since(t_filter);
  const bool on_disk = filtered.states->on_disk();
  const auto t_smooth = Clock::now();
  PosteriorTrajectory traj = ctx.opt.filter_only ? filtered_trajectory(std::move(filtered))
                                                 : rts_smooth(model, std::move(filtered));
  const double smooth_s = ctx.opt.filter_only ? 0.0 : seconds_since(t_smooth);

  const auto t_export = Clock::now();
  const Index m = traj.size();
  const Index ng = model.gages();
  const int stride_cfg = get_or<int>(run, "export_stride", 0, "run");
  const Index stride = stride_cfg > 0 ? stride_cfg : std::max<Index>(1, (m + 255) / 256);

  // Bias is static: the last record carries every observation in both modes.
  const GaussianState last = traj.state(m - 1);
  const Marginals bias = extract_posterior(model, last, traj.h_plus.back(), traj.h_minus.back(), {"bias", "", {}});
  json bias_report = json::array();
  {
    std::ofstream f(ctx.opt.out_dir / "posterior_bias.csv");
    f << "gage,mean,std" << (truth ? ",truth" : "") << '\n';
    for (Index g = 0; g < ng; ++g) {
      const std::string id = obs.gage_ids.empty() ? "gage_" + std::to_string(g) : obs.gage_ids[static_cast<std::size_t>(g)];
      f << id << ',' << io::format_double(bias.mean(g)) << ',' << io::format_double(bias.stddev(g));
      json e = {{"gage", id}, {"mean", bias.mean(g)}, {"std", bias.stddev(g)}};
      if (truth) {
        const double tv = truth->bias(g, 0);
        f << ',' << io::format_double(tv);
        e["truth"] = tv;
        e["within_2std"] = std::abs(bias.mean(g) - tv) <= 2.0 * bias.stddev(g);
      }
      f << '\n';
      bias_report.push_back(e);
    }
  }

  Index predictive_hits = 0;
  Index predictive_total = 0;
  {
    std::ofstream f(ctx.opt.out_dir / "posterior_strain.csv");
    f << "time_iso8601,time_days,gage,observed,predicted_mean,predicted_std,thermal_mean,thermal_std,elastic_mean,"
         "elastic_std\n";
    for (Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const GaussianState s = traj.state(i);
      const double hp = traj.h_plus[k];
      const double hm = traj.h_minus[k];
      const Marginals pred = extract_posterior(model, s, hp, hm, {"predicted-strain", "", {}});
      const Marginals th = extract_posterior(model, s, hp, hm, {"thermal", "", {}});
      const Marginals el = extract_posterior(model, s, hp, hm, {"elastic", "", {}});
      const std::string stamp = io::format_iso8601(obs.epoch_seconds + traj.times[k] * io::kSecondsPerDay);
      for (Index g = 0; g < ng; ++g) {
        const double y = obs.strains(g, i);
        if (std::isfinite(y)) {
          ++predictive_total;
          const double band = 3.0 * (pred.stddev(g) + std::sqrt(model.noise_variance()(g)));
          if (std::abs(y - pred.mean(g)) <= band) ++predictive_hits;
        }
        f << stamp << ',' << io::format_double(traj.times[k]) << ',' << g << ','
          << (std::isfinite(y) ? io::format_double(y) : std::string()) << ',' << io::format_double(pred.mean(g)) << ','
          << io::format_double(pred.stddev(g)) << ',' << io::format_double(th.mean(g)) << ','
          << io::format_double(th.stddev(g)) << ',' << io::format_double(el.mean(g)) << ','
          << io::format_double(el.stddev(g)) << '\n';
      }
    }
  }

  json load_report = json::array();
  {
    std::ofstream f(ctx.opt.out_dir / "posterior_loads.csv");
    f << "time_iso8601,time_days,side,x,mean,std" << (truth ? ",truth" : "") << '\n';
    for (std::size_t l = 0; l < model.loads().size(); ++l) {
      const LoadPrior& lp = model.loads()[l];
      const std::vector<Point>& pts = lp.spatial.seeds;
      Index hits = 0;
      Index total = 0;
      for (Index i = 0; i < m; ++i) {
        const bool exported = i % stride == 0 || i == m - 1;
        if (!exported && !truth) continue;
        const auto k = static_cast<std::size_t>(i);
        const GaussianState s = traj.state(i);
        const Marginals w = extract_posterior(model, s, traj.h_plus[k], traj.h_minus[k], {"loads", lp.side, pts});
        std::optional<double> tv;
        if (truth && lp.side == "normal") tv = truth->normal(i);
        if (truth && lp.side == "tangential") tv = truth->tangential(i);
        if (tv) {
          for (Index p = 0; p < w.mean.size(); ++p) {
            ++total;
            if (std::abs(w.mean(p) - *tv) <= 2.0 * w.stddev(p)) ++hits;
          }
        }
        if (!exported) continue;
        const std::string stamp = io::format_iso8601(obs.epoch_seconds + traj.times[k] * io::kSecondsPerDay);
        for (Index p = 0; p < w.mean.size(); ++p) {
          f << stamp << ',' << io::format_double(traj.times[k]) << ',' << lp.side << ','
            << io::format_double(pts[static_cast<std::size_t>(p)](0)) << ',' << io::format_double(w.mean(p)) << ','
            << io::format_double(w.stddev(p));
          if (truth) f << ',' << (tv ? io::format_double(*tv) : std::string());
          f << '\n';
        }
      }
      json e = {{"side", lp.side}, {"spatial_modes", lp.spatial.modes()}, {"height_modes", lp.height.modes()}};
      if (total > 0) e["truth_within_2std_fraction"] = static_cast<double>(hits) / static_cast<double>(total);
      load_report.push_back(e);
    }
  }
  const double export_s = seconds_since(t_export);

  json summary = {
      {"model", spec.type},
      {"mode", ctx.opt.filter_only ? "filtered" : "smoothed"},
      {"state_dim", model.state_dim()},
      {"times", m},
      {"gages", ng},
      {"log_evidence", traj.log_evidence},
      {"trajectory_on_disk", on_disk},
      {"memory_budget_mb", static_cast<double>(fo.memory_budget_bytes) / (1024.0 * 1024.0)},
      {"peak_rss_mb", peak_rss_mb()},
      {"seconds", {{"build", build_s}, {"filter", filter_s}, {"smooth", smooth_s}, {"export", export_s}}},
      {"bias", bias_report},
      {"loads", load_report},
      {"predictive_within_band_fraction",
       predictive_total > 0 ? static_cast<double>(predictive_hits) / static_cast<double>(predictive_total) : 1.0},
      {"export_stride", stride},
      {"accounting", model.accounting(m)}};
  io::write_text(ctx.opt.out_dir / "summary.json", summary.dump(2) + "\n");
  write_manifest(ctx, {"posterior_bias.csv", "posterior_strain.csv", "posterior_loads.csv", "summary.json"});
  ctx.out << "fit: " << spec.type << ", state " << model.state_dim() << ", " << m << " times, "
          << (ctx.opt.filter_only ? "filter only" : "smoothed") << ", filter " << filter_s << " s, smoother "
          << smooth_s << " s\n";
  for (const auto& e : bias_report) {
    ctx.out << "  bias " << e["gage"].get<std::string>() << ": " << e["mean"].get<double>() << " +/- "
            << e["std"].get<double>() << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------- validate

RandomJointOptions random_options(const json& j, const std::string& where) {
  RandomJointOptions o;
  o.gages = get_or<Index>(j, "gages", o.gages, where);
  o.side_dofs = get_or<Index>(j, "side_dofs", o.side_dofs, where);
  o.spatial_modes = get_or<Index>(j, "spatial_modes", o.spatial_modes, where);
  o.height_modes = get_or<Index>(j, "height_modes", o.height_modes, where);
  o.periodic_thermal = get_or<bool>(j, "periodic", o.periodic_thermal, where);
  o.time_length = get_or<double>(j, "time_length", o.time_length, where);
  if (o.gages < 1 || o.side_dofs < 1 || o.spatial_modes < 1 || o.height_modes < 1 || o.spatial_modes > o.side_dofs ||
      o.height_modes > 8 || !(o.time_length > 0)) {
    throw ConfigError("field " + where + ": random model sizes are out of range");
  }
  return o;
}

int cmd_validate(Context& ctx) {
  const json v = section(ctx.config, "validate");
  check_keys(v, {"instances", "times", "gages", "side_dofs", "spatial_modes", "height_modes", "periodic", "time_length",
                 "missing", "guard", "tolerance", "seed"},
             "validate");
  const RandomJointOptions o = random_options(v, "validate");
  const int instances = get_or<int>(v, "instances", 3, "validate");
  const Index times = get_or<Index>(v, "times", 40, "validate");
  const double missing = get_or<double>(v, "missing", 0.0, "validate");
  const Index guard = get_or<Index>(v, "guard", kDenseGuard, "validate");
  const double tol = get_or<double>(v, "tolerance", o.periodic_thermal ? 2e-5 : 1e-8, "validate");
  const std::uint64_t seed = ctx.opt.seed.value_or(get_or<std::uint64_t>(v, "seed", 1, "validate"));
  if (instances < 1 || times < 2 || !(missing >= 0 && missing < 1)) throw ConfigError("field validate: bad sizes");

  fs::create_directories(ctx.opt.out_dir);
  json report = {{"tolerance", tol}, {"periodic", o.periodic_thermal}, {"instances", json::array()}};
  if (o.periodic_thermal) {
    report["note"] = "periodic kernels use a truncated harmonic expansion; deviations reflect that truncation";
  }
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng(seed + 7919 * static_cast<std::uint64_t>(i));
    const JointModel model = make_random_joint_model(rng, o);
    const ObservationSeries obs = simulate_random_series(model, times, rng, missing);
    const OracleComparison c = compare_with_oracle(model, obs, guard);
    const double dev = std::max(c.mean_rel, c.variance_rel);
    worst = std::max(worst, dev);
    report["instances"].push_back({{"mean_rel", c.mean_rel},
                                   {"variance_rel", c.variance_rel},
                                   {"covariance_rel", c.covariance_rel},
                                   {"filter_last_rel", c.filter_last_rel},
                                   {"state_dim", c.state_dim},
                                   {"dense_dim", c.dense_dim},
                                   {"times", c.times}});
    ctx.out << "validate: instance " << i << " state " << c.state_dim << " dense " << c.dense_dim
            << " mean_rel " << c.mean_rel << " variance_rel " << c.variance_rel << '\n';
  }
  report["max_relative_deviation"] = worst;
  report["pass"] = worst <= tol;
  report["seconds"] = seconds_since(t0);
  io::write_text(ctx.opt.out_dir / "validate.json", report.dump(2) + "\n");
  write_manifest(ctx, {"validate.json"});
  ctx.out << "validate: max relative deviation " << worst << " (tolerance " << tol << ")"
          << (o.periodic_thermal ? " [periodic truncation]" : "") << '\n';
  if (worst > tol) {
    ctx.err << "validate: deviation exceeds tolerance\n";
    return kNumericalError;
  }
  return kOk;
}

// ------------------------------------------------------------------- bench

int cmd_bench(Context& ctx) {
  const json b = section(ctx.config, "bench");
  check_keys(b, {"sizes", "gages", "side_dofs", "spatial_modes", "height_modes", "periodic", "time_length", "spacing",
                 "repeats", "seed"},
             "bench");
  RandomJointOptions o = random_options(b, "bench");
  const auto sizes = get_or<std::vector<Index>>(b, "sizes", {2000, 4000, 8000}, "bench");
  const double spacing = get_or<double>(b, "spacing", 0.05, "bench");
  const int repeats = get_or<int>(b, "repeats", 1, "bench");
  const std::uint64_t seed = ctx.opt.seed.value_or(get_or<std::uint64_t>(b, "seed", 1, "bench"));
  if (sizes.empty() || repeats < 1 || !(spacing > 0)) throw ConfigError("field bench: bad sizes");
  for (Index n : sizes) {
    if (n < 2) throw ConfigError("field bench.sizes: each size must be at least 2");
  }

  std::mt19937_64 rng(seed);
  const JointModel model = make_random_joint_model(rng, o);
  FilterOptions fo;
  fo.memory_budget_bytes = budget_bytes(ctx);
  fo.scratch_dir = ctx.opt.out_dir;
  fs::create_directories(ctx.opt.out_dir);

  json runs = json::array();
  std::vector<double> walls;
  for (Index n : sizes) {
    std::mt19937_64 data_rng(seed + static_cast<std::uint64_t>(n));
    const ObservationSeries obs = simulate_random_series(model, n, data_rng, 0.0, spacing);
    double best = std::numeric_limits<double>::infinity();
    double evidence = 0.0;
    double checksum = 0.0;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      PosteriorTrajectory traj = rts_smooth(model, kalman_filter(model, obs, fo));
      best = std::min(best, seconds_since(t0));
      evidence = traj.log_evidence;
      checksum = traj.means.sum();
    }
    walls.push_back(best);
    runs.push_back({{"times", n},
                    {"seconds", best},
                    {"per_step_us", 1e6 * best / static_cast<double>(n)},
                    {"log_evidence", evidence},
                    {"mean_checksum", checksum}});
    ctx.out << "bench: N " << n << " " << best << " s (" << 1e6 * best / static_cast<double>(n) << " us/step)\n";
  }
  json ratios = json::array();
  double worst = 0.0;
  for (std::size_t i = 1; i < walls.size(); ++i) {
    const double r = walls[i] / walls[i - 1];
    ratios.push_back(r);
    worst = std::max(worst, r);
  }
  const json report = {{"state_dim", model.state_dim()},
                       {"gages", model.gages()},
                       {"runs", runs},
                       {"ratios", ratios},
                       {"max_ratio", worst},
                       {"linear_within_2_5", worst <= 2.5}};
  io::write_text(ctx.opt.out_dir / "bench.json", report.dump(2) + "\n");
  write_manifest(ctx, {"bench.json"});
  ctx.out << "bench: state " << model.state_dim() << ", max ratio " << worst << '\n';
  return kOk;
}

// --------------------------------------------------------------- kernel2sde

int cmd_kernel2sde(Context& ctx) {
  if (!ctx.config.contains("kernel")) throw ConfigError("field kernel is required");
  const json& kj = ctx.config.at("kernel");
  json spec = kj;
  std::vector<double> lags{0.0, 0.1, 0.25, 0.5, 1.0, 2.0};
  std::vector<double> dts;
  if (kj.is_object() && kj.contains("expr")) {
    check_keys(kj, {"expr", "lags", "dt"}, "kernel");
    spec = kj.at("expr");
    lags = get_or<std::vector<double>>(kj, "lags", lags, "kernel");
    dts = get_or<std::vector<double>>(kj, "dt", dts, "kernel");
  }
  const KernelExpr k = kernel_from_json(spec, ctx.base_dir);
  const LtiSde sde = kernel_to_sde(k);
  json cov = json::array();
  double worst = 0.0;
  for (double tau : lags) {
    const double want = eval(k, 0.0, tau);
    const double got = output_covariance(sde, tau)(0, 0);
    worst = std::max(worst, std::abs(want - got));
    cov.push_back({{"lag", tau}, {"kernel", want}, {"sde", got}});
  }
  json disc = json::array();
  for (double dt : dts) {
    const DiscreteTransition d = discretize(sde, dt);
    disc.push_back({{"dt", dt}, {"Fbar", matrix_json(d.Fbar)}, {"Qbar", matrix_json(d.Qbar)}});
  }
  const json report = {{"kernel", kernel_to_json(k)},
                       {"state_dim", sde.state_dim()},
                       {"F", matrix_json(sde.F)},
                       {"L", matrix_json(sde.L)},
                       {"Q", matrix_json(sde.Q)},
                       {"H", matrix_json(sde.H)},
                       {"P0", matrix_json(sde.P0)},
                       {"m0", vector_json(sde.m0)},
                       {"lyapunov_residual", sde.lyapunov_residual()},
                       {"covariance_check", cov},
                       {"max_covariance_error", worst},
                       {"discretizations", disc}};
  fs::create_directories(ctx.opt.out_dir);
  io::write_text(ctx.opt.out_dir / "sde.json", report.dump(2) + "\n");
  write_manifest(ctx, {"sde.json"});
  ctx.out << "kernel2sde: state " << sde.state_dim() << ", Lyapunov residual " << sde.lyapunov_residual()
          << ", max covariance error " << worst << '\n';
  return kOk;
}

int dispatch(Context& ctx) {
  const std::string& c = ctx.opt.command;
  if (c == "simulate") return cmd_simulate(ctx);
  if (c == "condense") return cmd_condense(ctx);
  if (c == "fit") return cmd_fit(ctx);
  if (c == "validate") return cmd_validate(ctx);
  if (c == "bench") return cmd_bench(ctx);
  return cmd_kernel2sde(ctx);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"State-space Gaussian process inference for strain-gage monitoring", "ssgp"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options opt;
  std::string config, out_dir = opt.out_dir.string(), observations;
  std::uint64_t seed = 0;
  double budget = 0.0;
  app.add_option("--config", config, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "random seed override");
  auto* budget_opt = app.add_option("--memory-budget", budget, "trajectory memory budget in MB");
  app.add_flag("--filter-only", opt.filter_only, "skip the backward smoothing pass");
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {{"simulate", "generate synthetic observations and truth"},
                      {"condense", "condense a stiffness model onto boundary and gage DOFs"},
                      {"fit", "filter and smooth observations, export posteriors"},
                      {"validate", "compare the smoother against dense conditioning"},
                      {"bench", "measure smoothing time against the number of observation times"},
                      {"kernel2sde", "convert a kernel to its state-space form"}};
  for (const Sub& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    if (std::string(s.name) == "fit") sc->add_option("--observations", observations, "observation CSV");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "ssgp: " << e.what() << '\n';
    return kInputError;
  }
  opt.command = app.get_subcommands().front()->get_name();
  opt.config_path = config;
  opt.out_dir = out_dir;
  opt.observations = observations;
  if (seed_opt->count() > 0) opt.seed = seed;
  if (budget_opt->count() > 0) opt.budget_mb = budget;

  try {
    Context ctx{opt, load_config(opt.config_path), opt.config_path.parent_path(), out, err};
    return dispatch(ctx);
  } catch (const SizeError& e) {
    err << "ssgp " << opt.command << ": guard exceeded: " << e.what() << '\n';
    return kNumericalError;
  } catch (const NumericalError& e) {
    err << "ssgp " << opt.command << ": numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const ConfigError& e) {
    err << "ssgp " << opt.command << ": " << e.what() << '\n';
    return kInputError;
  } catch (const DomainError& e) {
    err << "ssgp " << opt.command << ": invalid input: " << e.what() << '\n';
    return kInputError;
  } catch (const ConstructionError& e) {
    err << "ssgp " << opt.command << ": invalid model: " << e.what() << '\n';
    return kInputError;
  } catch (const json::exception& e) {
    err << "ssgp " << opt.command << ": " << e.what() << '\n';
    return kInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "ssgp " << opt.command << ": " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "ssgp " << opt.command << ": " << e.what() << '\n';
    return kNumericalError;
  }
}

}  // namespace ssgp::cli
