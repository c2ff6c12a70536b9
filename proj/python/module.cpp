#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "ssgp/condense.hpp"
#include "ssgp/error.hpp"
#include "ssgp/kernel_json.hpp"
#include "ssgp/klreduce.hpp"
#include "ssgp/oracle.hpp"
#include "ssgp/random_model.hpp"
#include "ssgp/simbeam.hpp"
#include "ssgp/smoother.hpp"
#include "ssgp/statespace.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace ssgp;

namespace {

json to_json(const py::object& obj) {
  if (obj.is_none()) return json::object();
  const std::string text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return json::parse(text);
}

KernelExpr kernel_of(const py::object& obj) { return kernel_from_json(to_json(obj)); }

std::vector<Point> points_of(const Matrix& seeds) {
  std::vector<Point> out;
  for (Index i = 0; i < seeds.rows(); ++i) out.emplace_back(seeds.row(i).transpose());
  return out;
}

py::dict sde_dict(const LtiSde& s) {
  py::dict d;
  d["F"] = s.F;
  d["L"] = s.L;
  d["Q"] = s.Q;
  d["H"] = s.H;
  d["P0"] = s.P0;
  d["m0"] = s.m0;
  d["lyapunov_residual"] = s.lyapunov_residual();
  return d;
}

py::dict series_dict(const ObservationSeries& s) {
  py::dict d;
  d["times"] = s.times;
  d["h_plus"] = s.h_plus;
  d["h_minus"] = s.h_minus;
  d["strains"] = s.strains;
  d["gage_ids"] = s.gage_ids;
  d["epoch_seconds"] = s.epoch_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ssgp, m) {
  m.doc() = "State-space Gaussian process inference for strain-gage monitoring.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConstructionError>(m, "ConstructionError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<SizeError>(m, "SizeError", PyExc_MemoryError);

  m.def("kernel_eval", [](const py::object& k, double a, double b) { return eval(kernel_of(k), a, b); },
        py::arg("kernel"), py::arg("a"), py::arg("b"));

  m.def("kernel_to_sde", [](const py::object& k) { return sde_dict(kernel_to_sde(kernel_of(k))); }, py::arg("kernel"),
        "State-space form of a kernel given as a JSON-style dict.");

  m.def(
      "sde_covariance",
      [](const py::object& k, double tau) { return output_covariance(kernel_to_sde(kernel_of(k)), tau); },
      py::arg("kernel"), py::arg("tau"));

  m.def(
      "discretize",
      [](const py::object& k, double dt) {
        const DiscreteTransition t = discretize(kernel_to_sde(kernel_of(k)), dt);
        return py::make_tuple(t.Fbar, t.Qbar);
      },
      py::arg("kernel"), py::arg("dt"));

  m.def(
      "nystrom",
      [](const py::object& k, const Matrix& seeds, const Vector& weights, std::optional<double> energy,
         std::optional<Index> modes) {
        KlBasis b = nystrom_eig(kernel_of(k), points_of(seeds), weights);
        if (modes) {
          b = truncate_count(b, *modes);
        } else if (energy) {
          b = truncate_energy(b, *energy);
        }
        py::dict d;
        d["eigenvalues"] = b.eigenvalues;
        d["eigenvectors"] = b.eigenvectors;
        d["captured_fraction"] = b.captured_fraction();
        return d;
      },
      py::arg("kernel"), py::arg("seeds"), py::arg("weights"), py::arg("energy") = py::none(),
      py::arg("modes") = py::none(), "Nyström KL basis; seeds are rows of an (n, d) array.");

  m.def(
      "condense",
      [](const SparseMatrix& k, const SparseMatrix& b, const std::vector<Index>& retained) {
        std::vector<ReducedDof> dofs;
        for (Index i : retained) dofs.push_back(ReducedDof{i, "boundary", {0.0, 0.0, 0.0}});
        const ReducedElasticModel r =
            schur_reduce(k, b, dofs, LevelTable({0.0}, {0.0}, Matrix::Zero(k.rows(), 1)));
        std::vector<Index> kept;
        for (const ReducedDof& d : r.dofs) kept.push_back(d.full_index);
        py::dict out;
        out["Kr"] = r.Kr;
        out["Br"] = r.Br;
        out["Gr"] = r.Gr;
        out["dofs"] = kept;
        return out;
      },
      py::arg("K"), py::arg("B"), py::arg("retained"),
      "Static condensation onto the retained DOFs plus every DOF touched by B.");

  m.def(
      "simulate_beam",
      [](const py::object& config) {
        const beam::Synthetic s = beam::generate_synthetic(beam::config_from_json(to_json(config)));
        py::dict d = series_dict(s.obs);
        d["elastic"] = s.truth.elastic;
        d["thermal"] = s.truth.thermal;
        d["bias"] = s.truth.bias;
        d["noise"] = s.truth.noise;
        d["load_normal"] = s.truth.normal;
        d["load_tangential"] = s.truth.tangential;
        return d;
      },
      py::arg("config") = py::none(), "Synthetic beam record with its truth components.");

  m.def(
      "fit_beam",
      [](const py::object& config, const py::object& prior, bool filter_only, double memory_budget_mb) {
        const beam::BeamConfig c = beam::config_from_json(to_json(config));
        const beam::BeamModel model =
            beam::build_beam_model(c, beam::assemble_beam_fem(c), beam::prior_from_json(to_json(prior)));
        const beam::Synthetic s = beam::generate_synthetic(c);
        FilterOptions fo;
        fo.memory_budget_bytes = static_cast<std::size_t>(memory_budget_mb * 1024.0 * 1024.0);
        PosteriorTrajectory traj;
        {
          py::gil_scoped_release release;
          FilterResult f = kalman_filter(*model.joint, s.obs, fo);
          traj = filter_only ? filtered_trajectory(std::move(f)) : rts_smooth(*model.joint, std::move(f));
        }
        const Index n = traj.size();
        const GaussianState last = traj.state(n - 1);
        const Marginals bias =
            extract_posterior(*model.joint, last, traj.h_plus.back(), traj.h_minus.back(), {"bias", "", {}});
        Matrix pm(model.joint->gages(), n), ps(model.joint->gages(), n);
        for (Index i = 0; i < n; ++i) {
          const auto k = static_cast<std::size_t>(i);
          const Marginals p = extract_posterior(*model.joint, traj.state(i), traj.h_plus[k], traj.h_minus[k],
                                                {"predicted-strain", "", {}});
          pm.col(i) = p.mean;
          ps.col(i) = p.stddev;
        }
        py::dict d;
        d["state_dim"] = model.joint->state_dim();
        d["log_evidence"] = traj.log_evidence;
        d["bias_mean"] = bias.mean;
        d["bias_std"] = bias.stddev;
        d["bias_truth"] = Vector(s.truth.bias.col(0));
        d["predicted_mean"] = pm;
        d["predicted_std"] = ps;
        d["observations"] = s.obs.strains;
        return d;
      },
      py::arg("config") = py::none(), py::arg("prior") = py::none(), py::arg("filter_only") = false,
      py::arg("memory_budget_mb") = 1024.0, "Simulates the beam record and fits it.");

  m.def(
      "validate_random",
      [](std::uint64_t seed, Index times, bool periodic) {
        std::mt19937_64 rng(seed);
        RandomJointOptions o;
        o.periodic_thermal = periodic;
        const JointModel model = make_random_joint_model(rng, o);
        const ObservationSeries obs = simulate_random_series(model, times, rng);
        const OracleComparison c = compare_with_oracle(model, obs);
        py::dict d;
        d["mean_rel"] = c.mean_rel;
        d["variance_rel"] = c.variance_rel;
        d["covariance_rel"] = c.covariance_rel;
        d["state_dim"] = c.state_dim;
        d["dense_dim"] = c.dense_dim;
        return d;
      },
      py::arg("seed") = 1, py::arg("times") = 40, py::arg("periodic") = false,
      "Smoother against dense conditioning on a random small model.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");
}
