// Acceptance driver: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. Arguments select a subset by number.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ssgp/condense.hpp"
#include "ssgp/gate.hpp"
#include "ssgp/klreduce.hpp"
#include "ssgp/oracle.hpp"
#include "ssgp/random_model.hpp"
#include "ssgp/simbeam.hpp"
#include "ssgp/smoother.hpp"
#include "ssgp/statespace.hpp"

using namespace ssgp;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Peak resident set in MiB since the last reset.
double peak_rss_mb() {
  std::ifstream f("/proc/self/status");
  std::string line;
  while (std::getline(f, line))
    if (line.rfind("VmHWM:", 0) == 0) return std::stod(line.substr(6)) / 1024.0;
  return -1.0;
}

void reset_peak_rss() {
  std::ofstream f("/proc/self/clear_refs");
  f << "5";
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "" : "!") + what);
  }
};

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix a(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) a(i, j) = g(rng);
  return a;
}

// 1. Smoother against dense conditioning.
Outcome oracle_equivalence() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_exact = 0.0;
  double worst_periodic = 0.0;
  Index exact_state = 0;
  Index periodic_state = 0;
  for (int periodic = 0; periodic < 2; ++periodic) {
    for (std::uint64_t i = 0; i < 3; ++i) {
      std::mt19937_64 rng(101 + 7919 * i + 31 * static_cast<std::uint64_t>(periodic));
      RandomJointOptions opt;
      opt.periodic_thermal = periodic == 1;
      const JointModel model = make_random_joint_model(rng, opt);
      const ObservationSeries obs = simulate_random_series(model, 80, rng, 0.1);
      const OracleComparison c = compare_with_oracle(model, obs);
      const double dev = std::max(c.mean_rel, c.variance_rel);
      if (periodic == 1) {
        worst_periodic = std::max(worst_periodic, dev);
        periodic_state = std::max(periodic_state, c.state_dim);
      } else {
        worst_exact = std::max(worst_exact, dev);
        exact_state = std::max(exact_state, c.state_dim);
        o.check(c.state_dim <= 30, "state " + std::to_string(c.state_dim) + " <= 30");
      }
    }
  }
  const double secs = seconds_since(t0);
  o.check(worst_exact <= 1e-8, "matern-only max rel " + sci(worst_exact) + " <= 1e-8");
  o.check(worst_periodic <= 2e-5, "periodic max rel " + sci(worst_periodic) + " <= 2e-5");
  o.check(secs < 10.0, "runtime " + sci(secs) + " s < 10 s");
  o.notes.push_back("3+3 instances, 80 times, state " + std::to_string(exact_state) + " (periodic " +
                    std::to_string(periodic_state) + ")");
  return o;
}

// 2. Beam bias and load recovery.
Outcome beam_experiment() {
  Outcome o;
  const auto t0 = Clock::now();
  const beam::BeamConfig c;
  const beam::BeamPrior prior;
  const beam::BeamModel model = beam::build_beam_model(c, beam::assemble_beam_fem(c), prior);
  const beam::Synthetic s = beam::generate_synthetic(c);
  PosteriorTrajectory traj = rts_smooth(*model.joint, kalman_filter(*model.joint, s.obs));
  const JointModel& j = *model.joint;
  const Index n = traj.size();
  const GaussianState last = traj.state(n - 1);
  const Marginals bias = extract_posterior(j, last, traj.h_plus.back(), traj.h_minus.back(), {"bias", "", {}});
  const double table[3] = {4.4e-5, 4.5e-5, 4.6e-5};
  for (Index g = 0; g < 3; ++g) {
    const double truth = s.truth.bias(g, 0);
    const double dev = std::abs(bias.mean(g) - truth);
    o.check(dev <= 2.0 * bias.stddev(g), "gage " + std::to_string(g) + " |" + sci(bias.mean(g)) + " - " +
                                             sci(truth) + "| <= 2*" + sci(bias.stddev(g)));
    const double ratio = std::max(bias.stddev(g) / table[g], table[g] / bias.stddev(g));
    o.check(ratio <= 3.0, "std ratio " + sci(ratio) + " <= 3");
  }
  for (const LoadPrior& lp : j.loads()) {
    Index hits = 0;
    Index total = 0;
    const Vector& truth = lp.side == "normal" ? s.truth.normal : s.truth.tangential;
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Marginals w =
          extract_posterior(j, traj.state(i), traj.h_plus[k], traj.h_minus[k], {"loads", lp.side, lp.spatial.seeds});
      for (Index p = 0; p < w.mean.size(); ++p) {
        ++total;
        if (std::abs(w.mean(p) - truth(i)) <= 2.0 * w.stddev(p)) ++hits;
      }
    }
    const double frac = static_cast<double>(hits) / static_cast<double>(std::max<Index>(total, 1));
    o.check(frac >= 0.9, lp.side + " load inside 2 sd " + sci(100.0 * frac) + "% >= 90%");
  }
  const double secs = seconds_since(t0);
  o.check(secs < 120.0, "runtime " + sci(secs) + " s < 120 s");
  return o;
}

// 3. Smoothing time per observation count.
Outcome linear_scaling() {
  Outcome o;
  std::mt19937_64 rng(77);
  RandomJointOptions opt;
  opt.gages = 6;
  opt.side_dofs = 8;
  opt.spatial_modes = 4;
  opt.height_modes = 3;
  const JointModel model = make_random_joint_model(rng, opt);
  std::vector<double> best;
  for (Index n : {2000, 4000, 8000}) {
    std::mt19937_64 r(5);
    const ObservationSeries obs = simulate_random_series(model, n, r);
    double t_min = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = Clock::now();
      PosteriorTrajectory p = rts_smooth(model, kalman_filter(model, obs));
      t_min = std::min(t_min, seconds_since(t0));
    }
    best.push_back(t_min);
  }
  for (std::size_t i = 1; i < best.size(); ++i) {
    const double ratio = best[i] / best[i - 1];
    o.check(ratio <= 2.5, "t(" + std::to_string(2000 << i) + ")/t(" + std::to_string(2000 << (i - 1)) + ") = " +
                              sci(ratio) + " <= 2.5");
  }
  o.notes.push_back("state " + std::to_string(model.state_dim()) + ", seconds " + sci(best[0]) + "/" + sci(best[1]) +
                    "/" + sci(best[2]));
  return o;
}

// 4. Gate-scale filter and smoother with the streaming store.
Outcome at_scale() {
  Outcome o;
  const gate::GateConfig c;
  const gate::GateModel m = gate::build_gate_model(c);
  const JointModel& j = *m.joint;
  o.check(j.gages() == 14, "14 gages");
  for (const LoadPrior& lp : j.loads()) o.check(lp.spatial.modes() == 35, lp.side + " 35 spatial modes");
  o.check(c.noise_var == 9.0, "noise variance 9 microstrain^2");
  const PriorDraw d = gate::simulate_gate(c, m);
  o.check(d.obs.strains.cols() == 2200, std::to_string(d.obs.strains.cols()) + " times");

  const std::size_t budget = std::size_t{1024} << 20;
  const auto scratch = std::filesystem::temp_directory_path() / ("ssgp_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(scratch);
  FilterOptions fo;
  fo.memory_budget_bytes = budget;
  fo.scratch_dir = scratch;
  reset_peak_rss();
  const double baseline = peak_rss_mb();
  const auto t0 = Clock::now();
  bool on_disk = false;
  double trace_mid = 0.0;
  {
    FilterResult f = kalman_filter(j, d.obs, fo);
    on_disk = f.states->on_disk();
    PosteriorTrajectory p = rts_smooth(j, std::move(f));
    trace_mid = p.state(p.size() / 2).cov.trace();
  }
  const double secs = seconds_since(t0);
  const double peak = peak_rss_mb();
  std::filesystem::remove_all(scratch);
  o.check(std::isfinite(trace_mid) && trace_mid > 0.0, "finite smoothed covariance");
  o.check(on_disk, "trajectory streamed to disk");
  o.check(secs < 1800.0, "filter+smoother " + sci(secs) + " s < 1800 s");
  o.check(peak >= 0.0 && peak < 1024.0, "peak RSS " + sci(peak) + " MiB < 1024 MiB budget");
  o.notes.push_back("state " + std::to_string(j.state_dim()) + ", RSS before run " + sci(baseline) + " MiB");
  return o;
}

// 5. Kernel to SDE conversion and discretization.
Outcome kernel_sde() {
  Outcome o;
  struct Case {
    KernelExpr k;
    double variance;
    double horizon;
    double tol;
  };
  std::vector<Case> cases;
  for (MaternNu nu : {MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves})
    for (double len : {0.05, 1.0, 7.0}) cases.push_back({KernelExpr::matern(nu, len, 2.3), 2.3, 5.0 * len, 1e-8});
  cases.push_back({KernelExpr::product({KernelExpr::periodic(1.0, 0.7, 1.0), KernelExpr::matern(1.5, 3.0, 1.0)}),
                   1.0, 15.0, 2e-5});
  const gate::ThermalSpec thermal;
  cases.push_back({thermal.kernel(1.0), 225.0 + 900.0, 5.0 * thermal.trend_length, 2e-5});
  const beam::BeamPrior bp;
  cases.push_back({bp.thermal_kernel, 1.0, 25.0, 2e-5});

  double worst_cov = 0.0;
  double worst_lyap = 0.0;
  double worst_stat = 0.0;
  double worst_half = 0.0;
  bool cov_ok = true;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-6.0, 3.0);
  for (const Case& cs : cases) {
    const LtiSde sde = kernel_to_sde(cs.k);
    double err = 0.0;
    for (int i = 0; i <= 500; ++i) {
      const double tau = cs.horizon * i / 500.0;
      err = std::max(err, std::abs(output_covariance(sde, tau)(0, 0) - eval(cs.k, 0.0, tau)));
    }
    cov_ok = cov_ok && err <= cs.tol * cs.variance;
    worst_cov = std::max(worst_cov, err / cs.variance / cs.tol);
    worst_lyap = std::max(worst_lyap, sde.lyapunov_residual() / std::max(1.0, sde.P0.norm()));
    for (int trial = 0; trial < 6; ++trial) {
      const double dt = std::pow(10.0, u(rng));
      const DiscreteTransition full = discretize(sde, dt);
      const DiscreteTransition half = discretize(sde, dt / 2.0);
      worst_half = std::max(worst_half, rel(full.Fbar, half.Fbar * half.Fbar));
      worst_half = std::max(worst_half, rel(full.Qbar, half.Fbar * half.Qbar * half.Fbar.transpose() + half.Qbar));
      worst_stat = std::max(worst_stat, rel(full.Fbar * sde.P0 * full.Fbar.transpose() + full.Qbar, sde.P0));
    }
  }
  o.check(cov_ok, "covariance reproduction, worst error " + sci(worst_cov) + " of its tolerance");
  o.check(worst_lyap <= 1e-8, "Lyapunov residual " + sci(worst_lyap) + " <= 1e-8");
  o.check(worst_stat <= 1e-10, "stationarity " + sci(worst_stat) + " <= 1e-10");
  o.check(worst_half <= 1e-10, "half-step composition " + sci(worst_half) + " <= 1e-10");
  o.notes.push_back(std::to_string(cases.size()) + " kernels");
  return o;
}

// 6. Nyström KL basis.
Outcome kl_suite() {
  Outcome o;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  std::uniform_real_distribution<double> uw(0.02, 0.2);
  std::vector<Point> seeds;
  Vector w(60);
  for (Index i = 0; i < 60; ++i) {
    seeds.push_back(point(u(rng)));
    w(i) = uw(rng);
  }

  double worst_eig = 0.0;
  double worst_rec = 0.0;
  double worst_interp = 0.0;
  const gate::GateConfig gc;
  const KlBasis gate_basis = gate::spatial_basis(gc);
  const std::vector<std::pair<KernelExpr, KlBasis>> bases = {
      {KernelExpr::matern(1.5, 0.7, 1.3), nystrom_eig(KernelExpr::matern(1.5, 0.7, 1.3), seeds, w)},
      {KernelExpr::matern(2.5, 0.4, 2.0), nystrom_eig(KernelExpr::matern(2.5, 0.4, 2.0), seeds, w)},
      {gate::spatial_kernel(gc), nystrom_eig(gate::spatial_kernel(gc), gate_basis.seeds, gate_basis.weights)}};
  for (const auto& [k, b] : bases) {
    const Matrix g = gram(k, b.seeds);
    const Matrix gw = g * b.weights.asDiagonal();
    Eigen::EigenSolver<Matrix> es(gw, false);
    std::vector<double> ns;
    for (Index i = 0; i < es.eigenvalues().size(); ++i) ns.push_back(es.eigenvalues()[i].real());
    std::sort(ns.rbegin(), ns.rend());
    const double l1 = b.eigenvalues(0);
    for (Index i = 0; i < b.modes(); ++i)
      worst_eig = std::max(worst_eig, std::abs(b.eigenvalues(i) - std::max(ns[static_cast<std::size_t>(i)], 0.0)) / l1);

    const Vector sw = b.weights.cwiseSqrt();
    for (Index kk = 0; kk <= b.modes(); kk += std::max<Index>(1, b.modes() / 20)) {
      const KlBasis t = truncate_count(b, kk);
      const Matrix rec = t.eigenvectors * t.eigenvalues.asDiagonal() * t.eigenvectors.transpose();
      const double err = (sw.asDiagonal() * (g - rec) * sw.asDiagonal()).norm();
      worst_rec = std::max(worst_rec, err - (b.eigenvalues.tail(b.modes() - kk).sum() + 1e-8));
    }

    const KlBasis t = truncate_energy(b, 0.999);
    for (Index kk = 0; kk < t.modes(); ++kk) {
      const double scale = t.eigenvectors.col(kk).cwiseAbs().maxCoeff();
      for (std::size_t i = 0; i < t.seeds.size(); ++i)
        worst_interp = std::max(
            worst_interp, std::abs(kl_interpolate(t, t.seeds[i], kk) - t.eigenvectors(static_cast<Index>(i), kk)) / scale);
    }
  }
  o.check(worst_eig <= 1e-10, "symmetric vs nonsymmetric eigenvalues " + sci(worst_eig) + " <= 1e-10");
  o.check(worst_rec <= 0.0, "reconstruction excess over discarded mass + 1e-8: " + sci(std::max(worst_rec, 0.0)));
  o.check(worst_interp <= 1e-10, "seed interpolation " + sci(worst_interp) + " <= 1e-10");
  o.check(gate_basis.modes() >= 20 && gate_basis.modes() <= 60,
          "gate 95% energy keeps " + std::to_string(gate_basis.modes()) + " modes in [20, 60]");
  return o;
}

// 7. Static condensation.
Outcome condensation() {
  Outcome o;
  std::mt19937_64 rng(4);
  double worst_random = 0.0;
  for (Index n : {40, 80, 160}) {
    for (int trial = 0; trial < 3; ++trial) {
      const Matrix a = random_matrix(n, n, rng);
      const Matrix kd = a * a.transpose() + 5.0 * Matrix::Identity(n, n);
      Matrix bs = Matrix::Zero(4, n);
      const Matrix bd = random_matrix(4, n, rng);
      for (Index c = n - 9; c < n; c += 2) bs.col(c) = bd.col(c);
      std::vector<ReducedDof> dofs;
      for (Index i = 0; i < n / 5; ++i) dofs.push_back(ReducedDof{i * 2, "quoin", {static_cast<double>(i), 0.0, 0.0}});
      const Matrix hyd = random_matrix(n, 2, rng);
      const LevelTable hydro({0.0, 1.0}, {0.0}, hyd);
      const ReducedElasticModel m = schur_reduce(kd.sparseView(), bs.sparseView(), dofs, hydro);
      Vector wr = Vector::Zero(m.size());
      const auto quoin = m.side_indices("quoin");
      for (Index q : quoin) wr(q) = random_matrix(1, 1, rng)(0, 0);
      const double h = 0.35;
      Vector f = (1.0 - h) * hyd.col(0) + h * hyd.col(1);
      for (Index i = 0; i < m.size(); ++i) f(m.dofs[static_cast<std::size_t>(i)].full_index) += wr(i);
      const Vector full = bs * kd.ldlt().solve(f);
      worst_random = std::max(worst_random, (m.reduced_strain(h, 0.0, wr) - full).norm() / full.norm());
    }
  }
  o.check(worst_random <= 1e-10, "random SPD reduced vs full " + sci(worst_random) + " <= 1e-10");

  const beam::BeamConfig c;
  const beam::BeamFem fem = beam::assemble_beam_fem(c);
  const beam::BeamModel bm = beam::build_beam_model(c, fem, beam::BeamPrior{});
  const auto normal = bm.reduced->side_indices("normal");
  const auto tangential = bm.reduced->side_indices("tangential");
  double worst_beam = 0.0;
  for (double h : {0.3, 0.55, 0.9}) {
    for (auto [wn, wt] : {std::pair{0.0, -5e6}, std::pair{1e6, 2e5}, std::pair{-3e6, 0.0}}) {
      Vector wr = Vector::Zero(bm.reduced->size());
      for (std::size_t k = 0; k < normal.size(); ++k) {
        wr(normal[k]) = -fem.left_tributary(static_cast<Index>(k)) * wn;
        wr(tangential[k]) = fem.left_tributary(static_cast<Index>(k)) * wt;
      }
      const Vector f = c.hydro_pressure * h * fem.hydro_unit + wn * fem.normal_unit + wt * fem.tangential_unit;
      const Vector full = fem.B * beam::solve_displacement(fem, f);
      worst_beam = std::max(worst_beam, (bm.reduced->reduced_strain(h, 0.0, wr) - full).norm() / full.norm());
    }
  }
  o.check(worst_beam <= 1e-9, "beam reduced vs full " + sci(worst_beam) + " <= 1e-9");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "oracle equivalence", oracle_equivalence}, {2, "beam experiment", beam_experiment},
      {3, "linear scaling", linear_scaling},         {4, "at-scale run", at_scale},
      {5, "kernel/SDE suite", kernel_sde},           {6, "KL suite", kl_suite},
      {7, "condensation suite", condensation}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << " (" << sci(seconds_since(t0)) << " s)";
    for (const std::string& n : o.notes) line << "; " << n;
    std::cout << line.str() << std::endl;
    if (!o.pass) ++failed;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed;
}
