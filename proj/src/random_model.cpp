#include "ssgp/random_model.hpp"

#include <limits>
#include <memory>

#include "ssgp/klreduce.hpp"

namespace ssgp {
namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix a(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) a(i, j) = g(rng);
  return a;
}

Matrix random_spd(Index n, std::mt19937_64& rng, double shift) {
  const Matrix a = random_matrix(n, n, rng);
  return a * a.transpose() + shift * Matrix::Identity(n, n);
}

LevelTable level_table(Index rows, std::mt19937_64& rng, double scale) {
  const std::vector<double> hp{0.0, 0.5, 1.0};
  const std::vector<double> hm{0.0, 1.0};
  return LevelTable(hp, hm, scale * random_matrix(rows, 6, rng));
}

}  // namespace

JointModel make_random_joint_model(std::mt19937_64& rng, const RandomJointOptions& opt) {
  const Index ns = opt.side_dofs;
  const Index n_gage_dofs = opt.gages + 1;
  const Index nr = 2 * ns + n_gage_dofs;
  std::vector<ReducedDof> dofs;
  for (Index i = 0; i < ns; ++i) dofs.push_back({i, "quoin", {static_cast<double>(i) / static_cast<double>(ns), 0, 0}});
  for (Index i = 0; i < ns; ++i) dofs.push_back({ns + i, "miter", {static_cast<double>(i) / static_cast<double>(ns), 1, 0}});
  for (Index i = 0; i < n_gage_dofs; ++i) dofs.push_back({2 * ns + i, "gage", {0.5, 0.5, 0}});
  Matrix br = Matrix::Zero(opt.gages, nr);
  br.rightCols(n_gage_dofs) = random_matrix(opt.gages, n_gage_dofs, rng);
  auto reduced = std::make_shared<ReducedElasticModel>(
      make_reduced_model(random_spd(nr, rng, 2.0), br, level_table(nr, rng, 1.0), dofs));

  std::vector<LoadPrior> loads;
  if (opt.with_loads) {
    for (const char* side : {"quoin", "miter"}) {
      LoadPrior lp;
      lp.side = side;
      lp.mean = level_table(ns, rng, 0.5);
      lp.projection = Vector::Constant(ns, 1.0 / static_cast<double>(ns));
      std::vector<Point> seeds;
      for (Index i = 0; i < ns; ++i) seeds.push_back(point(static_cast<double>(i) / static_cast<double>(ns)));
      const KlBasis sx = nystrom_eig(KernelExpr::matern(1.5, 0.5, 1.0), seeds,
                                     equal_weights(static_cast<std::size_t>(ns), 1.0));
      lp.spatial = truncate_count(sx, opt.spatial_modes);
      const KlBasis sh =
          nystrom_eig(KernelExpr::matern(2.5, 0.6, 1.0), left_point_grid(0.0, 1.0, 8), equal_weights(8, 1.0));
      lp.height = truncate_count(sh, opt.height_modes);
      lp.time_kernel = KernelExpr::matern(std::string(side) == "quoin" ? 0.5 : 1.5, opt.time_length, 1.0);
      loads.push_back(std::move(lp));
    }
  }

  std::vector<KernelExpr> thermal;
  for (Index i = 0; i < opt.gages; ++i) {
    const double len = 0.3 + 0.1 * static_cast<double>(i);
    if (opt.periodic_thermal) {
      thermal.push_back(KernelExpr::sum({KernelExpr::product({KernelExpr::periodic(1.0, 0.8, 1.0),
                                                              KernelExpr::matern(1.5, 3.0, 0.7)}),
                                         KernelExpr::matern(0.5, len, 0.3)}));
    } else {
      thermal.push_back(KernelExpr::matern(i % 2 == 0 ? 1.5 : 0.5, len, 1.0));
    }
  }
  std::vector<double> sig;
  for (Index i = 0; i < opt.gages; ++i) sig.push_back(0.5 + 0.25 * static_cast<double>(i));
  ErrorModel err{CoregionalModel(CoregionalModel::equicorrelated(sig, 0.4), thermal),
                 0.2 * random_spd(opt.gages, rng, 0.5), Vector::Constant(opt.gages, 0.05), std::nullopt};
  return build_joint_model(reduced, std::move(loads), std::move(err));
}

ObservationSeries simulate_random_series(const LinearGaussianModel& model, Index times, std::mt19937_64& rng,
                                         double missing, double spacing) {
  const auto sde = model.dynamics();
  const Index n = sde->dim();
  const Vector noise = model.noise_variance();
  const Index ng = noise.size();
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](Index k) {
    Vector z(k);
    for (Index i = 0; i < k; ++i) z(i) = g(rng);
    return z;
  };
  ObservationSeries s;
  s.strains.resize(ng, times);
  Vector v = sde->initial_mean() + psd_sqrt(sde->stationary_cov()) * draw(n);
  double t = 0.0;
  for (Index i = 0; i < times; ++i) {
    if (i > 0) {
      const double dt = spacing * (0.5 + u(rng));
      const BlockTransition tr = sde->discretize(dt);
      v = tr.apply(v) + psd_sqrt(tr.dense_qbar()) * draw(n);
      t += dt;
    }
    s.times.push_back(t);
    s.h_plus.push_back(0.1 + 0.8 * u(rng));
    s.h_minus.push_back(0.1 + 0.8 * u(rng));
    const ObservationModel om = model.observe(t, s.h_plus.back(), s.h_minus.back());
    const Vector y = om.mean + om.H * v + noise.cwiseSqrt().cwiseProduct(draw(ng));
    for (Index k = 0; k < ng; ++k) {
      s.strains(k, i) = u(rng) < missing ? std::numeric_limits<double>::quiet_NaN() : y(k);
    }
  }
  return s;
}

}  // namespace ssgp
