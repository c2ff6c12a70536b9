#include <cmath>

#include "joint_fixture.hpp"
#include "ssgp/assembly.hpp"
#include "ssgp/error.hpp"

using namespace ssgp;

namespace {

// Strain covariance between (t, h) and (t′, h′) straight from the kernels.
Matrix kernel_strain_cov(const JointModel& m, double dt, double h1, double h2) {
  const auto ch = m.channels();
  const Matrix map1 = m.channel_output_map(h1, 0.0);
  const Matrix map2 = m.channel_output_map(h2, 0.0);
  Index total = 0;
  for (const auto& c : ch) total += c.scale.rows();
  Matrix k = Matrix::Zero(total, total);
  Index off = 0;
  for (const auto& c : ch) {
    const Index d = c.scale.rows();
    k.block(off, off, d, d) = c.scale * c.kernel.at_lag(dt);
    off += d;
  }
  return map1 * k * map2.transpose();
}

}  // namespace

TEST_CASE("state dimension follows block counting") {
  std::mt19937_64 rng(11);
  const JointModel m = test::make_small_joint_model(rng);
  const Index ng = m.gages();
  // Thermal Matérn orders alternate 3/2, 1/2, 3/2; quoin time kernel ν = 1/2, miter ν = 3/2.
  const Index d_thermal = 2 + 1 + 2;
  const Index quoin_pairs = static_cast<Index>(retained_pairs(m.loads()[0].spatial.eigenvalues, m.loads()[0].height.eigenvalues).size());
  const Index miter_pairs = static_cast<Index>(retained_pairs(m.loads()[1].spatial.eigenvalues, m.loads()[1].height.eigenvalues).size());
  CHECK(m.state_dim() == d_thermal + ng + quoin_pairs * 1 + miter_pairs * 2);
  CHECK(m.thermal_range().dim == d_thermal);
  CHECK(m.bias_range().offset == d_thermal);
  CHECK(m.load_ranges()[0].offset == d_thermal + ng);
  CHECK(m.load_ranges()[1].offset + m.load_ranges()[1].dim == m.state_dim());

  const ObservationModel obs = m.observe(0.3, 0.4, 0.2);
  CHECK(obs.H.cols() == m.state_dim());
  CHECK(obs.H.rows() == ng);
  CHECK(obs.mean.allFinite());
  CHECK(obs.H.allFinite());
}

TEST_CASE("product-energy pair rule") {
  Vector lx(3), lh(2);
  lx << 4.0, 2.0, 1.0;
  lh << 3.0, 0.5;
  // threshold = min(4·0.5, 1·3) = 2
  const auto p = retained_pairs(lx, lh);
  std::vector<std::pair<Index, Index>> expect{{0, 0}, {0, 1}, {1, 0}, {2, 0}};
  CHECK(p == expect);
  CHECK(retained_pairs(Vector(), lh).empty());
  Vector one(1);
  one << 2.0;
  CHECK(retained_pairs(one, one).size() == 1);
  // Full rectangle when all products clear the threshold.
  Vector flat = Vector::Constant(3, 1.0);
  CHECK(retained_pairs(flat, flat).size() == 9);
}

TEST_CASE("no retained load modes leaves only thermal and bias columns") {
  std::mt19937_64 rng(12);
  test::SmallJointOptions opt;
  opt.spatial_modes = 0;
  opt.height_modes = 0;
  const JointModel m = test::make_small_joint_model(rng, opt);
  CHECK(m.state_dim() == m.thermal_range().dim + m.gages());
  CHECK(m.pairs().empty());
  const ObservationModel obs = m.observe(0.0, 0.5, 0.5);
  CHECK(obs.H.cols() == m.thermal_range().dim + m.gages());

  // Any state leaves the loads at their prior mean.
  const Vector mean = test::random_matrix(m.state_dim(), 1, rng);
  const Matrix cov = m.dynamics()->stationary_cov();
  const auto& lp = m.loads()[0];
  const LoadMarginals lm = loads_from_state(m, "quoin", mean, cov, 0.5, 0.5, lp.spatial.seeds);
  CHECK((lm.mean - lp.mean(0.5, 0.5)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(lm.variance.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("observation operator structure") {
  std::mt19937_64 rng(13);
  const JointModel m = test::make_small_joint_model(rng);
  const ObservationModel a = m.observe(0.1, 0.3, 0.7);
  const ObservationModel b = m.observe(4.7, 0.3, 0.7);
  CHECK((a.H - b.H).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() == 0.0);

  // Zero state predicts μ_obs.
  const Vector pred = a.mean + a.H * Vector::Zero(m.state_dim());
  CHECK((pred - a.mean).cwiseAbs().maxCoeff() == 0.0);

  // Different levels change load columns, not thermal/bias columns.
  const ObservationModel c = m.observe(0.1, 0.9, 0.7);
  const Index tb = m.thermal_range().dim + m.bias_range().dim;
  CHECK((a.H.leftCols(tb) - c.H.leftCols(tb)).cwiseAbs().maxCoeff() == 0.0);
  const Index nl = m.state_dim() - tb;
  CHECK((a.H.rightCols(nl) - c.H.rightCols(nl)).norm() > 1e-6 * a.H.rightCols(nl).norm());

  // Thermal rows are √Σ_T·H_T; bias rows are the identity.
  const Matrix th = m.thermal_rows();
  CHECK((th - a.H.leftCols(m.thermal_range().dim).eval()).leftCols(m.thermal_range().dim).cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.bias_rows().middleCols(m.bias_range().offset, m.gages()).isIdentity());

  // μ_obs = reduced_strain(h, w_r = μ-loads) + μ_T.
  Vector w_r = Vector::Zero(m.reduced().size());
  for (const auto& lp : m.loads()) {
    const auto idx = m.reduced().side_indices(lp.side);
    const Vector mu = lp.mean(0.3, 0.7);
    for (std::size_t k = 0; k < idx.size(); ++k) w_r(idx[k]) = lp.projection(static_cast<Index>(k)) * mu(static_cast<Index>(k));
  }
  CHECK((a.mean - m.reduced().reduced_strain(0.3, 0.7, w_r)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(m.observe(0.0, 1.5, 0.5), ExtrapolationError);
  CHECK_THROWS_AS(m.observe(0.0, 0.5, -0.5), ExtrapolationError);
}

TEST_CASE("thermal mean table enters μ_obs only") {
  std::mt19937_64 rng(14);
  test::SmallJointOptions opt;
  JointModel base = test::make_small_joint_model(rng, opt);
  ErrorModel err = base.error_model();
  TimeTable tt;
  tt.times = Vector::LinSpaced(3, 0.0, 2.0);
  tt.values = test::random_matrix(base.gages(), 3, rng);
  err.thermal_mean = tt;
  auto reduced = std::make_shared<ReducedElasticModel>(base.reduced());
  const JointModel m = build_joint_model(reduced, base.loads(), err);
  const ObservationModel a = m.observe(0.5, 0.5, 0.5);
  const ObservationModel b = base.observe(0.5, 0.5, 0.5);
  CHECK((a.mean - b.mean - 0.5 * tt.values.col(0) - 0.5 * tt.values.col(1)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.H - b.H).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(m.observe(2.5, 0.5, 0.5), ExtrapolationError);
}

TEST_CASE("kernel channels reproduce the state-space prior covariance") {
  std::mt19937_64 rng(15);
  const JointModel m = test::make_small_joint_model(rng);
  const Matrix p0 = m.dynamics()->stationary_cov();
  for (double dt : {0.0, 0.05, 0.4, 1.3}) {
    const ObservationModel o1 = m.observe(0.0, 0.2, 0.1);
    const ObservationModel o2 = m.observe(dt, 0.8, 0.1);
    const BlockTransition tr = m.dynamics()->discretize(dt);
    const Matrix ss = o2.H * tr.left_apply(p0) * o1.H.transpose();
    const Matrix kk = kernel_strain_cov(m, dt, 0.8, 0.2);
    CHECK(relative_max(ss, kk) < 1e-8);
  }
}

TEST_CASE("forward simulation matches the analytic prior (Monte Carlo, 3σ)") {
  std::mt19937_64 rng(16);
  const JointModel m = test::make_small_joint_model(rng);
  const auto sde = m.dynamics();
  const Index n = sde->dim();
  const Index ng = m.gages();
  const Matrix p0 = sde->stationary_cov();
  const Matrix p0_root = psd_sqrt(p0);
  const double dt = 0.25;
  const BlockTransition tr = sde->discretize(dt);
  const Matrix q_root = psd_sqrt(tr.dense_qbar());
  const ObservationModel o1 = m.observe(0.0, 0.3, 0.0);
  const ObservationModel o2 = m.observe(dt, 0.7, 0.0);

  std::normal_distribution<double> g;
  auto draw = [&](Index k) {
    Vector z(k);
    for (Index i = 0; i < k; ++i) z(i) = g(rng);
    return z;
  };
  const int draws = 2000;
  Matrix y1(ng, draws), y2(ng, draws);
  for (int s = 0; s < draws; ++s) {
    const Vector v0 = sde->initial_mean() + p0_root * draw(n);
    const Vector v1 = tr.apply(v0) + q_root * draw(n);
    y1.col(s) = o1.mean + o1.H * v0;
    y2.col(s) = o2.mean + o2.H * v1;
  }
  const Vector mu1 = y1.rowwise().mean();
  const Vector mu2 = y2.rowwise().mean();
  const Matrix c1 = y1.colwise() - mu1;
  const Matrix c2 = y2.colwise() - mu2;
  const Matrix s11 = c1 * c1.transpose() / (draws - 1);
  const Matrix s21 = c2 * c1.transpose() / (draws - 1);
  const Matrix a11 = kernel_strain_cov(m, 0.0, 0.3, 0.3);
  const Matrix a22 = kernel_strain_cov(m, 0.0, 0.7, 0.7);
  const Matrix a21 = kernel_strain_cov(m, dt, 0.7, 0.3);
  int violations = 0;
  for (Index i = 0; i < ng; ++i) {
    for (Index j = 0; j < ng; ++j) {
      const double sd11 = std::sqrt((a11(i, i) * a11(j, j) + a11(i, j) * a11(i, j)) / draws);
      const double sd21 = std::sqrt((a22(i, i) * a11(j, j) + a21(i, j) * a21(i, j)) / draws);
      violations += std::abs(s11(i, j) - a11(i, j)) > 3.0 * sd11;
      violations += std::abs(s21(i, j) - a21(i, j)) > 3.0 * sd21;
    }
    const double sdm = std::sqrt(a11(i, i) / draws);
    violations += std::abs(mu1(i) - o1.mean(i)) > 3.0 * sdm;
  }
  CHECK(violations == 0);
}

TEST_CASE("zeroing the thermal columns removes diurnal structure") {
  std::mt19937_64 rng(17);
  test::SmallJointOptions opt;
  opt.periodic_thermal = true;
  opt.time_length = 3.0;
  const JointModel m = test::make_small_joint_model(rng, opt);
  const Matrix p0 = m.dynamics()->stationary_cov();
  const ObservationModel o = m.observe(0.0, 0.5, 0.5);
  Matrix h_no_thermal = o.H;
  h_no_thermal.leftCols(m.thermal_range().dim).setZero();

  auto lag_cov = [&](const Matrix& h, double tau) {
    const BlockTransition tr = m.dynamics()->discretize(tau);
    return (h * tr.left_apply(p0) * h.transpose()).diagonal().eval();
  };
  // With thermal structure the covariance rebounds at the one-day lag.
  const Vector half_full = lag_cov(o.H, 0.5);
  const Vector day_full = lag_cov(o.H, 1.0);
  CHECK((day_full.array() > half_full.array()).all());
  // Without it, covariance is monotone over lags.
  Vector prev = lag_cov(h_no_thermal, 0.0);
  for (double tau = 0.125; tau <= 2.0; tau += 0.125) {
    const Vector cur = lag_cov(h_no_thermal, tau);
    CHECK((cur.array() <= prev.array() + 1e-14).all());
    prev = cur;
  }
}

TEST_CASE("load push-through of the prior") {
  std::mt19937_64 rng(18);
  const JointModel m = test::make_small_joint_model(rng);
  const auto& lp = m.loads()[0];
  const Vector m0 = m.dynamics()->initial_mean();
  const Matrix p0 = m.dynamics()->stationary_cov();
  const double hp = 0.35, hm = 0.6;
  const LoadMarginals prior = loads_from_state(m, "quoin", m0, p0, hp, hm, lp.spatial.seeds);
  const Matrix vx = kl_factor_matrix(lp.spatial, lp.spatial.seeds);
  const Vector vh = m.height_factor(0, hp, hm);
  const auto pairs = retained_pairs(lp.spatial.eigenvalues, lp.height.eigenvalues);
  for (std::size_t q = 0; q < lp.spatial.seeds.size(); ++q) {
    double expect = 0.0;
    for (const auto& [i, j] : pairs) expect += vx(static_cast<Index>(q), i) * vx(static_cast<Index>(q), i) * vh(j) * vh(j);
    CHECK(prior.variance(static_cast<Index>(q)) == doctest::Approx(expect).epsilon(1e-10));
  }
  CHECK((prior.mean - lp.mean(hp, hm)).cwiseAbs().maxCoeff() < 1e-14);

  // Midpoint queries interpolate the mean linearly.
  std::vector<Point> mid{point(0.5 * (lp.spatial.seeds[0](0) + lp.spatial.seeds[1](0)))};
  const LoadMarginals half = loads_from_state(m, "quoin", m0, p0, hp, hm, mid);
  CHECK(half.mean(0) == doctest::Approx(0.5 * (prior.mean(0) + prior.mean(1))).epsilon(1e-12));
  std::vector<Point> outside{point(-0.5)};
  CHECK_THROWS_AS(loads_from_state(m, "quoin", m0, p0, hp, hm, outside), ExtrapolationError);
  CHECK_THROWS_AS(loads_from_state(m, "spillway", m0, p0, hp, hm, lp.spatial.seeds), DomainError);
}

TEST_CASE("mean-scaled spatial prior puts more variance where |μ| is large") {
  std::vector<Point> seeds;
  for (int i = 0; i < 21; ++i) seeds.push_back(point(i / 20.0));
  std::vector<double> xs, mus;
  for (int i = 0; i <= 20; ++i) {
    xs.push_back(i / 20.0);
    mus.push_back(std::abs(i / 20.0 - 0.5) < 0.2 ? 0.1 : 5.0);
  }
  const KernelExpr k = KernelExpr::mean_scaled(KernelExpr::matern(1.5, 0.3, 1.0), ScaleTable(xs, mus), 0.5);
  const KlBasis basis = truncate_energy(nystrom_eig(k, seeds, equal_weights(21, 1.0)), 0.99);
  const Matrix vx = kl_factor_matrix(basis, seeds);
  const Vector var = vx.rowwise().squaredNorm();
  CHECK(var(0) > 10.0 * var(10));
  CHECK(var(20) > 10.0 * var(10));
}

TEST_CASE("construction errors") {
  std::mt19937_64 rng(19);
  const JointModel m = test::make_small_joint_model(rng);
  auto reduced = std::make_shared<ReducedElasticModel>(m.reduced());
  {
    ErrorModel e = m.error_model();
    e.noise_var(0) = 0.0;
    CHECK_THROWS_AS(build_joint_model(reduced, m.loads(), e), ConstructionError);
  }
  {
    ErrorModel e = m.error_model();
    e.bias_cov = Matrix::Identity(2, 2);
    CHECK_THROWS_AS(build_joint_model(reduced, m.loads(), e), ConstructionError);
  }
  {
    auto loads = m.loads();
    loads[0].spatial.seeds.pop_back();
    CHECK_THROWS_AS(build_joint_model(reduced, loads, m.error_model()), ConstructionError);
  }
  {
    auto loads = m.loads();
    loads[1].side = "quoin";
    CHECK_THROWS_AS(build_joint_model(reduced, loads, m.error_model()), ConstructionError);
  }
  {
    auto loads = m.loads();
    loads[0].side = "nowhere";
    CHECK_THROWS_AS(build_joint_model(reduced, loads, m.error_model()), ConstructionError);
  }
}

TEST_CASE("accounting report at gate scale") {
  // 14 gages, 281 + 280 boundary DOFs, 35 spatial modes per side, 2200 times.
  std::mt19937_64 rng(20);
  const Index ng = 14, nq = 281, nm = 280, ngd = 20;
  const Index nr = nq + nm + ngd;
  std::vector<ReducedDof> dofs;
  for (Index i = 0; i < nq; ++i) dofs.push_back({i, "quoin", {static_cast<double>(i), 0, 0}});
  for (Index i = 0; i < nm; ++i) dofs.push_back({nq + i, "miter", {static_cast<double>(i), 0, 0}});
  for (Index i = 0; i < ngd; ++i) dofs.push_back({nq + nm + i, "gage", {0, 0, 0}});
  Matrix br = Matrix::Zero(ng, nr);
  br.rightCols(ngd) = test::random_matrix(ng, ngd, rng);
  Matrix kr = Matrix::Identity(nr, nr) * 3.0;
  kr.diagonal(1).setConstant(-1.0);
  kr.diagonal(-1).setConstant(-1.0);
  auto reduced = std::make_shared<ReducedElasticModel>(
      make_reduced_model(kr, br, LevelTable({0.0, 1.0}, {0.0}, Matrix::Zero(nr, 2)), dofs));

  std::vector<LoadPrior> loads;
  for (auto [side, count] : {std::pair<const char*, Index>{"quoin", nq}, {"miter", nm}}) {
    LoadPrior lp;
    lp.side = side;
    lp.mean = LevelTable({0.0, 1.0}, {0.0}, Matrix::Ones(count, 2));
    lp.projection = Vector::Ones(count);
    lp.spatial = truncate_count(nystrom_eig(KernelExpr::matern(0.5, 0.05, 1.0), left_point_grid(0.0, 1.0, static_cast<int>(count)),
                                            equal_weights(static_cast<std::size_t>(count), 1.0)),
                                35);
    lp.height = truncate_count(nystrom_eig(KernelExpr::matern(2.5, 0.5, 1.0), left_point_grid(0.0, 1.0, 16), equal_weights(16, 1.0)), 1);
    lp.time_kernel = KernelExpr::matern(0.5, 10.0, 1.0);
    loads.push_back(std::move(lp));
  }
  std::vector<double> sig(static_cast<std::size_t>(ng), 1.0);
  ErrorModel err{CoregionalModel(CoregionalModel::equicorrelated(sig, 0.2), KernelExpr::matern(0.5, 0.5, 1.0)),
                 Matrix::Identity(ng, ng), Vector::Constant(ng, 1.0), std::nullopt};
  const JointModel m = build_joint_model(reduced, std::move(loads), std::move(err));
  const auto report = m.accounting(2200);
  CHECK(report["parameters"]["reduced"].get<Index>() == 184800);
  CHECK(report["parameters"]["full"].get<Index>() == (nq + nm + ng) * 2200);
  CHECK(report["state_dim"].get<Index>() == m.state_dim());
  CHECK(report["loads"][0]["spatial_modes"].get<Index>() == 35);
  CHECK(m.state_dim() == ng + ng + 35 + 35);
}
