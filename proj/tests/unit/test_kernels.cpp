#include <cmath>
#include <numbers>

#include "ssgp/error.hpp"
#include "ssgp/kernels.hpp"
#include "test_support.hpp"

using namespace ssgp;

namespace {

// General Matérn via the modified Bessel function of the second kind.
double matern_bessel(double nu, double length, double variance, double tau) {
  if (tau == 0.0) return variance;
  const double r = std::sqrt(2.0 * nu) * tau / length;
  return variance * std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(r, nu) * std::cyl_bessel_k(nu, r);
}

std::vector<KernelExpr> sample_kernels() {
  ScaleTable mean({0.0, 5.0, 10.0}, {-3.0, 0.5, 2.0});
  return {KernelExpr::matern(0.5, 1.3, 2.0),
          KernelExpr::matern(1.5, 0.7, 1.0),
          KernelExpr::matern(2.5, 2.0, 0.5),
          KernelExpr::squared_exp(1.1, 1.5),
          KernelExpr::periodic(1.0, 0.8, 1.0),
          KernelExpr::white_noise(0.3),
          KernelExpr::constant(0.7),
          KernelExpr::sum({KernelExpr::matern(1.5, 1.0, 1.0), KernelExpr::white_noise(0.1)}),
          KernelExpr::product({KernelExpr::periodic(1.0, 0.5, 1.0), KernelExpr::matern(2.5, 3.0, 0.5)}),
          KernelExpr::mean_scaled(KernelExpr::matern(1.5, 2.0, 2.0), mean, 0.5)};
}

}  // namespace

TEST_CASE("closed-form Matérn agrees with the Bessel formula") {
  for (double nu : {0.5, 1.5, 2.5}) {
    for (double length : {0.3, 1.0, 4.0}) {
      const KernelExpr k = KernelExpr::matern(nu, length, 1.7);
      for (double tau = 0.0; tau <= 6.0 * length; tau += 0.05 * length) {
        const double want = matern_bessel(nu, length, 1.7, tau);
        CHECK(eval(k, 0.0, tau) == doctest::Approx(want).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("kernel examples") {
  CHECK(eval(KernelExpr::matern(0.5, 1.0, 1.0), 0.0, 0.0) == 1.0);
  CHECK(eval(KernelExpr::matern(0.5, 1.0, 1.0), 0.0, 1.0) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(eval(KernelExpr::periodic(1.0, 1.0, 2.0), 0.0, 1.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(eval(KernelExpr::white_noise(3.0), 0.0, 1e-9) == 0.0);
  CHECK(eval(KernelExpr::white_noise(3.0), 0.25, 0.25) == 3.0);
}

TEST_CASE("unsupported smoothness and bad parameters are rejected") {
  CHECK_THROWS_AS(KernelExpr::matern(1.0, 1.0, 1.0), ConstructionError);
  CHECK_THROWS_AS(KernelExpr::matern(0.5, 0.0, 1.0), DomainError);
  CHECK_THROWS_AS(KernelExpr::matern(0.5, 1.0, -1.0), DomainError);
  CHECK_THROWS_AS(KernelExpr::periodic(0.0, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(KernelExpr::sum({}), ConstructionError);
  CHECK_THROWS_AS(KernelExpr::product({}), ConstructionError);
  CHECK_THROWS_AS(eval(KernelExpr::constant(1.0), 0.0, std::nan("")), DomainError);
  CHECK_NOTHROW(KernelExpr::matern(0.5, 1.0, 0.0));
}

TEST_CASE("gram examples") {
  std::mt19937_64 rng(11);
  const auto pts3 = test::random_points_1d(3, 0.0, 1.0, rng);
  CHECK(gram(KernelExpr::constant(1.0), pts3).isApprox(Matrix::Ones(3, 3)));
  const auto pts4 = test::random_points_1d(4, 0.0, 1.0, rng);
  CHECK(gram(KernelExpr::white_noise(2.0), pts4) == 2.0 * Matrix::Identity(4, 4));
  const auto pts5 = test::random_points_1d(5, 0.0, 3.0, rng);
  CHECK(min_eigenvalue(gram(KernelExpr::matern(1.5, 1.0, 1.0), pts5)) >= -1e-10);
}

TEST_CASE("symmetry is exact and gram matrices are PSD") {
  std::mt19937_64 rng(5);
  for (const KernelExpr& k : sample_kernels()) {
    const auto pts = test::random_points_1d(64, 0.0, 10.0, rng);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) CHECK(eval(k, pts[i], pts[i + 1]) == eval(k, pts[i + 1], pts[i]));
    const Matrix g = gram(k, pts);
    CHECK(g == g.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    const double lmax = es.eigenvalues().maxCoeff();
    CHECK(es.eigenvalues().minCoeff() >= -1e-9 * lmax);
  }
}

TEST_CASE("Matérn 5/2 approaches the squared exponential") {
  const KernelExpr m = KernelExpr::matern(2.5, 1.3, 2.0);
  const KernelExpr se = KernelExpr::squared_exp(1.3, 2.0);
  for (double tau = 0.0; tau <= 1.3; tau += 0.01) {
    const double a = eval(m, 0.0, tau), b = eval(se, 0.0, tau);
    CHECK(std::abs(a - b) <= 0.15 * b);
  }
}

TEST_CASE("mean-scaled kernel") {
  ScaleTable mean({0.0, 1.0, 2.0}, {4.0, -1.0, 0.0});
  const KernelExpr base = KernelExpr::matern(1.5, 0.5, 3.0);
  const KernelExpr k = KernelExpr::mean_scaled(base, mean, 2.0);
  for (double x : {0.0, 0.3, 1.0, 1.7, 2.0}) {
    const double s = std::abs(mean.at(x)) + 2.0;
    CHECK(eval(k, x, x) == doctest::Approx(s * s * 3.0).epsilon(1e-14));
  }
  CHECK(eval(k, 0.2, 1.4) ==
        doctest::Approx((std::abs(mean.at(0.2)) + 2) * (std::abs(mean.at(1.4)) + 2) * eval(base, 0.2, 1.4)));
  CHECK_FALSE(k.is_stationary());
  CHECK_THROWS_AS(eval(k, 0.0, 2.5), ExtrapolationError);
  CHECK_THROWS_AS(KernelExpr::mean_scaled(k, mean, 1.0), ConstructionError);
}

TEST_CASE("sum and product are evaluated termwise") {
  const KernelExpr a = KernelExpr::matern(0.5, 1.0, 2.0);
  const KernelExpr b = KernelExpr::periodic(2.0, 0.7, 0.5);
  const KernelExpr s = KernelExpr::sum({a, b});
  const KernelExpr p = KernelExpr::product({a, b});
  for (double tau : {0.0, 0.1, 0.9, 2.5}) {
    CHECK(eval(s, 0.0, tau) == doctest::Approx(eval(a, 0.0, tau) + eval(b, 0.0, tau)).epsilon(1e-15));
    CHECK(eval(p, 0.0, tau) == doctest::Approx(eval(a, 0.0, tau) * eval(b, 0.0, tau)).epsilon(1e-15));
  }
}

TEST_CASE("coregional model") {
  const std::vector<double> sig(3, std::sqrt(5e-9));
  const Matrix sigma = CoregionalModel::equicorrelated(sig, 0.9);
  const CoregionalModel model(sigma, KernelExpr::matern(1.5, 2.0, 1.0));
  CHECK((model.sqrt_factor() * model.sqrt_factor().transpose() - sigma).norm() <= 1e-12 * sigma.norm());
  CHECK(model.cov(1.0, 1.0) == sigma);
  CHECK(model.cov(0.0, 0.0)(0, 1) == doctest::Approx(4.5e-9).epsilon(1e-12));
  CHECK(coregional_cov(model, 0.0, 0.7).isApprox(sigma * eval(KernelExpr::matern(1.5, 2.0, 1.0), 0.0, 0.7), 1e-12));

  const CoregionalModel ident(Matrix::Identity(2, 2), KernelExpr::matern(0.5, 1.0, 1.0));
  CHECK(ident.cov(0.0, 1.0).isApprox(Matrix::Identity(2, 2) * std::exp(-1.0), 1e-14));

  CHECK_THROWS_AS(CoregionalModel(Matrix::Identity(2, 2), KernelExpr::matern(0.5, 1.0, 2.0)), ConstructionError);
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(CoregionalModel(bad, KernelExpr::matern(0.5, 1.0, 1.0)), ConstructionError);
}

TEST_CASE("per-component coregional kernels") {
  const std::vector<double> sig = {1.0, 2.0};
  const Matrix sigma = CoregionalModel::equicorrelated(sig, 0.5);
  const std::vector<KernelExpr> ks = {KernelExpr::matern(0.5, 1.0, 1.0), KernelExpr::matern(1.5, 3.0, 1.0)};
  const CoregionalModel model(sigma, ks);
  const Matrix& a = model.sqrt_factor();
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = eval(ks[0], 0.0, 0.4);
  d(1, 1) = eval(ks[1], 0.0, 0.4);
  CHECK(model.cov(0.0, 0.4).isApprox(a * d * a.transpose(), 1e-14));
  CHECK(model.cov(0.3, 0.3).isApprox(sigma, 1e-14));
}
