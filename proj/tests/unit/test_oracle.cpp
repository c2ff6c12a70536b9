#include <cmath>

#include "joint_fixture.hpp"
#include "ssgp/error.hpp"
#include "ssgp/oracle.hpp"

using namespace ssgp;

namespace {

DensePrior random_prior(Index n, std::mt19937_64& rng) {
  DensePrior p;
  p.mean = test::random_matrix(n, 1, rng);
  p.cov = test::random_spd(n, rng, 0.5);
  p.times = 1;
  p.block = n;
  return p;
}

DenseObservation random_obs(Index rows, Index n, std::mt19937_64& rng) {
  DenseObservation o;
  o.H = test::random_matrix(rows, n, rng);
  o.offset = test::random_matrix(rows, 1, rng);
  o.noise_var = Vector::Constant(rows, 0.3) + test::random_matrix(rows, 1, rng).cwiseAbs();
  o.y = test::random_matrix(rows, 1, rng);
  return o;
}

DenseObservation row_subset(const DenseObservation& o, Index r) {
  return {o.H.row(r), o.offset.row(r), o.noise_var.row(r), o.y.row(r)};
}

}  // namespace

TEST_CASE("scalar conjugate update") {
  DensePrior p;
  p.mean = Vector::Constant(1, 0.7);
  p.cov = Matrix::Constant(1, 1, 2.0);
  DenseObservation o{Matrix::Constant(1, 1, 1.5), Vector::Zero(1), Vector::Constant(1, 0.4), Vector::Constant(1, 3.0)};
  const DensePosterior post = dense_condition(p, o);
  const double expect = 0.7 + 2.0 * (3.0 - 1.5 * 0.7) * 1.5 / (1.5 * 1.5 * 2.0 + 0.4);
  CHECK(post.mean(0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(post.cov(0, 0) == doctest::Approx(1.0 / (1.0 / 2.0 + 1.5 * 1.5 / 0.4)).epsilon(1e-14));
}

TEST_CASE("noise-free square observation interpolates") {
  std::mt19937_64 rng(31);
  const DensePrior p = random_prior(6, rng);
  DenseObservation o = random_obs(6, 6, rng);
  o.noise_var.setZero();
  const DensePosterior post = dense_condition(p, o);
  CHECK(((o.offset + o.H * post.mean) - o.y).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("covariance-form and information-form conditioning agree") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 3; ++trial) {
    const DensePrior p = random_prior(20, rng);
    const DenseObservation o = random_obs(12, 20, rng);
    const DensePosterior a = dense_condition(p, o);
    const DensePosterior b = dense_condition_information(p, o);
    CHECK(relative_max(a.mean, b.mean) < 1e-9);
    CHECK(relative_max(a.cov, b.cov) < 1e-9);
  }
}

TEST_CASE("posterior covariance is bounded by the prior") {
  std::mt19937_64 rng(33);
  const DensePrior p = random_prior(15, rng);
  const DenseObservation o = random_obs(8, 15, rng);
  const DensePosterior post = dense_condition(p, o);
  Matrix diff = p.cov - post.cov;
  diff.diagonal().array() += 1e-10 * p.cov.trace();
  CHECK(Eigen::LLT<Matrix>(diff).info() == Eigen::Success);
}

TEST_CASE("empty observation set returns the prior") {
  std::mt19937_64 rng(34);
  const DensePrior p = random_prior(5, rng);
  const DenseObservation none{Matrix(0, 5), Vector(0), Vector(0), Vector(0)};
  const DensePosterior post = dense_condition(p, none);
  CHECK((post.mean - p.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((post.cov - p.cov).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sequential conditioning in any order equals joint conditioning") {
  std::mt19937_64 rng(35);
  const DensePrior p = random_prior(10, rng);
  const DenseObservation o = random_obs(7, 10, rng);
  const DensePosterior joint = dense_condition(p, o);
  for (const std::vector<Index>& order : {std::vector<Index>{0, 1, 2, 3, 4, 5, 6}, std::vector<Index>{6, 2, 4, 0, 5, 1, 3}}) {
    DensePrior cur = p;
    for (Index r : order) {
      const DensePosterior step = dense_condition(cur, row_subset(o, r));
      cur.mean = step.mean;
      cur.cov = step.cov;
    }
    CHECK(relative_max(cur.mean, joint.mean) < 1e-9);
    CHECK(relative_max(cur.cov, joint.cov) < 1e-9);
  }
}

TEST_CASE("dense prior from kernels") {
  // Single time: P0 pushed through the channel rows.
  std::mt19937_64 rng(36);
  const JointModel m = test::make_small_joint_model(rng);
  const std::vector<double> one{0.0};
  const DensePrior single = assemble_dense_prior(m, one);
  Matrix rows(single.block, m.state_dim());
  Index off = 0;
  for (const auto& c : m.channels()) {
    rows.middleRows(off, c.rows.rows()) = c.rows;
    off += c.rows.rows();
  }
  const Matrix p0 = m.dynamics()->stationary_cov();
  CHECK(relative_max(single.cov, rows * p0 * rows.transpose()) < 1e-8);

  // Two times, Matérn 1/2: cross block σ²·exp(−Δt/L).
  const std::vector<LatentChannel> ou{{"ou", Matrix::Ones(1, 1), Matrix::Identity(1, 1), KernelExpr::matern(0.5, 0.7, 2.5)}};
  const std::vector<double> two{0.1, 0.6};
  const DensePrior q = assemble_dense_prior(ou, Vector::Zero(1), two);
  CHECK(q.cov(0, 1) == doctest::Approx(2.5 * std::exp(-0.5 / 0.7)).epsilon(1e-14));
  CHECK(q.cov(1, 0) == q.cov(0, 1));

  // Marginal variances equal the stationary SDE variances.
  std::vector<double> ts;
  for (int i = 0; i < 10; ++i) ts.push_back(0.13 * i);
  const DensePrior many = assemble_dense_prior(m, ts);
  const Vector sde_var = (rows * p0 * rows.transpose()).diagonal();
  for (Index i = 0; i < 10; ++i) {
    CHECK(relative_max(many.cov.diagonal().segment(i * many.block, many.block), sde_var) < 1e-8);
  }
}

TEST_CASE("size guard") {
  const std::vector<LatentChannel> ou{{"ou", Matrix::Ones(1, 1), Matrix::Identity(1, 1), KernelExpr::matern(0.5, 1.0, 1.0)}};
  std::vector<double> ts(5001);
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = static_cast<double>(i);
  CHECK_THROWS_AS(assemble_dense_prior(ou, Vector::Zero(1), ts), SizeError);
  CHECK_NOTHROW(assemble_dense_prior(ou, Vector::Zero(1), std::span<const double>(ts.data(), 50)));
}

TEST_CASE("singular data covariance is reported") {
  DensePrior p;
  p.mean = Vector::Zero(2);
  p.cov = Matrix::Zero(2, 2);
  DenseObservation o{Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2), Vector::Zero(2)};
  CHECK_THROWS_AS(dense_condition(p, o), NumericalError);
}
