#include <filesystem>

#include "ssgp/condense.hpp"
#include "ssgp/error.hpp"
#include "ssgp/io.hpp"
#include "test_support.hpp"

using namespace ssgp;

namespace {

std::vector<ReducedDof> dofs_for(const std::vector<Index>& idx, const std::string& side) {
  std::vector<ReducedDof> d;
  for (Index i : idx) d.push_back(ReducedDof{i, side, {static_cast<double>(i), 0.0, 0.0}});
  return d;
}

LevelTable zero_levels(Index n) { return LevelTable({0.0, 1.0}, {0.0}, Matrix::Zero(n, 2)); }

}  // namespace

TEST_CASE("hand-sized Schur complements") {
  const SparseMatrix id = Matrix::Identity(5, 5).sparseView();
  const SparseMatrix b0(1, 5);
  const ReducedElasticModel a = schur_reduce(id, b0, dofs_for({1, 3}, "quoin"), zero_levels(5));
  CHECK(a.Kr.isApprox(Matrix::Identity(2, 2)));

  Matrix k(2, 2);
  k << 2, 1, 1, 2;
  const ReducedElasticModel r = schur_reduce(k.sparseView(), SparseMatrix(1, 2), dofs_for({1}, "quoin"), zero_levels(2));
  CHECK(r.Kr(0, 0) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("reduced solve equals the full solve on random SPD systems") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 40;
    const Matrix kd = test::random_spd(n, rng, 5.0);
    const Matrix bd = test::random_matrix(3, n, rng);
    SparseMatrix b(3, n);
    {
      // Strain map touches a few DOFs; condensation must keep them.
      Matrix bs = Matrix::Zero(3, n);
      for (Index c : {30, 31, 35}) bs.col(c) = bd.col(c);
      b = bs.sparseView();
    }
    std::vector<Index> idx = {0, 1, 2, 7, 8, 20};
    auto dofs = dofs_for(idx, "quoin");
    const Matrix hyd = test::random_matrix(n, 3, rng);
    const LevelTable hydro({0.0, 0.5, 1.0}, {0.0}, hyd);
    const ReducedElasticModel m = schur_reduce(kd.sparseView(), b, dofs, hydro);
    CHECK(m.size() == 9);
    CHECK(m.side_indices("gage").size() == 3);
    CHECK((m.Kr - m.Kr.transpose()).norm() <= 1e-10 * m.Kr.norm());
    CHECK((m.Gr * m.Kr - m.Br).norm() <= 1e-8 * m.Br.norm());

    // Load supported on reduced DOFs plus hydrostatics at an intermediate level.
    Vector wr = Vector::Zero(m.size());
    for (Index i = 0; i < 6; ++i) wr(i) = test::random_matrix(1, 1, rng)(0, 0);
    const double h = 0.3;
    Vector f = 0.4 * hyd.col(0) + 0.6 * hyd.col(1);
    for (Index i = 0; i < m.size(); ++i) f(m.dofs[static_cast<std::size_t>(i)].full_index) += wr(i);
    const Vector u = kd.ldlt().solve(f);
    const Vector fr = m.hydro(h, 0.0) + wr;
    const Vector ur = m.Kr.llt().solve(fr);
    Vector ufull_r(m.size());
    for (Index i = 0; i < m.size(); ++i) ufull_r(i) = u(m.dofs[static_cast<std::size_t>(i)].full_index);
    CHECK((ur - ufull_r).norm() <= 1e-10 * ufull_r.norm());
    const Vector strain_full = Matrix(b) * u;
    CHECK((m.reduced_strain(h, 0.0, wr) - strain_full).norm() <= 1e-10 * strain_full.norm());

    // Lifting the reduced solution reproduces the full residual.
    std::vector<bool> kept(static_cast<std::size_t>(n), false);
    for (const auto& d : m.dofs) kept[static_cast<std::size_t>(d.full_index)] = true;
    std::vector<Index> inner;
    for (Index i = 0; i < n; ++i)
      if (!kept[static_cast<std::size_t>(i)]) inner.push_back(i);
    Matrix k11(inner.size(), inner.size()), k12(inner.size(), m.size());
    Vector f1(inner.size());
    for (std::size_t i = 0; i < inner.size(); ++i) {
      f1(static_cast<Index>(i)) = f(inner[i]);
      for (std::size_t j = 0; j < inner.size(); ++j) k11(static_cast<Index>(i), static_cast<Index>(j)) = kd(inner[i], inner[j]);
      for (Index j = 0; j < m.size(); ++j) k12(static_cast<Index>(i), j) = kd(inner[i], m.dofs[static_cast<std::size_t>(j)].full_index);
    }
    const Vector uc = k11.llt().solve(f1 - k12 * ur);
    Vector lifted(n);
    for (std::size_t i = 0; i < inner.size(); ++i) lifted(inner[i]) = uc(static_cast<Index>(i));
    for (Index j = 0; j < m.size(); ++j) lifted(m.dofs[static_cast<std::size_t>(j)].full_index) = ur(j);
    CHECK((kd * lifted - f).norm() <= 1e-9 * f.norm());

    for (int e = 0; e < 5; ++e) {
      const Vector x = test::random_matrix(m.size(), 1, rng);
      CHECK(x.dot(m.Kr * x) > 0.0);
    }

    // Linearity in the boundary load.
    const Vector w1 = test::random_matrix(m.size(), 1, rng), w2 = test::random_matrix(m.size(), 1, rng);
    const Vector z = Vector::Zero(m.size());
    const Vector lin = m.reduced_strain(h, 0, w1 + w2) - m.reduced_strain(h, 0, w1) - m.reduced_strain(h, 0, w2) +
                       m.reduced_strain(h, 0, z);
    CHECK(lin.norm() <= 1e-12 * std::max(1.0, m.reduced_strain(h, 0, w1).norm()));
    CHECK((m.reduced_strain(h, 0, z) - m.hydro_strain(h, 0)).norm() == 0.0);
  }
}

TEST_CASE("level tables interpolate and refuse to extrapolate") {
  Matrix v(1, 6);
  // f(h⁺, h⁻) = 2h⁺ + 3h⁻ on a 3×2 grid.
  const std::vector<double> hp = {0.0, 1.0, 2.0}, hm = {0.0, 4.0};
  for (std::size_t im = 0; im < 2; ++im)
    for (std::size_t ip = 0; ip < 3; ++ip) v(0, static_cast<Index>(ip + 3 * im)) = 2 * hp[ip] + 3 * hm[im];
  const LevelTable t(hp, hm, v);
  CHECK(t(0.5, 1.0)(0) == doctest::Approx(4.0));
  CHECK(t(2.0, 4.0)(0) == doctest::Approx(16.0));
  CHECK_THROWS_AS(t(2.1, 0.0), ExtrapolationError);
  CHECK_THROWS_AS(t(1.0, -0.5), ExtrapolationError);

  // Scattered columns in arbitrary order.
  const std::vector<double> sp = {2.0, 0.0, 1.0, 0.0, 1.0, 2.0}, sm = {4.0, 0.0, 0.0, 4.0, 4.0, 0.0};
  Matrix sv(1, 6);
  for (int c = 0; c < 6; ++c) sv(0, c) = 2 * sp[static_cast<std::size_t>(c)] + 3 * sm[static_cast<std::size_t>(c)];
  const LevelTable s = LevelTable::from_columns(sp, sm, sv);
  CHECK(s.values() == t.values());
  const std::vector<double> gp = {0.0, 1.0, 1.0}, gm = {0.0, 0.0, 1.0};
  CHECK_THROWS_AS(LevelTable::from_columns(gp, gm, Matrix::Zero(1, 3)), ConstructionError);

  // One h⁻ level: constant along that axis.
  const LevelTable one({0.0, 1.0}, {0.0}, Matrix::Ones(2, 2));
  CHECK(one(0.5, 123.0) == Vector::Ones(2));
}

TEST_CASE("bundles are reproducible") {
  std::mt19937_64 rng(19);
  const Matrix kd = test::random_spd(12, rng, 3.0);
  Matrix bs = Matrix::Zero(2, 12);
  bs(0, 10) = 1.0;
  bs(1, 11) = -0.5;
  const LevelTable hydro({0.0, 1.0}, {0.0, 2.0}, test::random_matrix(12, 4, rng));
  const auto m = schur_reduce(kd.sparseView(), bs.sparseView(), dofs_for({0, 1, 2}, "miter"), hydro);
  const auto base = std::filesystem::temp_directory_path() / "ssgp_condense_test";
  std::filesystem::remove_all(base);
  write_condense_bundle(base / "a", m, "abc");
  write_condense_bundle(base / "b", m, "abc");
  for (const char* f : {"Kr.csv", "Br.csv", "Gr.csv", "hydro_r.csv", "levels.csv", "dofs.csv", "manifest.json"})
    CHECK(io::read_text(base / "a" / f) == io::read_text(base / "b" / f));
  const auto r = read_condense_bundle(base / "a");
  CHECK(r.Kr == m.Kr);
  CHECK(r.Br == m.Br);
  CHECK(r.hydro.values() == m.hydro.values());
  CHECK(r.dofs.size() == m.dofs.size());
  CHECK(r.dofs[0].side == "miter");
  CHECK((r.Gr - m.Gr).norm() <= 1e-14 * m.Gr.norm());
  std::filesystem::remove_all(base);
}

TEST_CASE("matrix market io") {
  const auto dir = std::filesystem::temp_directory_path() / "ssgp_mm_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(2);
  const Matrix kd = test::random_spd(6, rng);
  const SparseMatrix ks = kd.sparseView();
  io::write_matrix_market(dir / "k.mtx", ks, true);
  CHECK(Matrix(io::read_matrix_market(dir / "k.mtx")) == kd);
  io::write_matrix_market(dir / "g.mtx", ks, false);
  CHECK(Matrix(io::read_matrix_market(dir / "g.mtx")) == kd);
  io::write_matrix_market_dense(dir / "d.mtx", kd.leftCols(3));
  CHECK(io::read_matrix_market_dense(dir / "d.mtx") == kd.leftCols(3));
  io::write_text(dir / "bad.mtx", "%%MatrixMarket tensor coordinate real general\n1 1 1\n1 1 2\n");
  CHECK_THROWS_AS(io::read_matrix_market(dir / "bad.mtx"), ConfigError);
  io::write_text(dir / "bad2.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 2\n");
  CHECK_THROWS_AS(io::read_matrix_market(dir / "bad2.mtx"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid reductions") {
  Matrix k(3, 3);
  k << 1, 0, 0, 0, 0, 0, 0, 0, 1;
  CHECK_THROWS_AS(schur_reduce(k.sparseView(), SparseMatrix(1, 3), dofs_for({0}, "q"), zero_levels(3)), NumericalError);
  const SparseMatrix id = Matrix::Identity(3, 3).sparseView();
  CHECK_THROWS_AS(schur_reduce(id, SparseMatrix(1, 3), dofs_for({5}, "q"), zero_levels(3)), DomainError);
  CHECK_THROWS_AS(schur_reduce(id, SparseMatrix(1, 3), {}, zero_levels(3)), DomainError);
}

TEST_CASE("timestamps") {
  CHECK(io::parse_iso8601("1970-01-01T00:00:00Z") == 0.0);
  CHECK(io::parse_iso8601("2019-09-01T00:00:00Z") == 1567296000.0);
  CHECK(io::parse_iso8601("2019-09-01T02:30:00+02:00") == 1567297800.0);
  CHECK(io::parse_iso8601("2000-02-29T12:00:00.5Z") == doctest::Approx(951825600.5));
  CHECK(io::format_iso8601(1567296000.0 + 86400 * 4 + 3600 * 23 + 60 * 59) == "2019-09-05T23:59:00Z");
  CHECK_THROWS_AS(io::parse_iso8601("2019-13-01T00:00:00Z"), ConfigError);
  CHECK_THROWS_AS(io::parse_iso8601("yesterday"), ConfigError);
}
