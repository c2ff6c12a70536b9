#include "ssgp/klreduce.hpp"

#include <cmath>

#include <json.hpp>

#include "ssgp/error.hpp"
#include "ssgp/io.hpp"
#include "ssgp/kernel_json.hpp"

namespace ssgp {

namespace {

constexpr double kDegenerate = 1e-12;

void fix_signs(Matrix& v) {
  for (Index k = 0; k < v.cols(); ++k) {
    for (Index i = 0; i < v.rows(); ++i) {
      if (v(i, k) != 0.0) {
        if (v(i, k) < 0.0) v.col(k) *= -1.0;
        break;
      }
    }
  }
}

}  // namespace

double KlBasis::captured_fraction() const {
  if (total_energy <= 0.0) return 1.0;
  return eigenvalues.sum() / total_energy;
}

KlBasis nystrom_eig(const KernelExpr& kernel, std::vector<Point> seeds, Vector weights) {
  const Index m = static_cast<Index>(seeds.size());
  if (m == 0) throw ConstructionError("nystrom_eig: no seeds");
  if (weights.size() != m) throw ConstructionError("nystrom_eig: one weight per seed required");
  if (!(weights.array() > 0.0).all() || !weights.allFinite())
    throw ConstructionError("nystrom_eig: quadrature weights must be positive");

  const Vector sw = weights.cwiseSqrt();
  const Matrix g = gram(kernel, seeds);
  const Matrix s = sw.asDiagonal() * g * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  if (es.info() != Eigen::Success) throw NumericalError("nystrom_eig: eigensolver failed");

  KlBasis b;
  b.kernel = kernel;
  b.seeds = std::move(seeds);
  b.weights = std::move(weights);
  b.eigenvalues = es.eigenvalues().reverse();
  b.min_raw_eigenvalue = b.eigenvalues(m - 1);
  b.eigenvalues = b.eigenvalues.cwiseMax(0.0);
  b.eigenvectors = sw.cwiseInverse().asDiagonal() * es.eigenvectors().rowwise().reverse();
  fix_signs(b.eigenvectors);
  b.total_energy = b.eigenvalues.sum();
  return b;
}

namespace {

Vector interpolate_modes(const KlBasis& basis, const Point& y, bool zero_degenerate) {
  const Index m = static_cast<Index>(basis.seeds.size());
  Vector kw(m);
  for (Index i = 0; i < m; ++i) kw(i) = basis.weights(i) * eval(basis.kernel, basis.seeds[static_cast<std::size_t>(i)], y);
  Vector out = basis.eigenvectors.transpose() * kw;
  const double l1 = basis.modes() ? basis.eigenvalues(0) : 0.0;
  for (Index k = 0; k < basis.modes(); ++k) {
    const double lk = basis.eigenvalues(k);
    if (lk > kDegenerate * l1) {
      out(k) /= lk;
    } else if (zero_degenerate) {
      out(k) = 0.0;
    } else {
      throw NumericalError("kl_interpolate: mode " + std::to_string(k) + " is degenerate");
    }
  }
  return out;
}

}  // namespace

Vector kl_interpolate_all(const KlBasis& basis, const Point& y) { return interpolate_modes(basis, y, false); }

double kl_interpolate(const KlBasis& basis, const Point& y, Index k) {
  if (k < 0 || k >= basis.modes()) throw DomainError("kl_interpolate: mode index out of range");
  const double lk = basis.eigenvalues(k);
  if (!(lk > kDegenerate * basis.eigenvalues(0)))
    throw NumericalError("kl_interpolate: mode " + std::to_string(k) + " is degenerate");
  double s = 0.0;
  for (std::size_t i = 0; i < basis.seeds.size(); ++i) {
    const Index ii = static_cast<Index>(i);
    s += basis.weights(ii) * eval(basis.kernel, basis.seeds[i], y) * basis.eigenvectors(ii, k);
  }
  return s / lk;
}

KlBasis truncate_count(const KlBasis& basis, Index k) {
  if (k < 0 || k > basis.modes()) throw DomainError("truncate_count: mode count out of range");
  KlBasis b = basis;
  b.eigenvalues = basis.eigenvalues.head(k);
  b.eigenvectors = basis.eigenvectors.leftCols(k);
  return b;
}

KlBasis truncate_energy(const KlBasis& basis, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("truncate_energy: fraction must lie in (0, 1]");
  Index positive = 0;
  while (positive < basis.modes() && basis.eigenvalues(positive) > 0.0) ++positive;
  if (fraction == 1.0) return truncate_count(basis, positive);
  const double target = fraction * basis.total_energy;
  double kept = 0.0;
  for (Index k = 0; k < positive; ++k) {
    kept += basis.eigenvalues(k);
    if (kept >= target) return truncate_count(basis, k + 1);
  }
  return truncate_count(basis, positive);
}

Matrix kl_factor_matrix(const KlBasis& basis, std::span<const Point> queries) {
  Matrix v(static_cast<Index>(queries.size()), basis.modes());
  const Vector root = basis.eigenvalues.cwiseSqrt();
  for (std::size_t i = 0; i < queries.size(); ++i)
    v.row(static_cast<Index>(i)) = (interpolate_modes(basis, queries[i], true).array() * root.array()).transpose();
  return v;
}

std::vector<Point> left_point_grid(double lo, double hi, int m) {
  if (m < 1 || !(hi > lo)) throw DomainError("left_point_grid: need hi > lo and at least one cell");
  std::vector<Point> p;
  p.reserve(static_cast<std::size_t>(m));
  const double h = (hi - lo) / m;
  for (int i = 0; i < m; ++i) p.push_back(point(lo + i * h));
  return p;
}

std::vector<Point> left_point_grid_2d(double lo0, double hi0, double lo1, double hi1, int m) {
  const auto a = left_point_grid(lo0, hi0, m);
  const auto b = left_point_grid(lo1, hi1, m);
  std::vector<Point> p;
  p.reserve(a.size() * b.size());
  for (const Point& y : b)
    for (const Point& x : a) {
      Point q(2);
      q << x(0), y(0);
      p.push_back(q);
    }
  return p;
}

Vector equal_weights(std::size_t m, double measure) {
  if (m == 0 || !(measure > 0.0)) throw DomainError("equal_weights: need positive measure and count");
  return Vector::Constant(static_cast<Index>(m), measure / static_cast<double>(m));
}

void write_kl_bundle(const std::filesystem::path& dir, const KlBasis& basis) {
  std::filesystem::create_directories(dir);
  const Index d = basis.seeds.empty() ? 0 : basis.seeds.front().size();
  Matrix seeds(static_cast<Index>(basis.seeds.size()), d);
  for (std::size_t i = 0; i < basis.seeds.size(); ++i) seeds.row(static_cast<Index>(i)) = basis.seeds[i].transpose();
  io::write_csv_matrix(dir / "seeds.csv", seeds);
  io::write_csv_vector(dir / "weights.csv", basis.weights);
  io::write_csv_vector(dir / "eigvals.csv", basis.eigenvalues);
  io::write_csv_matrix(dir / "eigvecs.csv", basis.eigenvectors);
  nlohmann::json man = {{"kernel", kernel_to_json(basis.kernel)},
                        {"seed_count", basis.seeds.size()},
                        {"seed_dim", d},
                        {"retained_modes", basis.modes()},
                        {"total_energy", basis.total_energy},
                        {"captured_fraction", basis.captured_fraction()},
                        {"min_raw_eigenvalue", basis.min_raw_eigenvalue}};
  io::write_text(dir / "manifest.json", man.dump(2) + "\n");
}

KlBasis read_kl_bundle(const std::filesystem::path& dir) {
  const auto man = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  KlBasis b;
  b.kernel = kernel_from_json(man.at("kernel"), dir);
  const Matrix seeds = io::read_csv_matrix(dir / "seeds.csv");
  for (Index i = 0; i < seeds.rows(); ++i) b.seeds.push_back(seeds.row(i).transpose());
  b.weights = io::read_csv_matrix(dir / "weights.csv").col(0);
  const Matrix ev = io::read_csv_matrix(dir / "eigvals.csv");
  b.eigenvalues = ev.size() ? Vector(ev.col(0)) : Vector();
  b.eigenvectors = io::read_csv_matrix(dir / "eigvecs.csv");
  if (b.eigenvectors.size() == 0) b.eigenvectors = Matrix(seeds.rows(), 0);
  b.total_energy = man.at("total_energy").get<double>();
  b.min_raw_eigenvalue = man.value("min_raw_eigenvalue", 0.0);
  if (b.eigenvectors.rows() != seeds.rows() || b.eigenvectors.cols() != b.eigenvalues.size())
    throw ConfigError(dir.string() + ": inconsistent KL bundle");
  return b;
}

}  // namespace ssgp
