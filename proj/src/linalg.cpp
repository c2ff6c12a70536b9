#include "ssgp/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "ssgp/error.hpp"

namespace ssgp {

Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

Matrix psd_sqrt(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) throw ConstructionError("psd_sqrt: matrix is not square");
  if (a.size() == 0) return a;
  if (!a.allFinite()) throw ConstructionError("psd_sqrt: non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(a));
  if (eig.info() != Eigen::Success) throw NumericalError("psd_sqrt: eigensolver failed");
  const Vector& lam = eig.eigenvalues();
  const double scale = std::max(1.0, std::abs(lam.maxCoeff()));
  if (lam.minCoeff() < -tol * scale) {
    throw ConstructionError("psd_sqrt: matrix is not positive semi-definite");
  }
  const Vector root = lam.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(a), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

bool is_psd(const Matrix& a, double tol) {
  if (a.size() == 0) return true;
  if (!a.allFinite()) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(a), Eigen::EigenvaluesOnly);
  const Vector& lam = eig.eigenvalues();
  const double scale = std::max(1.0, std::abs(lam.maxCoeff()));
  return lam.minCoeff() >= -tol * scale;
}

Matrix solve_lyapunov(const Matrix& f, const Matrix& c) {
  const Index n = f.rows();
  const Matrix eye = Matrix::Identity(n, n);
  // vec(F P) = (I ⊗ F) vec(P), vec(P Fᵀ) = (F ⊗ I) vec(P)
  Matrix op = Matrix::Zero(n * n, n * n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      op.block(i * n, j * n, n, n) += eye(i, j) * f;
      op.block(i * n, j * n, n, n) += f(i, j) * eye;
    }
  }
  const Vector rhs = -Eigen::Map<const Vector>(c.data(), n * n);
  Eigen::FullPivLU<Matrix> lu(op);
  if (!lu.isInvertible()) throw NumericalError("solve_lyapunov: singular Lyapunov operator");
  Vector p = lu.solve(rhs);
  return symmetrized(Eigen::Map<Matrix>(p.data(), n, n));
}

Matrix block_diagonal(std::span<const Matrix> blocks) {
  Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Matrix out = Matrix::Zero(rows, cols);
  Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

double relative_frobenius(const Matrix& a, const Matrix& b, double floor) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

double relative_max(const Matrix& a, const Matrix& b, double floor) {
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

}  // namespace ssgp
