#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <span>
#include <vector>

namespace ssgp {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// An input location for a kernel (time, water level, or position).
using Point = Eigen::VectorXd;

inline Point point(double x) { return Point::Constant(1, x); }

/// Returns (A + Aᵀ)/2.
Matrix symmetrized(const Matrix& a);

/// Symmetric PSD square root via eigen-decomposition; eigenvalues below
/// zero are clamped. Throws ConstructionError if the matrix has an
/// eigenvalue below -tol·max(1, λ_max).
Matrix psd_sqrt(const Matrix& a, double tol = 1e-10);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Matrix& a);

/// True if the symmetric matrix has no eigenvalue below -tol·max(1,λ_max).
bool is_psd(const Matrix& a, double tol = 1e-10);

/// Solves F·P + P·Fᵀ + C = 0 by Kronecker vectorization. Intended for the
/// small blocks of canonical kernel realizations (dimension ≤ ~12).
Matrix solve_lyapunov(const Matrix& f, const Matrix& c);

/// Block-diagonal concatenation.
Matrix block_diagonal(std::span<const Matrix> blocks);

/// ‖a − b‖_F / max(‖b‖_F, floor).
double relative_frobenius(const Matrix& a, const Matrix& b, double floor = 1e-300);

/// max|a − b| / max(max|b|, floor).
double relative_max(const Matrix& a, const Matrix& b, double floor = 1e-300);

}  // namespace ssgp
