#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "ssgp/kernels.hpp"
#include "ssgp/linalg.hpp"

namespace ssgp {

/// Nyström eigenpairs of one kernel factor on a quadrature rule.
/// Eigenvectors hold φ_k at the seeds and satisfy φ_jᵀ·W·φ_k = δ_jk.
struct KlBasis {
  KernelExpr kernel = KernelExpr::constant(0.0);
  std::vector<Point> seeds;
  Vector weights;
  Vector eigenvalues;   // descending, clamped at zero
  Matrix eigenvectors;  // seeds × retained modes
  double total_energy = 0.0;     // Σ of all clamped eigenvalues before truncation
  double min_raw_eigenvalue = 0.0;

  Index modes() const { return eigenvalues.size(); }
  double captured_fraction() const;
};

/// Solves the symmetrized problem W^{1/2}·Γ·W^{1/2}·v = λv and maps back
/// with φ = W^{-1/2}·v, so that Γ·W·φ = λφ. All modes are kept.
KlBasis nystrom_eig(const KernelExpr& kernel, std::vector<Point> seeds, Vector weights);

/// Mode k at an arbitrary input via the Nyström interpolant.
double kl_interpolate(const KlBasis& basis, const Point& y, Index k);

/// All retained modes at y.
Vector kl_interpolate_all(const KlBasis& basis, const Point& y);

/// Smallest K whose cumulative eigenvalue share reaches `fraction`;
/// fraction 1 keeps every strictly positive mode.
KlBasis truncate_energy(const KlBasis& basis, double fraction);
KlBasis truncate_count(const KlBasis& basis, Index k);

/// Rows: queries; columns: modes; entry √λ_k·φ_k(query_i). Degenerate
/// modes (λ_k ≤ 1e-12·λ_1) contribute zero columns.
Matrix kl_factor_matrix(const KlBasis& basis, std::span<const Point> queries);

/// M left endpoints of equal cells on [lo, hi]; weight (hi − lo)/M each.
std::vector<Point> left_point_grid(double lo, double hi, int m);
/// Tensor grid of left endpoints on [lo0, hi0] × [lo1, hi1], first axis fastest.
std::vector<Point> left_point_grid_2d(double lo0, double hi0, double lo1, double hi1, int m);
Vector equal_weights(std::size_t m, double measure);

void write_kl_bundle(const std::filesystem::path& dir, const KlBasis& basis);
KlBasis read_kl_bundle(const std::filesystem::path& dir);

}  // namespace ssgp
