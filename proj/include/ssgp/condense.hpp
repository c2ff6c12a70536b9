#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ssgp/linalg.hpp"

namespace ssgp {

/// Vector-valued function of the water levels (h⁺, h⁻) tabulated on a
/// tensor grid and interpolated bilinearly. A single-level axis makes the
/// table constant along that axis. Queries outside the grid raise
/// ExtrapolationError.
class LevelTable {
 public:
  LevelTable() = default;
  /// values: one column per grid node, column index = i⁺ + n⁺·i⁻.
  LevelTable(std::vector<double> h_plus, std::vector<double> h_minus, Matrix values);

  /// Builds from scattered (h⁺, h⁻) columns that must form a full tensor grid.
  static LevelTable from_columns(std::span<const double> h_plus, std::span<const double> h_minus, const Matrix& values);

  Vector operator()(double h_plus, double h_minus) const;

  Index rows() const { return values_.rows(); }
  const std::vector<double>& h_plus() const { return hp_; }
  const std::vector<double>& h_minus() const { return hm_; }
  const Matrix& values() const { return values_; }
  /// Applies a linear map to every tabulated column.
  LevelTable transformed(const Matrix& map) const;

 private:
  std::vector<double> hp_;
  std::vector<double> hm_;
  Matrix values_;
};

/// Bookkeeping for one retained degree of freedom.
struct ReducedDof {
  Index full_index = 0;
  std::string side;  // e.g. "quoin", "miter", "gage"
  std::array<double, 3> x{0.0, 0.0, 0.0};
};

/// Condensed elastic model on boundary and gage-region DOFs.
struct ReducedElasticModel {
  Matrix Kr;
  Matrix Br;
  Matrix Gr;  // Br·Kr⁻¹
  LevelTable hydro;
  std::vector<ReducedDof> dofs;

  Index size() const { return Kr.rows(); }
  Index gages() const { return Br.rows(); }

  /// Reduced indices whose side label matches, in reduced order.
  std::vector<Index> side_indices(const std::string& side) const;

  /// Gr·(f_r(h) + w_r).
  Vector reduced_strain(double h_plus, double h_minus, const Vector& w_r) const;
  /// Gr·f_r(h).
  Vector hydro_strain(double h_plus, double h_minus) const;
};

/// Static condensation onto `dofs` (which name the retained full indices)
/// plus every DOF touched by B, added with side "gage" when not listed.
/// K11 is factored sparsely and eliminated in column blocks.
ReducedElasticModel schur_reduce(const SparseMatrix& k, const SparseMatrix& b, std::vector<ReducedDof> dofs,
                                 const LevelTable& hydro_full);

/// Assembles a model from already-condensed operators; Gr is computed here.
ReducedElasticModel make_reduced_model(Matrix kr, Matrix br, LevelTable hydro_r, std::vector<ReducedDof> dofs);

/// Directory bundle of dense CSV matrices and a manifest (no timestamps).
void write_condense_bundle(const std::filesystem::path& dir, const ReducedElasticModel& model,
                           const std::string& config_hash);
ReducedElasticModel read_condense_bundle(const std::filesystem::path& dir);

/// Reads the DOF sidecar (columns dof_id, side, x1, x2, x3).
std::vector<ReducedDof> read_dof_sidecar(const std::filesystem::path& path);

/// Reads levels.csv (columns h_plus, h_minus) with the matching dense
/// Matrix Market table whose columns follow the rows of levels.csv.
LevelTable read_level_table(const std::filesystem::path& levels_csv, const std::filesystem::path& vectors_mtx);

}  // namespace ssgp
