#include "ssgp/condense.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "ssgp/error.hpp"
#include "ssgp/io.hpp"

namespace ssgp {

namespace {

constexpr Index kColumnBlock = 64;
constexpr double kGridTol = 1e-9;

// Cell index and fraction for linear interpolation on a sorted axis.
std::pair<std::size_t, double> locate(const std::vector<double>& axis, double x, const char* name) {
  if (axis.size() == 1) return {0, 0.0};
  const double lo = axis.front(), hi = axis.back();
  const double tol = kGridTol * std::max(1.0, hi - lo);
  if (!std::isfinite(x) || x < lo - tol || x > hi + tol)
    throw ExtrapolationError(std::string("water level ") + name + " = " + io::format_double(x) + " outside [" +
                             io::format_double(lo) + ", " + io::format_double(hi) + "]");
  x = std::clamp(x, lo, hi);
  auto it = std::upper_bound(axis.begin(), axis.end(), x);
  std::size_t i = static_cast<std::size_t>(std::distance(axis.begin(), it));
  i = std::clamp<std::size_t>(i, 1, axis.size() - 1) - 1;
  return {i, (x - axis[i]) / (axis[i + 1] - axis[i])};
}

void check_axis(const std::vector<double>& a, const char* name) {
  if (a.empty()) throw ConstructionError(std::string("level table: empty ") + name + " axis");
  for (std::size_t i = 1; i < a.size(); ++i)
    if (!(a[i] > a[i - 1])) throw ConstructionError(std::string("level table: ") + name + " axis must increase");
}

}  // namespace

LevelTable::LevelTable(std::vector<double> h_plus, std::vector<double> h_minus, Matrix values)
    : hp_(std::move(h_plus)), hm_(std::move(h_minus)), values_(std::move(values)) {
  check_axis(hp_, "h_plus");
  check_axis(hm_, "h_minus");
  if (values_.cols() != static_cast<Index>(hp_.size() * hm_.size()))
    throw ConstructionError("level table: one column per grid node required");
  if (!values_.allFinite()) throw ConstructionError("level table: non-finite entry");
}

LevelTable LevelTable::from_columns(std::span<const double> h_plus, std::span<const double> h_minus,
                                    const Matrix& values) {
  if (h_plus.size() != h_minus.size() || static_cast<Index>(h_plus.size()) != values.cols())
    throw ConstructionError("level table: level count does not match the number of columns");
  std::set<double> sp(h_plus.begin(), h_plus.end()), sm(h_minus.begin(), h_minus.end());
  std::vector<double> hp(sp.begin(), sp.end()), hm(sm.begin(), sm.end());
  if (hp.size() * hm.size() != h_plus.size())
    throw ConstructionError("level table: levels do not form a full (h_plus, h_minus) grid");
  Matrix v(values.rows(), values.cols());
  std::vector<bool> seen(h_plus.size(), false);
  for (std::size_t c = 0; c < h_plus.size(); ++c) {
    const auto ip = static_cast<std::size_t>(std::lower_bound(hp.begin(), hp.end(), h_plus[c]) - hp.begin());
    const auto im = static_cast<std::size_t>(std::lower_bound(hm.begin(), hm.end(), h_minus[c]) - hm.begin());
    const std::size_t col = ip + hp.size() * im;
    if (seen[col]) throw ConstructionError("level table: duplicate level pair");
    seen[col] = true;
    v.col(static_cast<Index>(col)) = values.col(static_cast<Index>(c));
  }
  return LevelTable(std::move(hp), std::move(hm), std::move(v));
}

Vector LevelTable::operator()(double h_plus, double h_minus) const {
  if (values_.size() == 0 && hp_.empty()) throw DomainError("level table is empty");
  const auto [ip, fp] = locate(hp_, h_plus, "h_plus");
  const auto [im, fm] = locate(hm_, h_minus, "h_minus");
  const std::size_t np = hp_.size();
  auto col = [&](std::size_t a, std::size_t b) { return values_.col(static_cast<Index>(a + np * b)); };
  const std::size_t ip1 = hp_.size() > 1 ? ip + 1 : ip;
  const std::size_t im1 = hm_.size() > 1 ? im + 1 : im;
  return (1 - fp) * (1 - fm) * col(ip, im) + fp * (1 - fm) * col(ip1, im) + (1 - fp) * fm * col(ip, im1) +
         fp * fm * col(ip1, im1);
}

LevelTable LevelTable::transformed(const Matrix& map) const { return LevelTable(hp_, hm_, map * values_); }

std::vector<Index> ReducedElasticModel::side_indices(const std::string& side) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < dofs.size(); ++i)
    if (dofs[i].side == side) out.push_back(static_cast<Index>(i));
  return out;
}

Vector ReducedElasticModel::reduced_strain(double h_plus, double h_minus, const Vector& w_r) const {
  if (w_r.size() != size()) throw DomainError("reduced_strain: load vector length must equal the reduced size");
  return Gr * (hydro(h_plus, h_minus) + w_r);
}

Vector ReducedElasticModel::hydro_strain(double h_plus, double h_minus) const {
  return Gr * hydro(h_plus, h_minus);
}

ReducedElasticModel make_reduced_model(Matrix kr, Matrix br, LevelTable hydro_r, std::vector<ReducedDof> dofs) {
  const Index n = kr.rows();
  if (kr.cols() != n || br.cols() != n || hydro_r.rows() != n || static_cast<Index>(dofs.size()) != n)
    throw ConstructionError("reduced model: inconsistent dimensions");
  if ((kr - kr.transpose()).norm() > 1e-10 * kr.norm()) throw ConstructionError("reduced model: Kr not symmetric");
  Eigen::LLT<Matrix> llt(symmetrized(kr));
  if (llt.info() != Eigen::Success) throw NumericalError("reduced model: Kr is not positive definite");
  ReducedElasticModel m;
  m.Gr = llt.solve(br.transpose()).transpose();
  m.Kr = std::move(kr);
  m.Br = std::move(br);
  m.hydro = std::move(hydro_r);
  m.dofs = std::move(dofs);
  return m;
}

ReducedElasticModel schur_reduce(const SparseMatrix& k, const SparseMatrix& b, std::vector<ReducedDof> dofs,
                                 const LevelTable& hydro_full) {
  const Index n = k.rows();
  if (k.cols() != n) throw DomainError("schur_reduce: K must be square");
  if (b.cols() != n) throw DomainError("schur_reduce: B column count must equal the DOF count");
  if (hydro_full.rows() != n) throw DomainError("schur_reduce: hydrostatic vectors must have one row per DOF");
  if (dofs.empty()) throw DomainError("schur_reduce: empty reduced index set");

  std::vector<Index> pos(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < dofs.size(); ++i) {
    const Index f = dofs[i].full_index;
    if (f < 0 || f >= n) throw DomainError("schur_reduce: reduced index " + std::to_string(f) + " out of range");
    if (pos[static_cast<std::size_t>(f)] >= 0) throw DomainError("schur_reduce: duplicate reduced index");
    pos[static_cast<std::size_t>(f)] = static_cast<Index>(i);
  }
  std::set<Index> touched;
  for (Index c = 0; c < b.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(b, c); it; ++it)
      if (it.value() != 0.0) touched.insert(it.col());
  for (Index f : touched) {
    if (pos[static_cast<std::size_t>(f)] < 0) {
      pos[static_cast<std::size_t>(f)] = static_cast<Index>(dofs.size());
      dofs.push_back(ReducedDof{f, "gage", {0.0, 0.0, 0.0}});
    }
  }
  const Index nr = static_cast<Index>(dofs.size());
  const Index nc = n - nr;
  if (nc <= 0) throw DomainError("schur_reduce: nothing left to condense");

  // Interior numbering.
  std::vector<Index> ipos(static_cast<std::size_t>(n), -1);
  {
    Index c = 0;
    for (Index f = 0; f < n; ++f)
      if (pos[static_cast<std::size_t>(f)] < 0) ipos[static_cast<std::size_t>(f)] = c++;
  }

  std::vector<Triplet> t11, t12;
  Matrix k22 = Matrix::Zero(nr, nr);
  for (Index c = 0; c < k.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(k, c); it; ++it) {
      const auto ri = static_cast<std::size_t>(it.row()), ci = static_cast<std::size_t>(it.col());
      const bool rr = pos[ri] >= 0, cr = pos[ci] >= 0;
      if (!rr && !cr) t11.emplace_back(ipos[ri], ipos[ci], it.value());
      else if (!rr && cr) t12.emplace_back(ipos[ri], pos[ci], it.value());
      else if (rr && cr) k22(pos[ri], pos[ci]) += it.value();
    }
  }
  SparseMatrix k11(nc, nc), k12(nc, nr);
  k11.setFromTriplets(t11.begin(), t11.end());
  k12.setFromTriplets(t12.begin(), t12.end());

  Eigen::SimplicialLLT<SparseMatrix> chol(k11);
  if (chol.info() != Eigen::Success) throw NumericalError("schur_reduce: interior stiffness block is singular");

  Matrix kr = k22;
  for (Index c0 = 0; c0 < nr; c0 += kColumnBlock) {
    const Index w = std::min(kColumnBlock, nr - c0);
    const Matrix rhs = Matrix(k12.middleCols(c0, w));
    const Matrix x = chol.solve(rhs);
    if (chol.info() != Eigen::Success) throw NumericalError("schur_reduce: interior solve failed");
    kr.middleCols(c0, w).noalias() -= k12.transpose() * x;
  }
  kr = symmetrized(kr);

  // f_r = f₂ − K21·K11⁻¹·f₁ for every tabulated level.
  const Matrix& hv = hydro_full.values();
  Matrix f1(nc, hv.cols()), f2(nr, hv.cols());
  for (Index f = 0; f < n; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    if (pos[fi] >= 0) f2.row(pos[fi]) = hv.row(f);
    else f1.row(ipos[fi]) = hv.row(f);
  }
  Matrix fr = f2;
  if (hv.cols() > 0) fr.noalias() -= k12.transpose() * chol.solve(f1);

  Matrix br = Matrix::Zero(b.rows(), nr);
  for (Index c = 0; c < b.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(b, c); it; ++it) br(it.row(), pos[static_cast<std::size_t>(it.col())]) += it.value();

  return make_reduced_model(std::move(kr), std::move(br), LevelTable(hydro_full.h_plus(), hydro_full.h_minus(), fr),
                            std::move(dofs));
}

void write_condense_bundle(const std::filesystem::path& dir, const ReducedElasticModel& model,
                           const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  io::write_csv_matrix(dir / "Kr.csv", model.Kr);
  io::write_csv_matrix(dir / "Br.csv", model.Br);
  io::write_csv_matrix(dir / "Gr.csv", model.Gr);
  io::write_csv_matrix(dir / "hydro_r.csv", model.hydro.values());
  Matrix levels(model.hydro.values().cols(), 2);
  const auto& hp = model.hydro.h_plus();
  const auto& hm = model.hydro.h_minus();
  for (std::size_t im = 0; im < hm.size(); ++im)
    for (std::size_t ip = 0; ip < hp.size(); ++ip) {
      const auto c = static_cast<Index>(ip + hp.size() * im);
      levels(c, 0) = hp[ip];
      levels(c, 1) = hm[im];
    }
  io::write_csv_matrix(dir / "levels.csv", levels, {"h_plus", "h_minus"});
  std::string dofs = "dof_id,side,x1,x2,x3\n";
  for (const ReducedDof& d : model.dofs)
    dofs += std::to_string(d.full_index) + "," + d.side + "," + io::format_double(d.x[0]) + "," +
            io::format_double(d.x[1]) + "," + io::format_double(d.x[2]) + "\n";
  io::write_text(dir / "dofs.csv", dofs);
  std::map<std::string, Index> sides;
  for (const ReducedDof& d : model.dofs) ++sides[d.side];
  nlohmann::json man = {{"config_hash", config_hash},
                        {"reduced_dofs", model.size()},
                        {"gages", model.gages()},
                        {"levels", model.hydro.values().cols()},
                        {"side_counts", sides},
                        {"files", {"Kr.csv", "Br.csv", "Gr.csv", "hydro_r.csv", "levels.csv", "dofs.csv"}}};
  io::write_text(dir / "manifest.json", man.dump(2) + "\n");
}

std::vector<ReducedDof> read_dof_sidecar(const std::filesystem::path& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::size_t ci = t.column("dof_id"), cs = t.column("side");
  const bool has_x = t.has_column("x1");
  std::vector<ReducedDof> out;
  for (const auto& r : t.rows) {
    ReducedDof d;
    const double id = io::parse_double(r[ci], path.string() + " dof_id");
    if (id < 0 || id != std::floor(id)) throw ConfigError(path.string() + ": dof_id must be a nonnegative integer");
    d.full_index = static_cast<Index>(id);
    d.side = r[cs];
    if (has_x) {
      const char* names[3] = {"x1", "x2", "x3"};
      for (int a = 0; a < 3; ++a)
        if (t.has_column(names[a])) d.x[static_cast<std::size_t>(a)] = io::parse_double(r[t.column(names[a])], path.string());
    }
    out.push_back(std::move(d));
  }
  return out;
}

LevelTable read_level_table(const std::filesystem::path& levels_csv, const std::filesystem::path& vectors_mtx) {
  const io::CsvTable t = io::read_csv(levels_csv);
  const std::size_t cp = t.column("h_plus");
  const bool has_m = t.has_column("h_minus");
  std::vector<double> hp, hm;
  for (const auto& r : t.rows) {
    hp.push_back(io::parse_double(r[cp], levels_csv.string()));
    hm.push_back(has_m ? io::parse_double(r[t.column("h_minus")], levels_csv.string()) : 0.0);
  }
  const Matrix v = vectors_mtx.extension() == ".csv" ? io::read_csv_matrix(vectors_mtx)
                                                       : io::read_matrix_market_dense(vectors_mtx);
  if (v.cols() != static_cast<Index>(hp.size()))
    throw ConfigError(vectors_mtx.string() + ": column count does not match " + levels_csv.string());
  try {
    return LevelTable::from_columns(hp, hm, v);
  } catch (const ConstructionError& e) {
    throw ConfigError(levels_csv.string() + ": " + e.what());
  }
}

ReducedElasticModel read_condense_bundle(const std::filesystem::path& dir) {
  const Matrix kr = io::read_csv_matrix(dir / "Kr.csv");
  const Matrix br = io::read_csv_matrix(dir / "Br.csv");
  LevelTable hydro = read_level_table(dir / "levels.csv", dir / "hydro_r.csv");
  ReducedElasticModel m = make_reduced_model(kr, br, std::move(hydro), read_dof_sidecar(dir / "dofs.csv"));
  return m;
}

}  // namespace ssgp
