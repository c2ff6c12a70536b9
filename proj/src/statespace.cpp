#include "ssgp/statespace.hpp"

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>
#include <mutex>
#include <optional>

#include "ssgp/error.hpp"

namespace ssgp {

namespace {

constexpr double kLyapunovTol = 1e-8;

void check_positive(double v, const char* what) {
  if (!std::isfinite(v) || v <= 0.0) throw ConstructionError(std::string(what) + " must be positive");
}

void check_nonnegative(double v, const char* what) {
  if (!std::isfinite(v) || v < 0.0) throw ConstructionError(std::string(what) + " must be nonnegative");
}

void finish(LtiSde& sde) {
  sde.validate();
  if (sde.lyapunov_residual() > kLyapunovTol)
    throw ConstructionError("realization violates the stationary Lyapunov equation");
}

// Largest |Re λ(F)|·dt beyond which the augmented exponential has entries of
// order e^{2 growth}; past it Qbar = P0 − Φ·P0·Φᵀ is the better-conditioned
// route for stationary blocks.
constexpr double kStationaryBranch = 4.0;

double spectral_decay(const Matrix& f) {
  if (f.size() == 0 || f.isZero(0.0)) return 0.0;
  Eigen::EigenSolver<Matrix> es(f, false);
  double m = 0.0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) m = std::max(m, std::abs(es.eigenvalues()[i].real()));
  return m;
}

// Power-of-two diagonal scaling d with D⁻¹·F·D row/column balanced
// (Osborne iteration). Exact in floating point.
Vector balance_scaling(const Matrix& f) {
  const Index n = f.rows();
  Vector d = Vector::Ones(n);
  Matrix a = f;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool done = true;
    for (Index i = 0; i < n; ++i) {
      double c = a.col(i).cwiseAbs().sum() - std::abs(a(i, i));
      double r = a.row(i).cwiseAbs().sum() - std::abs(a(i, i));
      if (c == 0.0 || r == 0.0) continue;
      const double s = c + r;
      double g = 1.0;
      while (c < r / 2.0) {
        c *= 2.0;
        r /= 2.0;
        g *= 2.0;
      }
      while (c >= r * 2.0) {
        c /= 2.0;
        r *= 2.0;
        g /= 2.0;
      }
      if (c + r < 0.95 * s) {
        d(i) *= g;
        a.row(i) /= g;
        a.col(i) *= g;
        done = false;
      }
    }
    if (done) break;
  }
  return d;
}

// Index sets of the connected components of the union sparsity pattern.
std::vector<std::vector<Index>> coupled_components(const Matrix& a, const Matrix& b, const Matrix& c) {
  const Index n = a.rows();
  std::vector<Index> parent(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
  const auto root = [&](Index i) {
    while (parent[static_cast<std::size_t>(i)] != i) i = parent[static_cast<std::size_t>(i)];
    return i;
  };
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (a(i, j) != 0.0 || b(i, j) != 0.0 || c(i, j) != 0.0) parent[static_cast<std::size_t>(root(i))] = root(j);
  std::vector<std::vector<Index>> out;
  std::vector<Index> slot(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    const Index r = root(i);
    if (slot[static_cast<std::size_t>(r)] < 0) {
      slot[static_cast<std::size_t>(r)] = static_cast<Index>(out.size());
      out.emplace_back();
    }
    out[static_cast<std::size_t>(slot[static_cast<std::size_t>(r)])].push_back(i);
  }
  return out;
}

}  // namespace

double LtiSde::lyapunov_residual() const {
  Matrix r = F * P0 + P0 * F.transpose() + L * Q * L.transpose();
  return r.norm() / std::max(1.0, P0.norm());
}

void LtiSde::validate() const {
  const Index n = F.rows();
  if (F.cols() != n) throw ConstructionError("F must be square");
  if (L.rows() != n || L.cols() != Q.rows() || Q.rows() != Q.cols())
    throw ConstructionError("L/Q dimensions inconsistent with F");
  if (H.cols() != n) throw ConstructionError("H column count must equal the state dimension");
  if (P0.rows() != n || P0.cols() != n) throw ConstructionError("P0 dimension mismatch");
  if (m0.size() != n) throw ConstructionError("m0 dimension mismatch");
  if ((P0 - P0.transpose()).norm() > 1e-12 * std::max(1.0, P0.norm()))
    throw ConstructionError("P0 must be symmetric");
  if (!F.allFinite() || !L.allFinite() || !Q.allFinite() || !H.allFinite() || !P0.allFinite())
    throw ConstructionError("non-finite entry in realization");
}

LtiSde matern_to_sde(MaternNu nu, double length, double variance) {
  check_positive(length, "Matérn lengthscale");
  check_nonnegative(variance, "Matérn variance");
  const double lam = std::sqrt(2.0 * nu_value(nu)) / length;
  const double s2 = variance;
  LtiSde sde;
  switch (nu) {
    case MaternNu::Half:
      sde.F = Matrix::Constant(1, 1, -lam);
      sde.Q = Matrix::Constant(1, 1, 2.0 * s2 * lam);
      sde.P0 = Matrix::Constant(1, 1, s2);
      break;
    case MaternNu::ThreeHalves:
      sde.F.resize(2, 2);
      sde.F << 0.0, 1.0, -lam * lam, -2.0 * lam;
      sde.Q = Matrix::Constant(1, 1, 4.0 * std::pow(lam, 3) * s2);
      sde.P0 = Matrix::Zero(2, 2);
      sde.P0(0, 0) = s2;
      sde.P0(1, 1) = lam * lam * s2;
      break;
    case MaternNu::FiveHalves: {
      const double l2 = lam * lam;
      sde.F.resize(3, 3);
      sde.F << 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -l2 * lam, -3.0 * l2, -3.0 * lam;
      sde.Q = Matrix::Constant(1, 1, 16.0 / 3.0 * s2 * std::pow(lam, 5));
      const double kappa = l2 * s2 / 3.0;
      sde.P0.resize(3, 3);
      sde.P0 << s2, 0.0, -kappa, 0.0, kappa, 0.0, -kappa, 0.0, l2 * l2 * s2;
      break;
    }
  }
  const Index n = sde.F.rows();
  sde.L = Matrix::Zero(n, 1);
  sde.L(n - 1, 0) = 1.0;
  sde.H = Matrix::Zero(1, n);
  sde.H(0, 0) = 1.0;
  sde.m0 = Vector::Zero(n);
  finish(sde);
  return sde;
}

std::vector<double> periodic_harmonic_variances(double length, double variance, int order) {
  check_positive(length, "periodic lengthscale");
  check_nonnegative(variance, "periodic variance");
  if (order < 0) throw ConstructionError("periodic order must be nonnegative");
  const double a = 1.0 / (length * length);
  std::vector<double> q(static_cast<std::size_t>(order) + 1);
  for (int j = 0; j <= order; ++j) {
    // e^{-a}·I_j(a) underflows gracefully; std::cyl_bessel_i overflows past a≈700.
    const double ij = std::cyl_bessel_i(static_cast<double>(j), a) * std::exp(-a);
    q[static_cast<std::size_t>(j)] = (j == 0 ? 1.0 : 2.0) * ij * variance;
  }
  return q;
}

int default_periodic_order(double length, double tol, int cap) {
  const std::vector<double> q = periodic_harmonic_variances(length, 1.0, cap);
  double kept = 0.0;
  for (int j = 0; j <= cap; ++j) {
    kept += q[static_cast<std::size_t>(j)];
    if (j >= 1 && 1.0 - kept <= tol) return j;
  }
  return cap;
}

LtiSde periodic_to_sde(double period, double length, double variance, int order) {
  check_positive(period, "period");
  if (order < 1) throw ConstructionError("periodic truncation order must be at least 1");
  const std::vector<double> q = periodic_harmonic_variances(length, variance, order);
  const Index n = 2 * order + 1;
  LtiSde sde;
  sde.F = Matrix::Zero(n, n);
  sde.P0 = Matrix::Zero(n, n);
  sde.H = Matrix::Zero(1, n);
  sde.P0(0, 0) = q[0];
  sde.H(0, 0) = 1.0;
  for (int j = 1; j <= order; ++j) {
    const Index c = 2 * j - 1;  // cosine component, followed by the sine component
    const double w = 2.0 * std::numbers::pi * j / period;
    sde.F(c, c + 1) = -w;
    sde.F(c + 1, c) = w;
    sde.P0(c, c) = q[static_cast<std::size_t>(j)];
    sde.P0(c + 1, c + 1) = q[static_cast<std::size_t>(j)];
    sde.H(0, c) = 1.0;
  }
  sde.L = Matrix::Zero(n, 1);
  sde.Q = Matrix::Zero(1, 1);
  sde.m0 = Vector::Zero(n);
  finish(sde);
  return sde;
}

LtiSde product_sde(const LtiSde& periodic, const LtiSde& matern) {
  periodic.validate();
  matern.validate();
  if (!periodic.Q.isZero(0.0) || !periodic.L.isZero(0.0))
    throw ConstructionError("product_sde: first factor must be a deterministic periodic realization");
  const Index np = periodic.state_dim();
  const Index nm = matern.state_dim();
  const Matrix ip = Matrix::Identity(np, np);
  const Matrix im = Matrix::Identity(nm, nm);
  LtiSde sde;
  sde.F = Eigen::kroneckerProduct(periodic.F, im).eval() + Eigen::kroneckerProduct(ip, matern.F).eval();
  sde.L = Eigen::kroneckerProduct(ip, matern.L);
  sde.Q = Eigen::kroneckerProduct(periodic.P0, matern.Q);
  sde.P0 = Eigen::kroneckerProduct(periodic.P0, matern.P0);
  sde.H = Eigen::kroneckerProduct(periodic.H, matern.H);
  sde.m0 = Vector::Zero(np * nm);
  finish(sde);
  return sde;
}

LtiSde sum_sde(std::span<const LtiSde> parts, std::span<const double> weights) {
  if (parts.empty()) throw ConstructionError("sum_sde needs at least one part");
  if (parts.size() != weights.size()) throw ConstructionError("sum_sde: one weight per part required");
  Index n = 0, ny = 0;
  const Index nz = parts[0].output_dim();
  for (const LtiSde& p : parts) {
    p.validate();
    if (p.output_dim() != nz) throw ConstructionError("sum_sde: output dimensions differ");
    n += p.state_dim();
    ny += p.Q.rows();
  }
  LtiSde sde;
  sde.F = Matrix::Zero(n, n);
  sde.L = Matrix::Zero(n, ny);
  sde.Q = Matrix::Zero(ny, ny);
  sde.P0 = Matrix::Zero(n, n);
  sde.H = Matrix::Zero(nz, n);
  sde.m0 = Vector::Zero(n);
  Index o = 0, oy = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const LtiSde& p = parts[i];
    const Index d = p.state_dim(), dy = p.Q.rows();
    sde.F.block(o, o, d, d) = p.F;
    sde.L.block(o, oy, d, dy) = p.L;
    sde.Q.block(oy, oy, dy, dy) = p.Q;
    sde.P0.block(o, o, d, d) = p.P0;
    sde.H.middleCols(o, d) = weights[i] * p.H;
    sde.m0.segment(o, d) = p.m0;
    o += d;
    oy += dy;
  }
  finish(sde);
  return sde;
}

LtiSde constant_sde(const Matrix& cov) {
  if (cov.rows() != cov.cols() || cov.rows() == 0) throw ConstructionError("constant_sde: covariance must be square");
  if (!is_psd(symmetrized(cov))) throw ConstructionError("constant_sde: covariance is not PSD");
  const Index n = cov.rows();
  LtiSde sde;
  sde.F = Matrix::Zero(n, n);
  sde.L = Matrix::Zero(n, n);
  sde.Q = Matrix::Zero(n, n);
  sde.H = Matrix::Identity(n, n);
  sde.P0 = symmetrized(cov);
  sde.m0 = Vector::Zero(n);
  finish(sde);
  return sde;
}

namespace {

std::optional<LtiSde> aperiodic_factor(const KernelExpr& k) {
  if (const auto* m = k.as<kern::Matern>()) return matern_to_sde(m->nu, m->length, m->variance);
  if (const auto* c = k.as<kern::Constant>()) return constant_sde(Matrix::Constant(1, 1, c->variance));
  return std::nullopt;
}

LtiSde periodic_default(const kern::Periodic& p) {
  return periodic_to_sde(p.period, p.length, p.variance, default_periodic_order(p.length));
}

}  // namespace

LtiSde kernel_to_sde(const KernelExpr& kernel) {
  if (auto a = aperiodic_factor(kernel)) return *a;
  if (const auto* p = kernel.as<kern::Periodic>()) return periodic_default(*p);
  if (const auto* s = kernel.as<kern::Sum>()) {
    std::vector<LtiSde> parts;
    for (const KernelExpr& t : s->terms) parts.push_back(kernel_to_sde(t));
    const std::vector<double> w(parts.size(), 1.0);
    return sum_sde(parts, w);
  }
  if (const auto* pr = kernel.as<kern::Product>()) {
    if (pr->terms.size() == 1) return kernel_to_sde(pr->terms[0]);
    if (pr->terms.size() == 2) {
      for (int i = 0; i < 2; ++i) {
        const auto* per = pr->terms[static_cast<std::size_t>(i)].as<kern::Periodic>();
        auto other = aperiodic_factor(pr->terms[static_cast<std::size_t>(1 - i)]);
        if (per && other) return product_sde(periodic_default(*per), *other);
      }
    }
    throw ConstructionError("only periodic × Matérn/constant products have a state-space form: " +
                            kernel.describe());
  }
  throw ConstructionError("kernel has no exact state-space realization: " + kernel.describe());
}

DiscreteTransition discretize(const LtiSde& sde, double dt) {
  if (!std::isfinite(dt) || dt < 0.0) throw DomainError("discretize: step must be nonnegative");
  const Index n = sde.state_dim();
  DiscreteTransition out;
  out.dt = dt;
  if (dt == 0.0) {
    out.Fbar = Matrix::Identity(n, n);
    out.Qbar = Matrix::Zero(n, n);
    return out;
  }
  const Matrix qc = sde.L * sde.Q * sde.L.transpose();
  if (qc.isZero(0.0)) {
    out.Fbar = (sde.F * dt).exp();
    out.Qbar = Matrix::Zero(n, n);
    return out;
  }
  const bool stationary =
      spectral_decay(sde.F) * dt > kStationaryBranch && sde.lyapunov_residual() <= kLyapunovTol;

  // Independent components are discretized separately; each is shifted by
  // its mean eigenvalue and balanced before exponentiating.
  const std::vector<std::vector<Index>> comps = coupled_components(sde.F, qc, sde.P0);
  out.Fbar = Matrix::Zero(n, n);
  out.Qbar = Matrix::Zero(n, n);
  for (const std::vector<Index>& idx : comps) {
    const Index m = static_cast<Index>(idx.size());
    Matrix f(m, m), q(m, m), p0(m, m);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < m; ++j) {
        f(i, j) = sde.F(idx[i], idx[j]);
        q(i, j) = qc(idx[i], idx[j]);
        p0(i, j) = sde.P0(idx[i], idx[j]);
      }
    const Vector d = balance_scaling(f);
    const Vector di = d.cwiseInverse();
    const double mu = std::min(f.trace() / static_cast<double>(m), 0.0);
    // N = D⁻¹(F − μI)D; exp(F·dt) = e^{μ·dt}·D·exp(N·dt)·D⁻¹.
    Matrix nb = di.asDiagonal() * f * d.asDiagonal();
    nb.diagonal().array() -= mu;
    const Matrix qb = di.asDiagonal() * q * di.asDiagonal();
    const Matrix en = (nb * dt).exp();
    const Matrix fbar = std::exp(mu * dt) * en;
    Matrix qbar;
    if (stationary) {
      const Matrix pb = di.asDiagonal() * p0 * di.asDiagonal();
      qbar = pb - fbar * pb * fbar.transpose();
    } else if (!qb.isZero(0.0)) {
      // Top-right block of exp([[N + 2μI, c·Q], [0, −Nᵀ]]·dt) times exp(N·dt)ᵀ/c.
      const double c = std::exp2(std::round(std::log2(std::max(nb.norm(), 1e-300) / qb.norm())));
      Matrix aug = Matrix::Zero(2 * m, 2 * m);
      aug.topLeftCorner(m, m) = nb;
      aug.topLeftCorner(m, m).diagonal().array() += 2.0 * mu;
      aug.topRightCorner(m, m) = c * qb;
      aug.bottomRightCorner(m, m) = -nb.transpose();
      const Matrix e = (aug * dt).exp();
      qbar = e.topRightCorner(m, m) * en.transpose() / c;
    } else {
      qbar = Matrix::Zero(m, m);
    }
    const Matrix fo = d.asDiagonal() * fbar * di.asDiagonal();
    const Matrix qo = d.asDiagonal() * qbar * d.asDiagonal();
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < m; ++j) {
        out.Fbar(idx[i], idx[j]) = fo(i, j);
        out.Qbar(idx[i], idx[j]) = qo(i, j);
      }
  }
  out.Qbar = symmetrized(out.Qbar);
  return out;
}

Matrix output_covariance(const LtiSde& sde, double tau) {
  const Matrix phi = (sde.F * std::abs(tau)).exp();
  return sde.H * phi * sde.P0 * sde.H.transpose();
}

// ---------------------------------------------------------------------------

Vector BlockTransition::apply(const Vector& v) const {
  Vector out(dim);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Index o = offsets[b], d = blocks[b].Fbar.rows();
    out.segment(o, d).noalias() = blocks[b].Fbar * v.segment(o, d);
  }
  return out;
}

Matrix BlockTransition::left_apply(const Matrix& m) const {
  Matrix out(dim, m.cols());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Index o = offsets[b], d = blocks[b].Fbar.rows();
    out.middleRows(o, d).noalias() = blocks[b].Fbar * m.middleRows(o, d);
  }
  return out;
}

Matrix BlockTransition::right_apply_t(const Matrix& m) const {
  Matrix out(m.rows(), dim);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Index o = offsets[b], d = blocks[b].Fbar.rows();
    out.middleCols(o, d).noalias() = m.middleCols(o, d) * blocks[b].Fbar.transpose();
  }
  return out;
}

void BlockTransition::add_noise(Matrix& m) const {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Index o = offsets[b], d = blocks[b].Qbar.rows();
    m.block(o, o, d, d) += blocks[b].Qbar;
  }
}

Matrix BlockTransition::predict_cov(const Matrix& sigma, Matrix* fs) const {
  Matrix a = left_apply(sigma);
  Matrix p = right_apply_t(a);
  add_noise(p);
  p = symmetrized(p);
  if (fs) *fs = std::move(a);
  return p;
}

Matrix BlockTransition::dense_fbar() const {
  Matrix f = Matrix::Zero(dim, dim);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Index d = blocks[b].Fbar.rows();
    f.block(offsets[b], offsets[b], d, d) = blocks[b].Fbar;
  }
  return f;
}

Matrix BlockTransition::dense_qbar() const {
  Matrix q = Matrix::Zero(dim, dim);
  add_noise(q);
  return q;
}

Index BlockDiagonalSde::add(std::string name, LtiSde block) {
  block.validate();
  const Index o = dim_;
  dim_ += block.state_dim();
  offsets_.push_back(o);
  names_.push_back(std::move(name));
  blocks_.push_back(std::move(block));
  return o;
}

Matrix BlockDiagonalSde::stationary_cov() const {
  Matrix p = Matrix::Zero(dim_, dim_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Index d = blocks_[b].state_dim();
    p.block(offsets_[b], offsets_[b], d, d) = blocks_[b].P0;
  }
  return p;
}

Vector BlockDiagonalSde::initial_mean() const {
  Vector m(dim_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) m.segment(offsets_[b], blocks_[b].state_dim()) = blocks_[b].m0;
  return m;
}

LtiSde BlockDiagonalSde::combined() const {
  Index ny = 0, nz = 0;
  for (const LtiSde& b : blocks_) {
    ny += b.Q.rows();
    nz += b.output_dim();
  }
  LtiSde sde;
  sde.F = Matrix::Zero(dim_, dim_);
  sde.L = Matrix::Zero(dim_, ny);
  sde.Q = Matrix::Zero(ny, ny);
  sde.H = Matrix::Zero(nz, dim_);
  sde.P0 = stationary_cov();
  sde.m0 = initial_mean();
  Index oy = 0, oz = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const LtiSde& b = blocks_[i];
    const Index o = offsets_[i], d = b.state_dim(), dy = b.Q.rows(), dz = b.output_dim();
    sde.F.block(o, o, d, d) = b.F;
    sde.L.block(o, oy, d, dy) = b.L;
    sde.Q.block(oy, oy, dy, dy) = b.Q;
    sde.H.block(oz, o, dz, d) = b.H;
    oy += dy;
    oz += dz;
  }
  return sde;
}

BlockTransition BlockDiagonalSde::discretize(double dt) const {
  BlockTransition t;
  t.dim = dim_;
  t.dt = dt;
  t.offsets = offsets_;
  t.blocks.reserve(blocks_.size());
  for (const LtiSde& b : blocks_) t.blocks.push_back(ssgp::discretize(b, dt));
  return t;
}

TransitionCache::TransitionCache(std::shared_ptr<const BlockDiagonalSde> sde) : sde_(std::move(sde)) {
  if (!sde_) throw ConstructionError("TransitionCache needs a model");
}

std::shared_ptr<const BlockTransition> TransitionCache::get(double dt) const {
  if (!std::isfinite(dt) || dt < 0.0) throw DomainError("transition step must be nonnegative");
  const long long key = std::llround(dt / kResolution);
  {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
  }
  auto made = std::make_shared<const BlockTransition>(sde_->discretize(static_cast<double>(key) * kResolution));
  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.emplace(key, std::move(made));
  return it->second;
}

std::size_t TransitionCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

}  // namespace ssgp
