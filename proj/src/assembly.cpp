#include "ssgp/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssgp/error.hpp"

namespace ssgp {

namespace {

Matrix sde_h_row(const LtiSde& sde) {
  if (sde.H.rows() != 1) throw ConstructionError("joint model: time kernels must have scalar output");
  return sde.H;
}

/// Load value at a query point from the tabulated mean at the seeds:
/// exact at seeds, linear between 1D seeds.
double interpolate_mean(const std::vector<Point>& seeds, const Vector& mu, const Point& q) {
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    if (seeds[s].size() == q.size() && (seeds[s] - q).cwiseAbs().maxCoeff() <= 1e-12) return mu(static_cast<Index>(s));
  }
  if (q.size() != 1 || seeds.empty() || seeds.front().size() != 1) {
    throw DomainError("load query off the seed set requires one-dimensional seeds");
  }
  std::vector<std::size_t> order(seeds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return seeds[a](0) < seeds[b](0); });
  const double x = q(0);
  if (x < seeds[order.front()](0) || x > seeds[order.back()](0)) {
    throw ExtrapolationError("load query outside the boundary seed range");
  }
  for (std::size_t k = 0; k + 1 < order.size(); ++k) {
    const double x0 = seeds[order[k]](0);
    const double x1 = seeds[order[k + 1]](0);
    if (x >= x0 && x <= x1) {
      const double w = x1 > x0 ? (x - x0) / (x1 - x0) : 0.0;
      return (1.0 - w) * mu(static_cast<Index>(order[k])) + w * mu(static_cast<Index>(order[k + 1]));
    }
  }
  return mu(static_cast<Index>(order.back()));
}

Point height_point(const KlBasis& basis, double h_plus, double h_minus) {
  const Index d = basis.seeds.empty() ? 1 : basis.seeds.front().size();
  if (d == 1) return point(h_plus);
  if (d == 2) {
    Point p(2);
    p << h_plus, h_minus;
    return p;
  }
  throw ConstructionError("height basis seeds must be one- or two-dimensional");
}

}  // namespace

Vector TimeTable::operator()(double t) const {
  if (times.size() == 0 || values.cols() != times.size()) throw ConstructionError("time table shape mismatch");
  const Index n = times.size();
  if (t < times(0) || t > times(n - 1)) throw ExtrapolationError("time outside the thermal mean table");
  if (n == 1) return values.col(0);
  const auto* begin = times.data();
  Index k = static_cast<Index>(std::upper_bound(begin, begin + n, t) - begin) - 1;
  k = std::clamp<Index>(k, 0, n - 2);
  const double w = (t - times(k)) / (times(k + 1) - times(k));
  return (1.0 - w) * values.col(k) + w * values.col(k + 1);
}

std::vector<std::pair<Index, Index>> retained_pairs(const Vector& lambda_x, const Vector& lambda_h) {
  std::vector<std::pair<Index, Index>> out;
  const Index kx = lambda_x.size();
  const Index kh = lambda_h.size();
  if (kx == 0 || kh == 0) return out;
  const double threshold = std::min(lambda_x(0) * lambda_h(kh - 1), lambda_x(kx - 1) * lambda_h(0));
  for (Index i = 0; i < kx; ++i) {
    for (Index j = 0; j < kh; ++j) {
      if (lambda_x(i) * lambda_h(j) >= threshold * (1.0 - 1e-12)) out.emplace_back(i, j);
    }
  }
  return out;
}

JointModel build_joint_model(std::shared_ptr<const ReducedElasticModel> reduced, std::vector<LoadPrior> loads,
                             ErrorModel err) {
  if (!reduced) throw ConstructionError("joint model: missing reduced model");
  const Index ng = reduced->gages();
  const auto& thermal = err.thermal;
  if (thermal.dim() != ng) throw ConstructionError("joint model: thermal dimension differs from gage count");
  if (err.bias_cov.rows() != ng || err.bias_cov.cols() != ng) {
    throw ConstructionError("joint model: bias covariance must be gages × gages");
  }
  if (!is_psd(err.bias_cov)) throw ConstructionError("joint model: bias covariance is not PSD");
  if (err.noise_var.size() != ng || (err.noise_var.array() <= 0.0).any() || !err.noise_var.allFinite()) {
    throw ConstructionError("joint model: noise variances must be positive, one per gage");
  }
  if (err.thermal_mean && err.thermal_mean->values.rows() != ng) {
    throw ConstructionError("joint model: thermal mean table must have one row per gage");
  }

  JointModel m(std::move(err));
  m.reduced_ = std::move(reduced);
  m.loads_ = std::move(loads);
  auto sde = std::make_shared<BlockDiagonalSde>();

  // Thermal: one realization per gage, mixed by the symmetric root of Σ_T.
  const Matrix& a = m.err_.thermal.sqrt_factor();
  std::vector<LtiSde> thermal_blocks;
  for (Index i = 0; i < ng; ++i) thermal_blocks.push_back(kernel_to_sde(m.err_.thermal.component_kernel(i)));
  m.thermal_.name = "thermal";
  m.thermal_.offset = 0;
  for (Index i = 0; i < ng; ++i) {
    const Index off = sde->add("thermal[" + std::to_string(i) + "]", thermal_blocks[static_cast<std::size_t>(i)]);
    m.thermal_offsets_.push_back(off);
    m.thermal_h_.push_back(sde_h_row(thermal_blocks[static_cast<std::size_t>(i)]).row(0).transpose());
  }
  m.thermal_.dim = sde->dim();

  m.bias_.name = "bias";
  m.bias_.offset = sde->add("bias", constant_sde(m.err_.bias_cov));
  m.bias_.dim = ng;

  for (std::size_t l = 0; l < m.loads_.size(); ++l) {
    const LoadPrior& lp = m.loads_[l];
    const auto idx = m.reduced_->side_indices(lp.side);
    const auto n_side = static_cast<Index>(idx.size());
    if (n_side == 0) throw ConstructionError("joint model: reduced model has no DOFs on side '" + lp.side + "'");
    if (static_cast<Index>(lp.spatial.seeds.size()) != n_side) {
      throw ConstructionError("joint model: spatial seeds of '" + lp.side + "' do not align with its DOFs");
    }
    if (lp.projection.size() != n_side || lp.mean.rows() != n_side) {
      throw ConstructionError("joint model: mean/projection of '" + lp.side + "' do not match its DOFs");
    }
    for (std::size_t k = 0; k < l; ++k) {
      if (m.loads_[k].side == lp.side) throw ConstructionError("joint model: duplicate load side '" + lp.side + "'");
    }
    Matrix gr_side(ng, n_side);
    for (Index c = 0; c < n_side; ++c) gr_side.col(c) = m.reduced_->Gr.col(idx[static_cast<std::size_t>(c)]) * lp.projection(c);
    const Matrix vx = kl_factor_matrix(lp.spatial, lp.spatial.seeds);
    m.side_maps_.push_back(gr_side * vx);

    const LtiSde time_sde = kernel_to_sde(lp.time_kernel);
    m.pair_h_.push_back(sde_h_row(time_sde).row(0).transpose());
    BlockRange range{lp.side, sde->dim(), 0};
    for (const auto& [i, j] : retained_pairs(lp.spatial.eigenvalues, lp.height.eigenvalues)) {
      LoadPair p;
      p.load = l;
      p.i = i;
      p.j = j;
      p.energy = lp.spatial.eigenvalues(i) * lp.height.eigenvalues(j);
      sde->add(lp.side + "[" + std::to_string(i) + "," + std::to_string(j) + "]", time_sde);
      p.block = sde->block_count() - 1;
      m.pairs_.push_back(p);
    }
    range.dim = sde->dim() - range.offset;
    m.load_ranges_.push_back(range);
  }

  m.h_thermal_ = Matrix::Zero(ng, m.thermal_.dim);
  for (Index i = 0; i < ng; ++i) {
    const Vector& h = m.thermal_h_[static_cast<std::size_t>(i)];
    const Index off = m.thermal_offsets_[static_cast<std::size_t>(i)];
    m.h_thermal_.middleCols(off, h.size()) = a.col(i) * h.transpose();
  }
  m.sde_ = std::move(sde);
  return m;
}

std::size_t JointModel::load_index(const std::string& side) const {
  for (std::size_t l = 0; l < loads_.size(); ++l) {
    if (loads_[l].side == side) return l;
  }
  throw DomainError("unknown load side '" + side + "'");
}

Vector JointModel::height_factor(std::size_t load, double h_plus, double h_minus) const {
  const KlBasis& hb = loads_.at(load).height;
  if (hb.modes() == 0) return Vector();
  const Point q = height_point(hb, h_plus, h_minus);
  return kl_factor_matrix(hb, std::span<const Point>(&q, 1)).row(0).transpose();
}

Matrix JointModel::thermal_rows() const {
  Matrix rows = Matrix::Zero(gages(), state_dim());
  rows.middleCols(thermal_.offset, thermal_.dim) = h_thermal_;
  return rows;
}

Matrix JointModel::bias_rows() const {
  Matrix rows = Matrix::Zero(gages(), state_dim());
  rows.middleCols(bias_.offset, bias_.dim).setIdentity();
  return rows;
}

Matrix JointModel::load_strain_rows(double h_plus, double h_minus) const {
  Matrix rows = Matrix::Zero(gages(), state_dim());
  std::vector<Vector> vh(loads_.size());
  for (std::size_t l = 0; l < loads_.size(); ++l) vh[l] = height_factor(l, h_plus, h_minus);
  for (const LoadPair& p : pairs_) {
    const Vector& hz = pair_h_[p.load];
    const Index off = sde_->block_offset(p.block);
    rows.middleCols(off, hz.size()) += (side_maps_[p.load].col(p.i) * vh[p.load](p.j)) * hz.transpose();
  }
  return rows;
}

Vector JointModel::mean_elastic_strain(double h_plus, double h_minus) const {
  Vector w_r = Vector::Zero(reduced_->size());
  for (const LoadPrior& lp : loads_) {
    const Vector mu = lp.mean(h_plus, h_minus);
    const auto idx = reduced_->side_indices(lp.side);
    for (std::size_t c = 0; c < idx.size(); ++c) {
      w_r(idx[c]) += lp.projection(static_cast<Index>(c)) * mu(static_cast<Index>(c));
    }
  }
  return reduced_->reduced_strain(h_plus, h_minus, w_r);
}

Vector JointModel::thermal_mean(double t) const {
  if (!err_.thermal_mean) return Vector::Zero(gages());
  return (*err_.thermal_mean)(t);
}

ObservationModel JointModel::observe(double t, double h_plus, double h_minus) const {
  ObservationModel obs;
  obs.mean = mean_elastic_strain(h_plus, h_minus) + thermal_mean(t);
  obs.H = load_strain_rows(h_plus, h_minus);
  obs.H.middleCols(thermal_.offset, thermal_.dim) = h_thermal_;
  obs.H.middleCols(bias_.offset, bias_.dim).setIdentity();
  return obs;
}

std::vector<LatentChannel> JointModel::channels() const {
  std::vector<LatentChannel> out;
  const Index n = state_dim();
  for (Index i = 0; i < gages(); ++i) {
    LatentChannel c;
    c.name = "thermal[" + std::to_string(i) + "]";
    c.rows = Matrix::Zero(1, n);
    const Vector& h = thermal_h_[static_cast<std::size_t>(i)];
    c.rows.middleCols(thermal_offsets_[static_cast<std::size_t>(i)], h.size()) = h.transpose();
    c.scale = Matrix::Identity(1, 1);
    c.kernel = err_.thermal.component_kernel(i);
    out.push_back(std::move(c));
  }
  LatentChannel bias;
  bias.name = "bias";
  bias.rows = bias_rows();
  bias.scale = err_.bias_cov;
  bias.kernel = KernelExpr::constant(1.0);
  out.push_back(std::move(bias));
  for (const LoadPair& p : pairs_) {
    LatentChannel c;
    c.name = sde_->block_name(p.block);
    c.rows = Matrix::Zero(1, n);
    const Vector& hz = pair_h_[p.load];
    c.rows.middleCols(sde_->block_offset(p.block), hz.size()) = hz.transpose();
    c.scale = Matrix::Identity(1, 1);
    c.kernel = loads_[p.load].time_kernel;
    out.push_back(std::move(c));
  }
  return out;
}

Matrix JointModel::channel_output_map(double h_plus, double h_minus) const {
  const Index ng = gages();
  const auto n_pairs = static_cast<Index>(pairs_.size());
  Matrix map = Matrix::Zero(ng, 2 * ng + n_pairs);
  map.leftCols(ng) = err_.thermal.sqrt_factor();
  map.middleCols(ng, ng).setIdentity();
  std::vector<Vector> vh(loads_.size());
  for (std::size_t l = 0; l < loads_.size(); ++l) vh[l] = height_factor(l, h_plus, h_minus);
  for (Index k = 0; k < n_pairs; ++k) {
    const LoadPair& p = pairs_[static_cast<std::size_t>(k)];
    map.col(2 * ng + k) = side_maps_[p.load].col(p.i) * vh[p.load](p.j);
  }
  return map;
}

nlohmann::json JointModel::accounting(Index times) const {
  using nlohmann::json;
  const Index ng = gages();
  json blocks = json::array();
  for (std::size_t b = 0; b < sde_->block_count(); ++b) {
    blocks.push_back({{"name", sde_->block_name(b)}, {"offset", sde_->block_offset(b)}, {"dim", sde_->block(b).state_dim()}});
  }
  json sides = json::array();
  Index spatial_modes = 0;
  Index boundary_dofs = 0;
  for (std::size_t l = 0; l < loads_.size(); ++l) {
    const LoadPrior& lp = loads_[l];
    const auto n_pairs = std::count_if(pairs_.begin(), pairs_.end(), [&](const LoadPair& p) { return p.load == l; });
    const auto n_dofs = static_cast<Index>(lp.spatial.seeds.size());
    spatial_modes += lp.spatial.modes();
    boundary_dofs += n_dofs;
    sides.push_back({{"side", lp.side},
                     {"boundary_dofs", n_dofs},
                     {"spatial_modes", lp.spatial.modes()},
                     {"spatial_energy_fraction", lp.spatial.captured_fraction()},
                     {"height_modes", lp.height.modes()},
                     {"height_energy_fraction", lp.height.captured_fraction()},
                     {"retained_pairs", n_pairs},
                     {"state_dim", load_ranges_[l].dim}});
  }
  const Index reduced_params = (spatial_modes + ng) * times;
  const Index full_params = (boundary_dofs + ng) * times;
  json out;
  out["state_dim"] = state_dim();
  out["gages"] = ng;
  out["times"] = times;
  out["thermal_state_dim"] = thermal_.dim;
  out["bias_state_dim"] = bias_.dim;
  out["blocks"] = blocks;
  out["loads"] = sides;
  out["parameters"] = {
      {"reduced", reduced_params},
      {"reduced_rule", "(spatial modes + thermal channels) x times"},
      {"reduced_with_bias", reduced_params + ng},
      {"full", full_params},
      {"full_rule", "(boundary load DOFs + thermal channels) x times"},
      {"full_with_bias", full_params + ng},
      {"state_trajectory", state_dim() * times},
  };
  out["note"] =
      "Quoted totals are reproduced by the stated rules only when bias terms are counted once rather than per "
      "time; the trajectory count is the number of latent state values actually estimated.";
  return out;
}

LoadMarginals loads_from_state(const JointModel& model, const std::string& side, const Vector& mean, const Matrix& cov,
                               double h_plus, double h_minus, std::span<const Point> queries) {
  const std::size_t l = model.load_index(side);
  const LoadPrior& lp = model.loads()[l];
  const Index n = model.state_dim();
  if (mean.size() != n || cov.rows() != n || cov.cols() != n) throw DomainError("loads_from_state: state size mismatch");
  const Vector mu_seeds = lp.mean(h_plus, h_minus);
  const Vector vh = model.height_factor(l, h_plus, h_minus);
  const auto nq = static_cast<Index>(queries.size());
  Matrix vx = lp.spatial.modes() > 0 ? kl_factor_matrix(lp.spatial, queries) : Matrix::Zero(nq, 0);

  Matrix rows = Matrix::Zero(nq, n);
  const auto dyn = model.dynamics();
  for (const LoadPair& p : model.pairs()) {
    if (p.load != l) continue;
    const Index off = dyn->block_offset(p.block);
    const Matrix& h = dyn->block(p.block).H;
    rows.middleCols(off, h.cols()) += (vx.col(p.i) * vh(p.j)) * h.row(0);
  }
  LoadMarginals out;
  out.mean.resize(nq);
  for (Index q = 0; q < nq; ++q) out.mean(q) = interpolate_mean(lp.spatial.seeds, mu_seeds, queries[static_cast<std::size_t>(q)]);
  out.mean += rows * mean;
  out.variance = (rows * cov).cwiseProduct(rows).rowwise().sum().cwiseMax(0.0);
  return out;
}

}  // namespace ssgp
