#include "ssgp/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "ssgp/error.hpp"

namespace ssgp {

DensePrior assemble_dense_prior(const std::vector<LatentChannel>& channels, const Vector& channel_mean,
                                std::span<const double> times, Index guard) {
  Index block = 0;
  for (const auto& c : channels) {
    if (c.scale.rows() != c.scale.cols() || c.scale.rows() != c.rows.rows()) {
      throw ConstructionError("dense prior: channel scale does not match its outputs");
    }
    block += c.scale.rows();
  }
  if (channel_mean.size() != block) throw ConstructionError("dense prior: channel mean length mismatch");
  const auto m = static_cast<Index>(times.size());
  if (block * m > guard) {
    throw SizeError("dense prior of dimension " + std::to_string(block * m) + " exceeds the guard " +
                    std::to_string(guard));
  }
  DensePrior p;
  p.times = m;
  p.block = block;
  p.mean = channel_mean.replicate(m, 1);
  p.cov = Matrix::Zero(block * m, block * m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j <= i; ++j) {
      Index off = 0;
      for (const auto& c : channels) {
        const Index d = c.scale.rows();
        const double k = eval(c.kernel, times[static_cast<std::size_t>(i)], times[static_cast<std::size_t>(j)]);
        p.cov.block(i * block + off, j * block + off, d, d) = k * c.scale;
        if (i != j) p.cov.block(j * block + off, i * block + off, d, d) = k * c.scale.transpose();
        off += d;
      }
    }
  }
  return p;
}

DensePrior assemble_dense_prior(const JointModel& model, std::span<const double> times, Index guard) {
  const auto channels = model.channels();
  const Vector m0 = model.dynamics()->initial_mean();
  Index block = 0;
  for (const auto& c : channels) block += c.rows.rows();
  Vector mean(block);
  Index off = 0;
  for (const auto& c : channels) {
    mean.segment(off, c.rows.rows()) = c.rows * m0;
    off += c.rows.rows();
  }
  return assemble_dense_prior(channels, mean, times, guard);
}

DenseObservation dense_observation(const JointModel& model, std::span<const double> times,
                                   std::span<const double> h_plus, std::span<const double> h_minus,
                                   const Matrix& strains) {
  const auto m = static_cast<Index>(times.size());
  const Index ng = model.gages();
  if (strains.rows() != ng || strains.cols() != m || static_cast<Index>(h_plus.size()) != m ||
      static_cast<Index>(h_minus.size()) != m) {
    throw DomainError("dense observation: inconsistent shapes");
  }
  Index rows = 0;
  for (Index i = 0; i < strains.size(); ++i) rows += std::isfinite(strains.data()[i]) ? 1 : 0;
  const Matrix probe = model.channel_output_map(h_plus.empty() ? 0.0 : h_plus[0], h_minus.empty() ? 0.0 : h_minus[0]);
  const Index block = probe.cols();
  DenseObservation o;
  o.H = Matrix::Zero(rows, block * m);
  o.offset.resize(rows);
  o.noise_var.resize(rows);
  o.y.resize(rows);
  const Vector noise = model.noise_variance();
  Index r = 0;
  for (Index i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Matrix map = model.channel_output_map(h_plus[k], h_minus[k]);
    const Vector mu = model.mean_elastic_strain(h_plus[k], h_minus[k]) + model.thermal_mean(times[k]);
    for (Index g = 0; g < ng; ++g) {
      if (!std::isfinite(strains(g, i))) continue;
      o.H.block(r, i * block, 1, block) = map.row(g);
      o.offset(r) = mu(g);
      o.noise_var(r) = noise(g);
      o.y(r) = strains(g, i);
      ++r;
    }
  }
  return o;
}

DensePosterior dense_condition(const DensePrior& prior, const DenseObservation& obs) {
  const Index n = prior.mean.size();
  if (prior.cov.rows() != n || obs.H.cols() != n || obs.offset.size() != obs.H.rows() ||
      obs.noise_var.size() != obs.H.rows() || obs.y.size() != obs.H.rows()) {
    throw DomainError("dense_condition: dimension mismatch");
  }
  if (obs.H.rows() == 0) return {prior.mean, prior.cov};
  const Matrix sh = prior.cov * obs.H.transpose();
  Matrix s = obs.H * sh;
  s.diagonal() += obs.noise_var;
  s = symmetrized(s);
  const Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw NumericalError("dense_condition: data covariance is singular");
  const Vector resid = obs.y - obs.offset - obs.H * prior.mean;
  DensePosterior post;
  post.mean = prior.mean + sh * llt.solve(resid);
  post.cov = symmetrized(prior.cov - sh * llt.solve(sh.transpose()));
  return post;
}

DensePosterior dense_condition_information(const DensePrior& prior, const DenseObservation& obs) {
  const Index n = prior.mean.size();
  if ((obs.noise_var.array() <= 0.0).any()) throw DomainError("information form needs positive noise");
  const Eigen::LDLT<Matrix> prior_fact(prior.cov);
  if (prior_fact.info() != Eigen::Success || !prior_fact.isPositive()) {
    throw NumericalError("information form: prior covariance is not invertible");
  }
  const Matrix prior_inv = prior_fact.solve(Matrix::Identity(n, n));
  const Vector rinv = obs.noise_var.cwiseInverse();
  Matrix info = prior_inv + obs.H.transpose() * rinv.asDiagonal() * obs.H;
  info = symmetrized(info);
  const Eigen::LDLT<Matrix> info_fact(info);
  if (info_fact.info() != Eigen::Success) throw NumericalError("information form: posterior precision is singular");
  const Vector rhs = prior_inv * prior.mean + obs.H.transpose() * rinv.cwiseProduct(obs.y - obs.offset);
  DensePosterior post;
  post.cov = symmetrized(info_fact.solve(Matrix::Identity(n, n)));
  post.mean = info_fact.solve(rhs);
  return post;
}

OracleComparison compare_with_oracle(const JointModel& model, const ObservationSeries& obs, Index guard) {
  obs.validate();
  const DensePrior prior = assemble_dense_prior(model, obs.times, guard);
  const DenseObservation dobs = dense_observation(model, obs.times, obs.h_plus, obs.h_minus, obs.strains);
  const DensePosterior post = dense_condition(prior, dobs);

  const auto channels = model.channels();
  Matrix rows(prior.block, model.state_dim());
  Index off = 0;
  for (const auto& c : channels) {
    rows.middleRows(off, c.rows.rows()) = c.rows;
    off += c.rows.rows();
  }

  const Index m = obs.size();
  const Index b = prior.block;
  // With all data in, the last analyzed state is the dense posterior at t_M.
  Vector filter_last;
  FilterResult fr = kalman_filter(model, obs, {}, [&](const FilterStep& s) {
    if (s.index == m - 1) filter_last = rows * s.analyzed.mean;
  });
  Matrix sm_mean(b, m), sm_var(b, m), or_mean(b, m), or_var(b, m);
  double cov_err = 0.0;
  double cov_scale = 0.0;
  rts_smooth(model, std::move(fr), [&](Index i, const GaussianState& s) {
    const Matrix c = rows * s.cov * rows.transpose();
    const Matrix oc = post.cov.block(i * b, i * b, b, b);
    sm_mean.col(i) = rows * s.mean;
    sm_var.col(i) = c.diagonal();
    or_mean.col(i) = post.mean.segment(i * b, b);
    or_var.col(i) = oc.diagonal();
    cov_err = std::max(cov_err, (c - oc).cwiseAbs().maxCoeff());
    cov_scale = std::max(cov_scale, oc.cwiseAbs().maxCoeff());
  });

  OracleComparison out;
  out.mean_rel = relative_max(sm_mean, or_mean);
  out.variance_rel = relative_max(sm_var, or_var);
  out.covariance_rel = cov_err / std::max(cov_scale, 1e-300);
  out.filter_last_rel = relative_max(filter_last, or_mean.col(m - 1));
  out.dense_dim = prior.mean.size();
  out.state_dim = model.state_dim();
  out.times = m;
  return out;
}

}  // namespace ssgp
