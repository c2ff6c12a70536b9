#include "ssgp/smoother.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "ssgp/error.hpp"
#include "ssgp/io.hpp"

namespace ssgp {

// ---------------------------------------------------------------- series

void ObservationSeries::validate() const {
  const auto m = times.size();
  if (h_plus.size() != m || h_minus.size() != m || static_cast<std::size_t>(strains.cols()) != m) {
    throw DomainError("observation series: times, levels and strains disagree in length");
  }
  if (!gage_ids.empty() && static_cast<Index>(gage_ids.size()) != strains.rows()) {
    throw DomainError("observation series: gage id count differs from strain rows");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::isfinite(times[i])) throw DomainError("observation series: non-finite time at index " + std::to_string(i));
    if (i > 0 && !(times[i] > times[i - 1])) {
      throw DomainError("observation series: times not strictly increasing at index " + std::to_string(i));
    }
    if (!std::isfinite(h_plus[i]) || !std::isfinite(h_minus[i])) {
      throw DomainError("observation series: non-finite water level at index " + std::to_string(i));
    }
  }
  for (Index i = 0; i < strains.size(); ++i) {
    if (std::isinf(strains.data()[i])) throw DomainError("observation series: infinite strain value");
  }
}

StrainUnit parse_strain_unit(const std::string& text) {
  if (text == "strain") return StrainUnit::Strain;
  if (text == "microstrain") return StrainUnit::Microstrain;
  throw ConfigError("unknown strain unit '" + text + "' (expected strain or microstrain)");
}

double strain_unit_scale(StrainUnit unit) { return unit == StrainUnit::Microstrain ? 1e-6 : 1.0; }

namespace {

bool missing_cell(const std::string& s) { return s.empty() || s == "nan" || s == "NaN" || s == "NA"; }

}  // namespace

ObservationSeries read_observation_csv(const std::filesystem::path& path, StrainUnit unit) {
  const io::CsvTable table = io::read_csv(path);
  if (table.header.size() < 4 || table.header[0] != "time_iso8601" || table.header[1] != "h_plus" ||
      table.header[2] != "h_minus") {
    throw ConfigError(path.string() + ": expected columns time_iso8601,h_plus,h_minus,<gages...>");
  }
  const auto ng = static_cast<Index>(table.header.size() - 3);
  const auto m = table.rows.size();
  ObservationSeries s;
  s.gage_ids.assign(table.header.begin() + 3, table.header.end());
  s.strains.resize(ng, static_cast<Index>(m));
  const double scale = strain_unit_scale(unit);
  double prev_seconds = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < m; ++r) {
    const auto& row = table.rows[r];
    const std::string where = path.string() + " row " + std::to_string(r + 1);
    double seconds = 0.0;
    try {
      seconds = io::parse_iso8601(row[0]);
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (!(seconds > prev_seconds)) throw ConfigError(where + ": timestamp " + row[0] + " is not after the previous row");
    prev_seconds = seconds;
    if (r == 0) s.epoch_seconds = seconds;
    s.times.push_back((seconds - s.epoch_seconds) / io::kSecondsPerDay);
    for (int lv = 0; lv < 2; ++lv) {
      auto& dst = lv == 0 ? s.h_plus : s.h_minus;
      const std::string& cell = row[static_cast<std::size_t>(1 + lv)];
      if (missing_cell(cell)) {
        if (dst.empty()) throw ConfigError(where + ": first row must carry both water levels");
        dst.push_back(dst.back());
      } else {
        dst.push_back(io::parse_double(cell, where));
      }
    }
    for (Index g = 0; g < ng; ++g) {
      const std::string& cell = row[static_cast<std::size_t>(3 + g)];
      s.strains(g, static_cast<Index>(r)) =
          missing_cell(cell) ? std::numeric_limits<double>::quiet_NaN() : scale * io::parse_double(cell, where);
    }
  }
  return s;
}

void write_observation_csv(const std::filesystem::path& path, const ObservationSeries& series) {
  std::ostringstream out;
  out << "time_iso8601,h_plus,h_minus";
  for (Index g = 0; g < series.gages(); ++g) {
    out << ',' << (series.gage_ids.empty() ? "gage_" + std::to_string(g) : series.gage_ids[static_cast<std::size_t>(g)]);
  }
  out << '\n';
  for (Index i = 0; i < series.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out << io::format_iso8601(series.epoch_seconds + series.times[k] * io::kSecondsPerDay) << ','
        << io::format_double(series.h_plus[k]) << ',' << io::format_double(series.h_minus[k]);
    for (Index g = 0; g < series.gages(); ++g) {
      out << ',';
      if (series.present(g, i)) out << io::format_double(series.strains(g, i));
    }
    out << '\n';
  }
  io::write_text(path, out.str());
}

// ---------------------------------------------------------------- stores

namespace {

std::size_t record_doubles(Index n) { return static_cast<std::size_t>(n + n * (n + 1) / 2); }

void pack(const Vector& mean, const Matrix& cov, std::vector<double>& buf) {
  const Index n = mean.size();
  buf.resize(record_doubles(n));
  std::copy(mean.data(), mean.data() + n, buf.begin());
  std::size_t k = static_cast<std::size_t>(n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i <= j; ++i) buf[k++] = cov(i, j);
  }
}

void unpack(const std::vector<double>& buf, Index n, Vector& mean, Matrix& cov) {
  mean.resize(n);
  cov.resize(n, n);
  std::copy(buf.begin(), buf.begin() + n, mean.data());
  std::size_t k = static_cast<std::size_t>(n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i <= j; ++i) {
      cov(i, j) = buf[k];
      cov(j, i) = buf[k];
      ++k;
    }
  }
}

class MemoryStore final : public TrajectoryStore {
 public:
  MemoryStore(Index dim, Index count) : TrajectoryStore(dim, count), records_(static_cast<std::size_t>(count)) {}
  void put(Index i, const Vector& mean, const Matrix& cov) override { pack(mean, cov, records_.at(static_cast<std::size_t>(i))); }
  void get(Index i, Vector& mean, Matrix& cov) const override {
    const auto& r = records_.at(static_cast<std::size_t>(i));
    if (r.empty()) throw DomainError("trajectory store: record " + std::to_string(i) + " was never written");
    unpack(r, dim_, mean, cov);
  }
  bool on_disk() const override { return false; }

 private:
  std::vector<std::vector<double>> records_;
};

class DiskStore final : public TrajectoryStore {
 public:
  DiskStore(Index dim, Index count, const std::filesystem::path& dir) : TrajectoryStore(dim, count) {
    std::filesystem::create_directories(dir);
    std::random_device rd;
    std::ostringstream name;
    name << "ssgp-trajectory-" << std::hex << rd() << rd() << ".bin";
    path_ = dir / name.str();
    file_ = std::fopen(path_.c_str(), "w+b");
    if (file_ == nullptr) throw ConfigError("cannot create trajectory scratch file " + path_.string());
  }
  ~DiskStore() override {
    if (file_ != nullptr) std::fclose(file_);
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DiskStore(const DiskStore&) = delete;
  DiskStore& operator=(const DiskStore&) = delete;

  void put(Index i, const Vector& mean, const Matrix& cov) override {
    pack(mean, cov, buf_);
    seek(i);
    if (std::fwrite(buf_.data(), sizeof(double), buf_.size(), file_) != buf_.size()) {
      throw NumericalError("trajectory store: short write to " + path_.string());
    }
  }
  void get(Index i, Vector& mean, Matrix& cov) const override {
    buf_.resize(record_doubles(dim_));
    seek(i);
    if (std::fread(buf_.data(), sizeof(double), buf_.size(), file_) != buf_.size()) {
      throw NumericalError("trajectory store: short read from " + path_.string());
    }
    unpack(buf_, dim_, mean, cov);
  }
  bool on_disk() const override { return true; }

 private:
  void seek(Index i) const {
    if (i < 0 || i >= count_) throw DomainError("trajectory store: index out of range");
    const auto offset = static_cast<off_t>(static_cast<std::size_t>(i) * record_doubles(dim_) * sizeof(double));
    if (fseeko(file_, offset, SEEK_SET) != 0) throw NumericalError("trajectory store: seek failed");
  }

  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
  mutable std::vector<double> buf_;
};

}  // namespace

std::unique_ptr<TrajectoryStore> TrajectoryStore::create(Index dim, Index count, std::size_t budget_bytes,
                                                         const std::filesystem::path& scratch_dir) {
  const double bytes = 8.0 * static_cast<double>(dim) * static_cast<double>(dim) * static_cast<double>(count);
  if (bytes > static_cast<double>(budget_bytes)) {
    return std::make_unique<DiskStore>(dim, count,
                                       scratch_dir.empty() ? std::filesystem::temp_directory_path() : scratch_dir);
  }
  return std::make_unique<MemoryStore>(dim, count);
}

// ---------------------------------------------------------------- filter

namespace {

void symmetrize_in_place(Matrix& m) {
  const Matrix t = m.transpose();
  m = 0.5 * (m + t);
}

}  // namespace

FilterResult kalman_filter(const LinearGaussianModel& model, const ObservationSeries& obs, const FilterOptions& options,
                           const FilterObserver& observer) {
  obs.validate();
  const auto sde = model.dynamics();
  const Index n = sde->dim();
  const Vector noise = model.noise_variance();
  if (obs.gages() != noise.size()) {
    throw DomainError("kalman_filter: series has " + std::to_string(obs.gages()) + " gages, model has " +
                      std::to_string(noise.size()));
  }
  const Index m = obs.size();
  TransitionCache cache(sde);

  FilterResult res;
  res.times = obs.times;
  res.h_plus = obs.h_plus;
  res.h_minus = obs.h_minus;
  res.means.resize(n, m);
  res.states = TrajectoryStore::create(n, m, options.memory_budget_bytes, options.scratch_dir);

  GaussianState fc{sde->initial_mean(), sde->stationary_cov(), 0.0, StateKind::Forecast};
  GaussianState an{Vector(), Matrix(), 0.0, StateKind::Analyzed};
  std::vector<Index> rows;
  const double log2pi = std::log(2.0 * std::numbers::pi);

  for (Index i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (i > 0) {
      const auto tr = cache.get(obs.times[k] - obs.times[k - 1]);
      fc.mean = tr->apply(an.mean);
      fc.cov = tr->predict_cov(an.cov);
      symmetrize_in_place(fc.cov);
    }
    fc.time = obs.times[k];

    rows.clear();
    for (Index g = 0; g < obs.gages(); ++g) {
      if (obs.present(g, i)) rows.push_back(g);
    }
    const auto s = static_cast<Index>(rows.size());
    an.time = fc.time;
    double log_density = 0.0;
    if (s == 0) {
      an.mean = fc.mean;
      an.cov = fc.cov;
    } else {
      const ObservationModel om = model.observe(obs.times[k], obs.h_plus[k], obs.h_minus[k]);
      Matrix hs(s, n);
      Vector e(s);
      Vector r(s);
      for (Index a = 0; a < s; ++a) {
        const Index g = rows[static_cast<std::size_t>(a)];
        hs.row(a) = om.H.row(g);
        e(a) = obs.strains(g, i) - om.mean(g);
        r(a) = noise(g);
      }
      e.noalias() -= hs * fc.mean;
      const Matrix pht = fc.cov * hs.transpose();
      Matrix sfac = hs * pht;
      sfac.diagonal() += r;
      symmetrize_in_place(sfac);
      const Eigen::LLT<Matrix> llt(sfac);
      if (llt.info() != Eigen::Success) {
        throw NumericalError("kalman_filter: innovation covariance not positive definite at step " + std::to_string(i));
      }
      const Matrix kgain = llt.solve(pht.transpose()).transpose();  // n × s
      an.mean = fc.mean + kgain * e;
      // Joseph form (I − KH)Σ(I − KH)ᵀ + KRKᵀ, expanded into rank-s terms.
      const Matrix kpht = kgain * pht.transpose();
      an.cov = fc.cov - kpht - kpht.transpose();
      an.cov.noalias() += kgain * sfac * kgain.transpose();
      symmetrize_in_place(an.cov);

      const Vector white = llt.matrixL().solve(e);
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      log_density = -0.5 * (white.squaredNorm() + logdet + static_cast<double>(s) * log2pi);
      res.log_evidence += log_density;
      res.observed_entries += s;
    }
    res.means.col(i) = an.mean;
    res.states->put(i, an.mean, an.cov);
    if (observer) observer(FilterStep{i, fc, an, s, log_density});
  }
  return res;
}

// ---------------------------------------------------------------- smoother

GaussianState PosteriorTrajectory::state(Index i) const {
  GaussianState s;
  if (!states) throw DomainError("posterior trajectory has no stored states");
  states->get(i, s.mean, s.cov);
  s.time = times.at(static_cast<std::size_t>(i));
  s.kind = kind;
  return s;
}

Index PosteriorTrajectory::time_index(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t - 1e-9 * std::max(1.0, std::abs(t)));
  if (it == times.end() || std::abs(*it - t) > 1e-9 * std::max(1.0, std::abs(t))) {
    throw DomainError("time " + io::format_double(t) + " is not an observation time");
  }
  return static_cast<Index>(it - times.begin());
}

PosteriorTrajectory filtered_trajectory(FilterResult&& filtered) {
  PosteriorTrajectory p;
  p.times = std::move(filtered.times);
  p.h_plus = std::move(filtered.h_plus);
  p.h_minus = std::move(filtered.h_minus);
  p.means = std::move(filtered.means);
  p.states = std::move(filtered.states);
  p.log_evidence = filtered.log_evidence;
  p.kind = StateKind::Analyzed;
  return p;
}

PosteriorTrajectory rts_smooth(const LinearGaussianModel& model, FilterResult&& filtered,
                               const SmootherObserver& observer) {
  PosteriorTrajectory p = filtered_trajectory(std::move(filtered));
  p.kind = StateKind::Smoothed;
  const Index m = p.size();
  if (m == 0) return p;
  const auto sde = model.dynamics();
  if (p.states->dim() != sde->dim()) throw DomainError("rts_smooth: filter result does not match the model");
  TransitionCache cache(sde);

  GaussianState next{Vector(), Matrix(), p.times.back(), StateKind::Smoothed};
  p.states->get(m - 1, next.mean, next.cov);
  if (observer) observer(m - 1, next);

  GaussianState cur{Vector(), Matrix(), 0.0, StateKind::Smoothed};
  Vector ma;
  Matrix pa;
  bool warned = false;
  for (Index i = m - 2; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    p.states->get(i, ma, pa);
    const auto tr = cache.get(p.times[k + 1] - p.times[k]);
    Matrix fp;
    Matrix pf = tr->predict_cov(pa, &fp);
    symmetrize_in_place(pf);
    const Vector mf = tr->apply(ma);

    Eigen::LLT<Matrix> llt(pf);
    if (llt.info() != Eigen::Success) {
      const double jitter = 1e-10 * pf.trace();
      if (!warned) {
        std::cerr << "warning: rts_smooth: singular forecast covariance at step " << i + 1 << ", adding jitter "
                  << jitter << '\n';
        warned = true;
      }
      pf.diagonal().array() += jitter;
      llt.compute(pf);
      if (llt.info() != Eigen::Success) {
        throw NumericalError("rts_smooth: forecast covariance not factorizable at step " + std::to_string(i + 1));
      }
    }
    const Matrix gain_t = llt.solve(fp);  // Cᵀ = Σ_f⁻¹·F̄·Σᵃ
    cur.mean = ma + gain_t.transpose() * (next.mean - mf);
    const Matrix diff = next.cov - pf;
    cur.cov = pa;
    cur.cov.noalias() += gain_t.transpose() * (diff * gain_t);
    symmetrize_in_place(cur.cov);
    cur.time = p.times[k];

    p.means.col(i) = cur.mean;
    p.states->put(i, cur.mean, cur.cov);
    if (observer) observer(i, cur);
    std::swap(next, cur);
  }
  return p;
}

// ---------------------------------------------------------------- models

LtiObservationModel::LtiObservationModel(std::shared_ptr<const BlockDiagonalSde> sde, Matrix h, Vector noise_var,
                                         Vector mean)
    : sde_(std::move(sde)), h_(std::move(h)), noise_(std::move(noise_var)), mean_(std::move(mean)) {
  if (!sde_ || h_.cols() != sde_->dim()) throw ConstructionError("observation matrix columns must match the state");
  if (noise_.size() != h_.rows()) throw ConstructionError("one noise variance per observation row required");
  if (mean_.size() == 0) mean_ = Vector::Zero(h_.rows());
  if (mean_.size() != h_.rows()) throw ConstructionError("observation mean length must match rows");
}

ObservationModel LtiObservationModel::observe(double, double, double) const { return {mean_, h_}; }

// ---------------------------------------------------------------- extraction

namespace {

Marginals push(const Matrix& rows, const Vector& offset, const GaussianState& s) {
  Marginals out;
  out.mean = offset + rows * s.mean;
  out.stddev = (rows * s.cov).cwiseProduct(rows).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
  return out;
}

}  // namespace

Marginals extract_posterior(const JointModel& model, const GaussianState& state, double h_plus, double h_minus,
                            const PosteriorQuery& query) {
  const std::string& w = query.what;
  if (w == "thermal") return push(model.thermal_rows(), model.thermal_mean(state.time), state);
  if (w == "bias") return push(model.bias_rows(), Vector::Zero(model.gages()), state);
  if (w == "elastic") {
    return push(model.load_strain_rows(h_plus, h_minus), model.mean_elastic_strain(h_plus, h_minus), state);
  }
  if (w == "predicted-strain") {
    const ObservationModel om = model.observe(state.time, h_plus, h_minus);
    return push(om.H, om.mean, state);
  }
  if (w == "loads") {
    const LoadMarginals lm =
        loads_from_state(model, query.side, state.mean, state.cov, h_plus, h_minus, query.points);
    return {lm.mean, lm.variance.cwiseSqrt()};
  }
  throw DomainError("unknown posterior quantity '" + w + "'");
}

Marginals extract_posterior(const JointModel& model, const PosteriorTrajectory& traj, double t,
                            const PosteriorQuery& query) {
  const Index i = traj.time_index(t);
  const auto k = static_cast<std::size_t>(i);
  return extract_posterior(model, traj.state(i), traj.h_plus[k], traj.h_minus[k], query);
}

PriorDraw simulate_from_prior(const LinearGaussianModel& model, std::vector<double> times,
                              std::vector<double> h_plus, std::vector<double> h_minus, std::uint64_t seed) {
  const auto m = static_cast<Index>(times.size());
  if (static_cast<Index>(h_plus.size()) != m || static_cast<Index>(h_minus.size()) != m) {
    throw DomainError("simulate_from_prior: levels and times differ in length");
  }
  const auto sde = model.dynamics();
  const Index n = sde->dim();
  const Vector noise = model.noise_variance();
  const Index ng = noise.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  auto draw = [&](Index k) {
    Vector z(k);
    for (Index i = 0; i < k; ++i) z(i) = gauss(rng);
    return z;
  };
  // Per-block square roots, so no dense n×n factorization is needed.
  auto block_sqrt_apply = [&](const std::vector<Matrix>& roots, const std::vector<Index>& offsets) {
    Vector out(n);
    for (std::size_t b = 0; b < roots.size(); ++b) {
      const Index d = roots[b].rows();
      out.segment(offsets[b], d) = roots[b] * draw(d);
    }
    return out;
  };
  std::vector<Matrix> p0_roots;
  std::vector<Index> offsets;
  for (std::size_t b = 0; b < sde->block_count(); ++b) {
    p0_roots.push_back(psd_sqrt(sde->block(b).P0));
    offsets.push_back(sde->block_offset(b));
  }
  struct Step {
    BlockTransition tr;
    std::vector<Matrix> roots;
  };
  std::map<long long, Step> steps;  // keyed by the step quantized to 1e-10 days

  PriorDraw out;
  out.states.resize(n, m);
  ObservationSeries& s = out.obs;
  s.times = std::move(times);
  s.h_plus = std::move(h_plus);
  s.h_minus = std::move(h_minus);
  s.strains.resize(ng, m);
  for (Index g = 0; g < ng; ++g) s.gage_ids.push_back("gage_" + std::to_string(g));
  Vector v;
  for (Index i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (i == 0) {
      v = sde->initial_mean() + block_sqrt_apply(p0_roots, offsets);
    } else {
      const double dt = s.times[k] - s.times[k - 1];
      if (!(dt > 0.0)) throw DomainError("simulate_from_prior: times must increase");
      const long long key = std::llround(dt * 1e10);
      auto it = steps.find(key);
      if (it == steps.end()) {
        Step st{sde->discretize(static_cast<double>(key) * 1e-10), {}};
        for (const auto& blk : st.tr.blocks) st.roots.push_back(psd_sqrt(blk.Qbar));
        it = steps.emplace(key, std::move(st)).first;
      }
      v = it->second.tr.apply(v) + block_sqrt_apply(it->second.roots, it->second.tr.offsets);
    }
    out.states.col(i) = v;
    const ObservationModel om = model.observe(s.times[k], s.h_plus[k], s.h_minus[k]);
    s.strains.col(i) = om.mean + om.H * v + noise.cwiseSqrt().cwiseProduct(draw(ng));
  }
  return out;
}

}  // namespace ssgp

