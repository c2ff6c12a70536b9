#include "ssgp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ssgp/error.hpp"

namespace ssgp {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string("kernel: non-finite ") + what);
}

void require_positive(double v, const char* what) {
  require_finite(v, what);
  if (v <= 0.0) throw DomainError(std::string("kernel: ") + what + " must be > 0");
}

void require_nonnegative(double v, const char* what) {
  require_finite(v, what);
  if (v < 0.0) throw DomainError(std::string("kernel: ") + what + " must be >= 0");
}

double distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("kernel: input dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

bool same_point(std::span<const double> a, std::span<const double> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

double matern_lag(const kern::Matern& k, double tau) {
  const double r = std::sqrt(2.0 * nu_value(k.nu)) * tau / k.length;
  switch (k.nu) {
    case MaternNu::Half:
      return k.variance * std::exp(-r);
    case MaternNu::ThreeHalves:
      return k.variance * (1.0 + r) * std::exp(-r);
    case MaternNu::FiveHalves:
      return k.variance * (1.0 + r + r * r / 3.0) * std::exp(-r);
  }
  return 0.0;
}

double periodic_lag(const kern::Periodic& k, double tau) {
  const double s = std::sin(std::numbers::pi * tau / k.period);
  return k.variance * std::exp(-2.0 * s * s / (k.length * k.length));
}

// Evaluates a node given the distance and whether the two inputs coincide.
double eval_node(const KernelExpr& kernel, std::span<const double> a, std::span<const double> b,
                 double tau, bool same);

struct Evaluator {
  std::span<const double> a;
  std::span<const double> b;
  double tau;
  bool same;

  double operator()(const kern::Matern& k) const { return matern_lag(k, tau); }
  double operator()(const kern::SquaredExp& k) const {
    return k.variance * std::exp(-tau * tau / (2.0 * k.length * k.length));
  }
  double operator()(const kern::Periodic& k) const { return periodic_lag(k, tau); }
  double operator()(const kern::WhiteNoise& k) const { return same ? k.variance : 0.0; }
  double operator()(const kern::Constant& k) const { return k.variance; }
  double operator()(const kern::Sum& k) const {
    double s = 0.0;
    for (const auto& t : k.terms) s += eval_node(t, a, b, tau, same);
    return s;
  }
  double operator()(const kern::Product& k) const {
    double p = 1.0;
    for (const auto& t : k.terms) p *= eval_node(t, a, b, tau, same);
    return p;
  }
  double operator()(const kern::MeanScaled& k) const {
    const double sa = std::abs(k.mean(a)) + k.beta;
    const double sb = std::abs(k.mean(b)) + k.beta;
    return sa * sb * eval_node(*k.base, a, b, tau, same);
  }
};

double eval_node(const KernelExpr& kernel, std::span<const double> a, std::span<const double> b,
                 double tau, bool same) {
  return std::visit(Evaluator{a, b, tau, same}, kernel.node());
}

}  // namespace

double nu_value(MaternNu nu) {
  switch (nu) {
    case MaternNu::Half:
      return 0.5;
    case MaternNu::ThreeHalves:
      return 1.5;
    case MaternNu::FiveHalves:
      return 2.5;
  }
  return 0.0;
}

MaternNu matern_nu(double nu) {
  if (nu == 0.5) return MaternNu::Half;
  if (nu == 1.5) return MaternNu::ThreeHalves;
  if (nu == 2.5) return MaternNu::FiveHalves;
  throw ConstructionError("matern: smoothness must be one of 0.5, 1.5, 2.5");
}

ScaleTable::ScaleTable(std::vector<double> abscissae, std::vector<double> values, int axis)
    : abscissae_(std::move(abscissae)), values_(std::move(values)), axis_(axis) {
  if (abscissae_.empty() || abscissae_.size() != values_.size()) {
    throw ConstructionError("scale table: abscissae and values must be non-empty and equal length");
  }
  if (axis_ < 0) throw ConstructionError("scale table: negative axis");
  for (std::size_t i = 0; i < abscissae_.size(); ++i) {
    require_finite(abscissae_[i], "scale table abscissa");
    require_finite(values_[i], "scale table value");
    if (i > 0 && !(abscissae_[i] > abscissae_[i - 1])) {
      throw ConstructionError("scale table: abscissae must be strictly increasing");
    }
  }
}

double ScaleTable::operator()(std::span<const double> x) const {
  if (static_cast<std::size_t>(axis_) >= x.size()) {
    throw DomainError("scale table: point has no coordinate " + std::to_string(axis_));
  }
  return at(x[axis_]);
}

double ScaleTable::at(double c) const {
  require_finite(c, "scale table query");
  const double lo = abscissae_.front();
  const double hi = abscissae_.back();
  const double tol = 1e-9 * std::max({1.0, std::abs(lo), std::abs(hi)});
  if (c < lo - tol || c > hi + tol) {
    throw ExtrapolationError("scale table: query outside tabulated range");
  }
  if (abscissae_.size() == 1 || c <= lo) return values_.front();
  if (c >= hi) return values_.back();
  const auto it = std::upper_bound(abscissae_.begin(), abscissae_.end(), c);
  const std::size_t j = static_cast<std::size_t>(it - abscissae_.begin());
  const double x0 = abscissae_[j - 1], x1 = abscissae_[j];
  const double w = (c - x0) / (x1 - x0);
  return (1.0 - w) * values_[j - 1] + w * values_[j];
}

KernelExpr::KernelExpr(Node node) : node_(std::make_shared<const Node>(std::move(node))) {}

KernelExpr KernelExpr::matern(double nu, double length, double variance) {
  return matern(matern_nu(nu), length, variance);
}

KernelExpr KernelExpr::matern(MaternNu nu, double length, double variance) {
  require_positive(length, "matern length");
  require_nonnegative(variance, "matern variance");
  return KernelExpr(kern::Matern{nu, length, variance});
}

KernelExpr KernelExpr::squared_exp(double length, double variance) {
  require_positive(length, "squared-exponential length");
  require_nonnegative(variance, "squared-exponential variance");
  return KernelExpr(kern::SquaredExp{length, variance});
}

KernelExpr KernelExpr::periodic(double period, double length, double variance) {
  require_positive(period, "periodic period");
  require_positive(length, "periodic length");
  require_nonnegative(variance, "periodic variance");
  return KernelExpr(kern::Periodic{period, length, variance});
}

KernelExpr KernelExpr::white_noise(double variance) {
  require_nonnegative(variance, "white-noise variance");
  return KernelExpr(kern::WhiteNoise{variance});
}

KernelExpr KernelExpr::constant(double variance) {
  require_nonnegative(variance, "constant variance");
  return KernelExpr(kern::Constant{variance});
}

KernelExpr KernelExpr::sum(std::vector<KernelExpr> terms) {
  if (terms.empty()) throw ConstructionError("sum kernel: empty term list");
  return KernelExpr(kern::Sum{std::move(terms)});
}

KernelExpr KernelExpr::product(std::vector<KernelExpr> terms) {
  if (terms.empty()) throw ConstructionError("product kernel: empty term list");
  return KernelExpr(kern::Product{std::move(terms)});
}

KernelExpr KernelExpr::mean_scaled(KernelExpr base, ScaleTable mean, double beta) {
  require_nonnegative(beta, "mean-scaled floor beta");
  if (!base.is_stationary()) {
    throw ConstructionError("mean-scaled kernel: base kernel must be stationary");
  }
  return KernelExpr(
      kern::MeanScaled{std::make_shared<const KernelExpr>(std::move(base)), std::move(mean), beta});
}

bool KernelExpr::is_stationary() const {
  if (as<kern::MeanScaled>()) return false;
  if (const auto* s = as<kern::Sum>()) {
    return std::all_of(s->terms.begin(), s->terms.end(),
                       [](const KernelExpr& k) { return k.is_stationary(); });
  }
  if (const auto* p = as<kern::Product>()) {
    return std::all_of(p->terms.begin(), p->terms.end(),
                       [](const KernelExpr& k) { return k.is_stationary(); });
  }
  return true;
}

double KernelExpr::at_lag(double tau) const {
  require_finite(tau, "lag");
  if (!is_stationary()) throw DomainError("kernel: at_lag requires a stationary kernel");
  tau = std::abs(tau);
  return eval_node(*this, {}, {}, tau, tau == 0.0);
}

std::string KernelExpr::describe() const {
  std::ostringstream os;
  struct Printer {
    std::ostringstream& os;
    void operator()(const kern::Matern& k) const {
      os << "matern(nu=" << nu_value(k.nu) << ", L=" << k.length << ", var=" << k.variance << ")";
    }
    void operator()(const kern::SquaredExp& k) const {
      os << "squared_exp(L=" << k.length << ", var=" << k.variance << ")";
    }
    void operator()(const kern::Periodic& k) const {
      os << "periodic(P=" << k.period << ", L=" << k.length << ", var=" << k.variance << ")";
    }
    void operator()(const kern::WhiteNoise& k) const { os << "white_noise(var=" << k.variance << ")"; }
    void operator()(const kern::Constant& k) const { os << "constant(var=" << k.variance << ")"; }
    void operator()(const kern::Sum& k) const { list(k.terms, " + "); }
    void operator()(const kern::Product& k) const { list(k.terms, " * "); }
    void operator()(const kern::MeanScaled& k) const {
      os << "mean_scaled(beta=" << k.beta << ", " << k.base->describe() << ")";
    }
    void list(const std::vector<KernelExpr>& terms, const char* sep) const {
      os << "(";
      for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) os << sep;
        os << terms[i].describe();
      }
      os << ")";
    }
  };
  std::visit(Printer{os}, node());
  return os.str();
}

double eval(const KernelExpr& kernel, std::span<const double> a, std::span<const double> b) {
  for (double v : a) require_finite(v, "input");
  for (double v : b) require_finite(v, "input");
  // Canonical argument order keeps the result bit-identical under swapping.
  if (std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end())) std::swap(a, b);
  return eval_node(kernel, a, b, distance(a, b), same_point(a, b));
}

double eval(const KernelExpr& kernel, const Point& a, const Point& b) {
  return eval(kernel, std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
              std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

double eval(const KernelExpr& kernel, double a, double b) {
  return eval(kernel, std::span<const double>(&a, 1), std::span<const double>(&b, 1));
}

Matrix gram(const KernelExpr& kernel, std::span<const Point> points) {
  if (points.empty()) throw DomainError("gram: empty point sequence");
  const Index n = static_cast<Index>(points.size());
  Matrix g(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      const double v = eval(kernel, points[i], points[j]);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

Matrix cross_gram(const KernelExpr& kernel, std::span<const Point> a, std::span<const Point> b) {
  Matrix g(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (Index j = 0; j < g.cols(); ++j) {
    for (Index i = 0; i < g.rows(); ++i) g(i, j) = eval(kernel, a[i], b[j]);
  }
  return g;
}

CoregionalModel::CoregionalModel(Matrix marginal_cov, KernelExpr shared_kernel)
    : CoregionalModel(std::move(marginal_cov), std::vector<KernelExpr>{std::move(shared_kernel)}) {
  if (std::abs(kernels_.front().at_lag(0.0) - 1.0) > 1e-12) {
    throw ConstructionError("coregional model: shared kernel must have unit variance");
  }
}

CoregionalModel::CoregionalModel(Matrix marginal_cov, std::vector<KernelExpr> component_kernels)
    : marginal_cov_(std::move(marginal_cov)), kernels_(std::move(component_kernels)) {
  if (marginal_cov_.rows() != marginal_cov_.cols() || marginal_cov_.rows() == 0) {
    throw ConstructionError("coregional model: marginal covariance must be square and non-empty");
  }
  if ((marginal_cov_ - marginal_cov_.transpose()).norm() > 1e-12 * marginal_cov_.norm()) {
    throw ConstructionError("coregional model: marginal covariance is not symmetric");
  }
  if (kernels_.empty() ||
      (kernels_.size() != 1 && static_cast<Index>(kernels_.size()) != marginal_cov_.rows())) {
    throw ConstructionError("coregional model: need one shared kernel or one per component");
  }
  for (const auto& k : kernels_) {
    if (!k.is_stationary()) throw ConstructionError("coregional model: kernels must be stationary");
  }
  try {
    sqrt_factor_ = psd_sqrt(marginal_cov_);
  } catch (const ConstructionError&) {
    throw ConstructionError("coregional model: marginal covariance is not PSD");
  }
  const double err = (sqrt_factor_ * sqrt_factor_.transpose() - marginal_cov_).norm();
  if (err > 1e-12 * marginal_cov_.norm()) {
    throw ConstructionError("coregional model: square-root factor does not reproduce Σ");
  }
}

Matrix CoregionalModel::equicorrelated(std::span<const double> sigmas, double rho) {
  const Index n = static_cast<Index>(sigmas.size());
  Matrix s(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) s(i, j) = (i == j ? 1.0 : rho) * sigmas[i] * sigmas[j];
  }
  return s;
}

const KernelExpr& CoregionalModel::component_kernel(Index i) const {
  return kernels_.size() == 1 ? kernels_.front() : kernels_.at(static_cast<std::size_t>(i));
}

Matrix CoregionalModel::cov(double t, double t_prime) const {
  if (shared()) return marginal_cov_ * eval(kernels_.front(), t, t_prime);
  Vector k(dim());
  for (Index i = 0; i < dim(); ++i) k(i) = eval(component_kernel(i), t, t_prime);
  return sqrt_factor_ * k.asDiagonal() * sqrt_factor_.transpose();
}

}  // namespace ssgp
