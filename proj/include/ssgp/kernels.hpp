#pragma once

#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ssgp/linalg.hpp"

namespace ssgp {

/// Half-integer Matérn smoothness. Only these orders have exact
/// finite-dimensional state-space realizations.
enum class MaternNu { Half, ThreeHalves, FiveHalves };

double nu_value(MaternNu nu);
MaternNu matern_nu(double nu);  // throws ConstructionError for other values

/// Piecewise-linear function of one coordinate of a point, tabulated on a
/// sorted grid. Queries outside the grid raise ExtrapolationError.
class ScaleTable {
 public:
  ScaleTable(std::vector<double> abscissae, std::vector<double> values, int axis = 0);

  double operator()(std::span<const double> x) const;
  double at(double coordinate) const;

  int axis() const { return axis_; }
  const std::vector<double>& abscissae() const { return abscissae_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> abscissae_;
  std::vector<double> values_;
  int axis_;
};

class KernelExpr;

namespace kern {
struct Matern {
  MaternNu nu;
  double length;
  double variance;
};
struct SquaredExp {
  double length;
  double variance;
};
struct Periodic {
  double period;
  double length;
  double variance;
};
struct WhiteNoise {
  double variance;
};
struct Constant {
  double variance;
};
struct Sum {
  std::vector<KernelExpr> terms;
};
struct Product {
  std::vector<KernelExpr> terms;
};
/// (|μ(x)| + β)(|μ(x′)| + β)·k_base(x, x′)
struct MeanScaled {
  std::shared_ptr<const KernelExpr> base;
  ScaleTable mean;
  double beta;
};
}  // namespace kern

/// Immutable expression tree over canonical covariance kernels. Copies
/// share the underlying node.
class KernelExpr {
 public:
  using Node = std::variant<kern::Matern, kern::SquaredExp, kern::Periodic, kern::WhiteNoise,
                            kern::Constant, kern::Sum, kern::Product, kern::MeanScaled>;

  static KernelExpr matern(double nu, double length, double variance);
  static KernelExpr matern(MaternNu nu, double length, double variance);
  static KernelExpr squared_exp(double length, double variance);
  static KernelExpr periodic(double period, double length, double variance);
  static KernelExpr white_noise(double variance);
  static KernelExpr constant(double variance);
  static KernelExpr sum(std::vector<KernelExpr> terms);
  static KernelExpr product(std::vector<KernelExpr> terms);
  static KernelExpr mean_scaled(KernelExpr base, ScaleTable mean, double beta);

  const Node& node() const { return *node_; }

  template <class T>
  const T* as() const {
    return std::get_if<T>(node_.get());
  }

  /// True when the kernel depends on its inputs only through ‖θ − θ′‖.
  bool is_stationary() const;

  /// k(τ) for a stationary kernel; τ = 0 includes any white-noise term.
  double at_lag(double tau) const;

  std::string describe() const;

 private:
  explicit KernelExpr(Node node);
  std::shared_ptr<const Node> node_;
};

/// Covariance k(θ, θ′). Exactly symmetric in its arguments.
double eval(const KernelExpr& kernel, std::span<const double> a, std::span<const double> b);
double eval(const KernelExpr& kernel, const Point& a, const Point& b);
double eval(const KernelExpr& kernel, double a, double b);

/// Pairwise covariance matrix, built from one triangle.
Matrix gram(const KernelExpr& kernel, std::span<const Point> points);

/// Rectangular cross-covariance K(a_i, b_j).
Matrix cross_gram(const KernelExpr& kernel, std::span<const Point> a, std::span<const Point> b);

/// Linear model of coregionalization: ε(t) = A·z(t), A·Aᵀ = Σ, with the
/// components of z independent. Either one shared unit-variance kernel, or
/// one kernel per component.
class CoregionalModel {
 public:
  /// Shared kernel; must evaluate to 1 at zero lag.
  CoregionalModel(Matrix marginal_cov, KernelExpr shared_kernel);
  /// One kernel per component.
  CoregionalModel(Matrix marginal_cov, std::vector<KernelExpr> component_kernels);

  /// Σ built from per-component standard deviations and one correlation.
  static Matrix equicorrelated(std::span<const double> sigmas, double rho);

  Index dim() const { return marginal_cov_.rows(); }
  const Matrix& marginal_cov() const { return marginal_cov_; }
  const Matrix& sqrt_factor() const { return sqrt_factor_; }
  bool shared() const { return kernels_.size() == 1; }
  const KernelExpr& component_kernel(Index i) const;

  /// Cross-covariance Cov[ε(t), ε(t′)] = A·diag(k_i(t, t′))·Aᵀ.
  Matrix cov(double t, double t_prime) const;

 private:
  Matrix marginal_cov_;
  Matrix sqrt_factor_;
  std::vector<KernelExpr> kernels_;
};

inline Matrix coregional_cov(const CoregionalModel& model, double t, double t_prime) {
  return model.cov(t, t_prime);
}

}  // namespace ssgp
