#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace robhet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Covariates, one observation per row. Row-major so a row is contiguous.
using CovariateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// A single observation's covariate vector.
using Covariate = Eigen::Ref<const Eigen::RowVectorXd>;

/// Observation set: n rows of covariates and the matching responses.
struct Dataset {
  CovariateMatrix x;
  Vector y;

  std::size_t size() const noexcept { return static_cast<std::size_t>(y.size()); }
  Eigen::Index covariates() const noexcept { return x.cols(); }

  Dataset subset(const std::vector<std::size_t>& rows) const;

  /// Scalar-covariate convenience constructor.
  static Dataset from_columns(const std::vector<double>& x, const std::vector<double>& y);
};

/// A heteroscedastic nonlinear regression model
///
///   y = g(x, beta) + sigma * exp(lambda' h(x, beta)) * eps.
///
/// The maps must be free of side effects; values of this type are shared
/// read-only across threads.
struct ModelSpec {
  std::string name;
  int p = 0;  // dim beta
  int q = 0;  // dim lambda
  int k = 1;  // dim x

  std::function<double(Covariate, const Vector&)> g;
  std::function<Vector(Covariate, const Vector&)> grad_g;
  std::function<Vector(Covariate, const Vector&)> h;

  /// Optional data-driven starting value for iterative fits.
  std::function<Vector(const Dataset&)> start;
};

/// exp(lambda' h) is refused above this exponent.
inline constexpr double kMaxLogVariance = 700.0;

/// Variance function exp(lambda' h(x, beta)). Throws OverflowError when the
/// exponent exceeds kMaxLogVariance.
double upsilon(const ModelSpec& model, Covariate x, const Vector& lambda, const Vector& beta);

/// y_i - g(x_i, beta).
Vector raw_residuals(const Dataset& data, const ModelSpec& model, const Vector& beta);

/// (y_i - g(x_i, beta)) / upsilon(x_i, lambda, beta). Overflow errors name
/// the offending observation.
Vector residuals(const Dataset& data, const ModelSpec& model, const Vector& beta,
                 const Vector& lambda);

/// upsilon(x_i, lambda, beta) for every observation.
Vector variance_divisors(const Dataset& data, const ModelSpec& model, const Vector& lambda,
                         const Vector& beta);

/// Rows h(x_i, beta)', an n x q matrix.
Matrix variance_covariates(const Dataset& data, const ModelSpec& model, const Vector& beta);

/// n x p Jacobian of g with respect to beta.
Matrix jacobian(const Dataset& data, const ModelSpec& model, const Vector& beta);

/// model.start(data) when provided, otherwise a vector of ones.
Vector start_values(const Dataset& data, const ModelSpec& model);

/// g(x, beta) = beta1 exp(beta2 x), h(x) = (x + 1)^2. Starts from a
/// least-squares fit of log(max(y, eps)) on x.
ModelSpec exponential_experiment_model();

/// g(x, beta) = beta1 + beta2 x, h(x) = x. Starts from the closed-form OLS.
ModelSpec linear_model();

/// Names understood by the CLI: "exp-growth", "linear".
ModelSpec model_by_name(std::string_view name);
std::vector<std::string> model_names();

}  // namespace robhet
