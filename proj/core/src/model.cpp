#include "robhet/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "robhet/errors.hpp"

namespace robhet {

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(r);
    out.y(static_cast<Eigen::Index>(i)) = y(r);
  }
  return out;
}

Dataset Dataset::from_columns(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw PreconditionError("x and y columns differ in length");
  Dataset out;
  const auto n = static_cast<Eigen::Index>(x.size());
  out.x.resize(n, 1);
  out.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.x(i, 0) = x[static_cast<std::size_t>(i)];
    out.y(i) = y[static_cast<std::size_t>(i)];
  }
  return out;
}

double upsilon(const ModelSpec& model, Covariate x, const Vector& lambda, const Vector& beta) {
  const double eta = lambda.dot(model.h(x, beta));
  if (!(eta <= kMaxLogVariance)) {
    throw OverflowError("log-variance lambda'h = " + std::to_string(eta) + " exceeds " +
                            std::to_string(kMaxLogVariance),
                        std::nullopt);
  }
  return std::exp(eta);
}

Vector raw_residuals(const Dataset& data, const ModelSpec& model, const Vector& beta) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Vector r(n);
  for (Eigen::Index i = 0; i < n; ++i) r(i) = data.y(i) - model.g(data.x.row(i), beta);
  return r;
}

Vector variance_divisors(const Dataset& data, const ModelSpec& model, const Vector& lambda,
                         const Vector& beta) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      d(i) = upsilon(model, data.x.row(i), lambda, beta);
    } catch (const OverflowError& e) {
      throw OverflowError(std::string(e.what()) + " at observation " + std::to_string(i),
                          static_cast<std::size_t>(i));
    }
  }
  return d;
}

Vector residuals(const Dataset& data, const ModelSpec& model, const Vector& beta,
                 const Vector& lambda) {
  if (data.size() == 0) throw PreconditionError("residuals of an empty dataset");
  return raw_residuals(data, model, beta).cwiseQuotient(variance_divisors(data, model, lambda, beta));
}

Matrix variance_covariates(const Dataset& data, const ModelSpec& model, const Vector& beta) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Matrix v(n, model.q);
  for (Eigen::Index i = 0; i < n; ++i) v.row(i) = model.h(data.x.row(i), beta).transpose();
  return v;
}

Matrix jacobian(const Dataset& data, const ModelSpec& model, const Vector& beta) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Matrix j(n, model.p);
  for (Eigen::Index i = 0; i < n; ++i) j.row(i) = model.grad_g(data.x.row(i), beta).transpose();
  return j;
}

Vector start_values(const Dataset& data, const ModelSpec& model) {
  if (model.start) return model.start(data);
  return Vector::Ones(model.p);
}

namespace {

// Ordinary least squares of y on (1, x) for a scalar covariate. Returns
// (intercept, slope); slope is 0 when x has no spread.
std::pair<double, double> simple_ols(const Vector& x, const Vector& y) {
  const double mx = x.mean();
  const double my = y.mean();
  const double sxx = (x.array() - mx).square().sum();
  if (!(sxx > 0.0)) return {my, 0.0};
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double slope = sxy / sxx;
  return {my - slope * mx, slope};
}

}  // namespace

ModelSpec exponential_experiment_model() {
  ModelSpec m;
  m.name = "exp-growth";
  m.p = 2;
  m.q = 1;
  m.k = 1;
  m.g = [](Covariate x, const Vector& b) { return b(0) * std::exp(b(1) * x(0)); };
  m.grad_g = [](Covariate x, const Vector& b) {
    const double e = std::exp(b(1) * x(0));
    Vector grad(2);
    grad << e, b(0) * x(0) * e;
    return grad;
  };
  m.h = [](Covariate x, const Vector&) {
    Vector v(1);
    v(0) = (x(0) + 1.0) * (x(0) + 1.0);
    return v;
  };
  m.start = [](const Dataset& data) {
    // Non-positive responses are floored at a small fraction of the largest
    // |y| before taking logs.
    const double eps = std::max(1e-3 * data.y.cwiseAbs().maxCoeff(), 1e-300);
    const Vector logy = data.y.unaryExpr([eps](double v) { return std::log(std::max(v, eps)); });
    const auto [a, s] = simple_ols(data.x.col(0), logy);
    Vector b(2);
    b << std::exp(a), s;
    return b;
  };
  return m;
}

ModelSpec linear_model() {
  ModelSpec m;
  m.name = "linear";
  m.p = 2;
  m.q = 1;
  m.k = 1;
  m.g = [](Covariate x, const Vector& b) { return b(0) + b(1) * x(0); };
  m.grad_g = [](Covariate x, const Vector&) {
    Vector grad(2);
    grad << 1.0, x(0);
    return grad;
  };
  m.h = [](Covariate x, const Vector&) {
    Vector v(1);
    v(0) = x(0);
    return v;
  };
  m.start = [](const Dataset& data) {
    const auto [a, s] = simple_ols(data.x.col(0), data.y);
    Vector b(2);
    b << a, s;
    return b;
  };
  return m;
}

ModelSpec model_by_name(std::string_view name) {
  if (name == "exp-growth") return exponential_experiment_model();
  if (name == "linear") return linear_model();
  throw PreconditionError("unknown model '" + std::string(name) + "'");
}

std::vector<std::string> model_names() { return {"exp-growth", "linear"}; }

}  // namespace robhet
