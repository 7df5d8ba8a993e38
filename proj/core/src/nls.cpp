#include "robhet/nls.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "robhet/errors.hpp"
#include "subsets.hpp"

namespace robhet {

namespace {

Vector case_weight_vector(std::span<const double> w, std::size_t n) {
  if (w.empty()) return Vector::Ones(static_cast<Eigen::Index>(n));
  if (w.size() != n) throw PreconditionError("case weights and data differ in length");
  Vector out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!(w[i] >= 0.0) || !std::isfinite(w[i])) {
      throw PreconditionError("case weights must be finite and non-negative");
    }
    out(static_cast<Eigen::Index>(i)) = w[i];
  }
  return out;
}

double weighted_rss(const Vector& r, const Vector& w) { return (w.array() * r.array().square()).sum(); }

}  // namespace

LsFit nonlinear_ls(const Dataset& data, const ModelSpec& model, const Vector& beta0,
                   std::span<const double> case_weights, const LmOptions& options) {
  const std::size_t n = data.size();
  if (n < static_cast<std::size_t>(model.p)) {
    throw PreconditionError("nonlinear_ls needs n >= p observations");
  }
  if (beta0.size() != model.p || !beta0.allFinite()) {
    throw PreconditionError("nonlinear_ls start must be a finite p-vector");
  }
  const Vector w = case_weight_vector(case_weights, n);

  LsFit fit;
  fit.beta = beta0;
  Vector r = raw_residuals(data, model, fit.beta);
  fit.rss = weighted_rss(r, w);
  if (!std::isfinite(fit.rss)) throw NumericalError("non-finite residuals at the LS start");
  fit.rss_trace.push_back(fit.rss);

  auto normal_equations = [&](const Vector& beta, const Vector& res, Matrix& a, Vector& grad) {
    const Matrix j = jacobian(data, model, beta);
    a = j.transpose() * w.asDiagonal() * j;
    grad = j.transpose() * w.cwiseProduct(res);
  };

  Matrix a;
  Vector grad;
  normal_equations(fit.beta, r, a, grad);
  const double max_diag = a.diagonal().maxCoeff();
  if (!(max_diag > 0.0) || !std::isfinite(max_diag)) {
    throw NumericalError("rank-deficient Jacobian: J'WJ vanishes at the LS start");
  }
  double mu = options.initial_damping * max_diag;
  const Eigen::Index p = model.p;

  for (int it = 0; it < options.max_iterations; ++it) {
    fit.iterations = it + 1;
    if (grad.cwiseAbs().maxCoeff() <= options.gradient_tolerance * (1.0 + fit.rss)) {
      fit.converged = true;
      break;
    }
    const Matrix damped = a + mu * Matrix::Identity(p, p);
    const Vector step = damped.ldlt().solve(grad);
    if (!step.allFinite()) throw NumericalError("LM step is not finite");
    if (step.norm() <= options.step_tolerance * (1.0 + fit.beta.norm())) {
      fit.converged = true;
      break;
    }
    const Vector trial = fit.beta + step;
    const Vector r_trial = raw_residuals(data, model, trial);
    const double rss_trial = weighted_rss(r_trial, w);
    if (std::isfinite(rss_trial) && rss_trial <= fit.rss) {
      fit.beta = trial;
      fit.rss = rss_trial;
      r = r_trial;
      fit.rss_trace.push_back(fit.rss);
      normal_equations(fit.beta, r, a, grad);
      mu /= 3.0;
    } else {
      mu *= 10.0;
      if (!std::isfinite(mu)) break;
    }
  }
  // The damped iteration stops a little short; a few undamped Gauss-Newton
  // steps land on the minimiser to rounding (exactly for linear models).
  for (int polish = 0; fit.converged && polish < 3; ++polish) {
    const Vector step = a.ldlt().solve(grad);
    if (!step.allFinite()) break;
    const Vector trial = fit.beta + step;
    const Vector r_trial = raw_residuals(data, model, trial);
    const double rss_trial = weighted_rss(r_trial, w);
    if (!std::isfinite(rss_trial)) break;
    Matrix a_trial;
    Vector grad_trial;
    normal_equations(trial, r_trial, a_trial, grad_trial);
    // Near the minimiser the rss change drowns in rounding, so a step that
    // shrinks the gradient is also taken when rss moves by a few ulps only.
    const bool descent = rss_trial <= fit.rss;
    const bool rounding = rss_trial <= fit.rss * (1.0 + kRssRoundingSlack) &&
                          grad_trial.cwiseAbs().maxCoeff() < grad.cwiseAbs().maxCoeff();
    if (!descent && !rounding) break;
    fit.beta = trial;
    fit.rss = rss_trial;
    r = r_trial;
    a = std::move(a_trial);
    grad = std::move(grad_trial);
    fit.rss_trace.push_back(fit.rss);
    if (step.norm() <= 1e-15 * (1.0 + fit.beta.norm())) break;
  }
  return fit;
}

Vector gauss_newton_direction(const Dataset& data, const ModelSpec& model, const Vector& beta,
                              std::span<const double> weights) {
  const Vector w = case_weight_vector(weights, data.size());
  const Matrix j = jacobian(data, model, beta);
  const Vector r = raw_residuals(data, model, beta);
  Matrix a = j.transpose() * w.asDiagonal() * j;
  const Vector grad = j.transpose() * w.cwiseProduct(r);
  const double ridge = 1e-12 * std::max(a.diagonal().maxCoeff(), 1e-300);
  a.diagonal().array() += ridge;
  return a.ldlt().solve(grad);
}

Vector log_abs_residuals(const Vector& r) {
  return r.unaryExpr([](double v) { return std::log(std::max(std::fabs(v), kLogResidualFloor)); });
}

LinearFit ols_with_intercept(const Vector& z, const Matrix& v) {
  const Eigen::Index n = z.size();
  Matrix design(n, v.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(v.cols()) = v;
  const auto qr = design.colPivHouseholderQr();
  if (qr.rank() < design.cols()) throw NumericalError("collinear design in least-squares fit");
  const Vector coef = qr.solve(z);
  return {coef(0), coef.tail(v.cols())};
}

LsFit global_nonlinear_ls(const Dataset& data, const ModelSpec& model, const LmOptions& lm,
                          const LsSearchOptions& search) {
  LsFit best = nonlinear_ls(data, model, start_values(data, model), {}, lm);
  const std::size_t n = data.size();
  const auto p = static_cast<std::size_t>(model.p);
  if (search.n_subsets <= 0 || n <= p) return best;

  // (rss, beta) of the best elemental fits, ascending and stable on ties.
  const auto capacity = static_cast<std::size_t>(std::max(search.refine_candidates, 1));
  std::vector<std::pair<double, Vector>> pool;
  for (const auto& idx : detail::draw_subsets(n, p, search.n_subsets, search.seed)) {
    const Dataset sub = data.subset(idx);
    Vector beta;
    try {
      beta = nonlinear_ls(sub, model, start_values(sub, model), {}, lm).beta;
    } catch (const Error&) {
      continue;
    }
    if (!beta.allFinite()) continue;
    const double rss = raw_residuals(data, model, beta).squaredNorm();
    if (!std::isfinite(rss)) continue;
    auto pos = std::upper_bound(pool.begin(), pool.end(), rss,
                                [](double v, const auto& item) { return v < item.first; });
    if (pool.size() >= capacity && pos == pool.end()) continue;
    pool.insert(pos, {rss, std::move(beta)});
    if (pool.size() > capacity) pool.pop_back();
  }
  for (const auto& [rss, beta] : pool) {
    try {
      LsFit fit = nonlinear_ls(data, model, beta, {}, lm);
      if (fit.rss < best.rss) best = std::move(fit);
    } catch (const Error&) {
    }
  }
  return best;
}

FitResult weighted_ls_pipeline(const Dataset& data, const ModelSpec& model,
                               const HlsOptions& options) {
  const std::size_t n = data.size();
  if (n < static_cast<std::size_t>(model.p + model.q + 1)) {
    throw PreconditionError("HLS needs n >= p + q + 1 observations");
  }
  FitResult out;
  out.method = MethodTag::HLS;

  const LsFit ls = global_nonlinear_ls(data, model, options.lm, options.search);
  out.beta_ini = ls.beta;
  out.diagnostics.push_back({"ls", true, ls.converged, ls.iterations, ""});

  const Vector z = log_abs_residuals(raw_residuals(data, model, ls.beta));
  const LinearFit logfit = ols_with_intercept(z, variance_covariates(data, model, ls.beta));
  out.lambda = logfit.slope;
  out.alpha = logfit.intercept;
  out.diagnostics.push_back({"log-variance", true, true, 1, ""});

  Vector divisors;
  try {
    divisors = variance_divisors(data, model, out.lambda, ls.beta);
  } catch (const OverflowError&) {
    out.overflow = true;
    throw;
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = divisors(static_cast<Eigen::Index>(i));
    w[i] = 1.0 / (d * d);
  }
  const LsFit wls = nonlinear_ls(data, model, ls.beta, w, options.lm);
  out.beta = wls.beta;
  out.diagnostics.push_back({"weighted-ls", true, wls.converged, wls.iterations, ""});

  const Vector scaled = raw_residuals(data, model, wls.beta).cwiseQuotient(divisors);
  const double mean = scaled.mean();
  out.sigma = std::sqrt((scaled.array() - mean).square().sum() / static_cast<double>(n - 1));
  return out;
}

}  // namespace robhet
