#include "robhet/scale_solvers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "robhet/errors.hpp"

namespace robhet {

namespace {

void check_spec(const MScaleSpec& spec) {
  if (!(spec.b > 0.0 && spec.b < 1.0)) {
    throw PreconditionError("M-scale breakdown target b must lie in (0, 1)");
  }
}

}  // namespace

double mean_chi(std::span<const double> residuals, double s, const MScaleSpec& spec,
                std::span<const double> weights) {
  double sum = 0.0;
  if (weights.empty()) {
    for (double r : residuals) sum += spec.chi(r / s);
    return sum / static_cast<double>(residuals.size());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (weights[i] == 0.0) continue;
    sum += weights[i] * spec.chi(residuals[i] / s);
    total += weights[i];
  }
  return sum / total;
}

double m_scale(std::span<const double> residuals, const MScaleSpec& spec,
               std::span<const double> weights) {
  check_spec(spec);
  if (residuals.empty()) throw PreconditionError("M-scale of an empty residual vector");
  if (!weights.empty() && weights.size() != residuals.size()) {
    throw PreconditionError("M-scale weights and residuals differ in length");
  }

  double total = 0.0;
  double zero_mass = 0.0;
  std::vector<double> abs_r;
  abs_r.reserve(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (w < 0.0 || !std::isfinite(w)) throw PreconditionError("M-scale weights must be non-negative");
    if (!std::isfinite(residuals[i])) throw NumericalError("non-finite residual passed to M-scale");
    if (w == 0.0) continue;
    total += w;
    if (residuals[i] == 0.0) zero_mass += w;
    abs_r.push_back(std::fabs(residuals[i]));
  }
  if (!(total > 0.0)) throw PreconditionError("M-scale weights are all zero");
  // As s -> 0+ the mean of chi tends to (1 - b) - zero_fraction.
  if (zero_mass / total >= 1.0 - spec.b) {
    throw DegenerateScaleError("M-scale undefined: " + std::to_string(zero_mass / total) +
                               " of the residual mass is exactly zero");
  }

  auto f = [&](double s) { return mean_chi(residuals, s, spec, weights); };

  double s0 = median(abs_r) / 0.6745;
  if (!(s0 > 0.0)) s0 = *std::max_element(abs_r.begin(), abs_r.end());

  double lo = s0;
  double hi = s0;
  const double f0 = f(s0);
  if (f0 == 0.0) return s0;
  constexpr int kMaxExpansions = 60;
  int expansions = 0;
  if (f0 > 0.0) {
    while (f(hi) > 0.0) {
      lo = hi;
      hi *= 10.0;
      if (++expansions > kMaxExpansions || !std::isfinite(hi)) {
        throw NumericalError("M-scale bracket not found above s0 = " + std::to_string(s0));
      }
    }
  } else {
    while (f(lo) <= 0.0) {
      hi = lo;
      lo /= 10.0;
      if (++expansions > kMaxExpansions || !(lo > 0.0)) {
        throw NumericalError("M-scale bracket not found below s0 = " + std::to_string(s0));
      }
    }
  }

  // Invariant: f(lo) > 0 >= f(hi).
  while (hi - lo > 1e-12 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (f(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

namespace {

struct StackedEval {
  bool ok = false;
  double sigma = 0.0;
  Vector equations;  // lambda block
  double norm = std::numeric_limits<double>::infinity();
};

class SigmaLambdaSystem {
 public:
  SigmaLambdaSystem(const Dataset& data, const Vector& beta, const ModelSpec& model,
                    const MScaleSpec& spec, std::span<const double> w2)
      : spec_(spec),
        raw_(raw_residuals(data, model, beta)),
        h_(variance_covariates(data, model, beta)),
        w2_(static_cast<Eigen::Index>(data.size())) {
    for (Eigen::Index i = 0; i < w2_.size(); ++i) {
      w2_(i) = w2.empty() ? 1.0 : w2[static_cast<std::size_t>(i)];
    }
  }

  Eigen::Index q() const { return h_.cols(); }
  const Vector& raw() const { return raw_; }
  const Matrix& h() const { return h_; }

  StackedEval evaluate(const Vector& lambda) const {
    StackedEval out;
    const Vector eta = h_ * lambda;
    if (eta.cwiseAbs().maxCoeff() > kMaxLogVariance || !eta.allFinite()) return out;
    const Vector r = raw_.cwiseQuotient(eta.array().exp().matrix());
    if (!r.allFinite()) return out;
    try {
      out.sigma = m_scale(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())), spec_);
    } catch (const NumericalError&) {
      return out;
    }
    const auto n = static_cast<double>(r.size());
    double eq_scale = 0.0;
    out.equations = Vector::Zero(q());
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const double c = spec_.chi(r(i) / out.sigma);
      eq_scale += c;
      out.equations += (c * w2_(i)) * h_.row(i).transpose();
    }
    eq_scale /= n;
    out.equations /= n;
    out.norm = std::max(std::fabs(eq_scale), out.equations.cwiseAbs().maxCoeff());
    out.ok = true;
    return out;
  }

 private:
  const MScaleSpec& spec_;
  Vector raw_;
  Matrix h_;
  Vector w2_;
};

struct NewtonRun {
  Vector lambda;
  StackedEval eval;
  bool converged = false;
  int iterations = 0;
};

NewtonRun damped_newton(const SigmaLambdaSystem& sys, Vector lambda,
                        const SigmaLambdaOptions& opt) {
  NewtonRun run;
  run.lambda = lambda;
  run.eval = sys.evaluate(lambda);
  if (!run.eval.ok) return run;

  const Eigen::Index q = sys.q();
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (run.eval.norm <= opt.tolerance) {
      run.converged = true;
      return run;
    }
    Matrix jac(q, q);
    bool jac_ok = true;
    for (Eigen::Index j = 0; j < q; ++j) {
      Vector probe = run.lambda;
      probe(j) += opt.fd_step;
      const StackedEval e = sys.evaluate(probe);
      if (!e.ok) {
        jac_ok = false;
        break;
      }
      jac.col(j) = (e.equations - run.eval.equations) / opt.fd_step;
    }
    if (!jac_ok) return run;
    Eigen::FullPivLU<Matrix> lu(jac);
    if (!lu.isInvertible()) return run;
    const Vector step = lu.solve(-run.eval.equations);
    if (!step.allFinite()) return run;

    bool accepted = false;
    double t = 1.0;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      const Vector trial = run.lambda + t * step;
      StackedEval e = sys.evaluate(trial);
      if (e.ok && e.norm < run.eval.norm) {
        run.lambda = trial;
        run.eval = std::move(e);
        accepted = true;
        break;
      }
    }
    run.iterations = it + 1;
    if (!accepted) break;
  }
  run.converged = run.eval.ok && run.eval.norm <= opt.tolerance;
  return run;
}

Vector log_residual_slope(const SigmaLambdaSystem& sys) {
  const Eigen::Index n = sys.raw().size();
  const Eigen::Index q = sys.q();
  Matrix design(n, q + 1);
  design.col(0).setOnes();
  design.rightCols(q) = sys.h();
  const Vector z =
      sys.raw().unaryExpr([](double r) { return std::log(std::max(std::fabs(r), 1e-12)); });
  const Vector coef = design.colPivHouseholderQr().solve(z);
  if (!coef.allFinite()) return Vector::Zero(q);
  return coef.tail(q);
}

}  // namespace

SigmaLambdaEstimate solve_sigma_lambda(const Dataset& data, const Vector& beta,
                                       const ModelSpec& model, const MScaleSpec& spec,
                                       std::span<const double> leverage_weights,
                                       const SigmaLambdaOptions& options) {
  check_spec(spec);
  const auto n = data.size();
  if (n <= static_cast<std::size_t>(model.q) + 1) {
    throw PreconditionError("solve_sigma_lambda needs n > q + 1 observations");
  }
  if (!leverage_weights.empty() && leverage_weights.size() != n) {
    throw PreconditionError("leverage weights and data differ in length");
  }

  const SigmaLambdaSystem sys(data, beta, model, spec, leverage_weights);
  if (sys.raw().cwiseAbs().maxCoeff() == 0.0) {
    throw DegenerateScaleError("all residuals are zero at the supplied beta");
  }

  std::vector<Vector> starts;
  starts.push_back(Vector::Zero(model.q));
  starts.push_back(log_residual_slope(sys));
  if (options.previous && options.previous->size() == model.q) starts.push_back(*options.previous);

  std::optional<NewtonRun> best;
  for (const Vector& s : starts) {
    NewtonRun run = damped_newton(sys, s, options);
    if (!run.eval.ok) continue;
    if (!best) {
      best = std::move(run);
      continue;
    }
    const bool better = run.eval.norm < best->eval.norm ||
                        (run.eval.norm == best->eval.norm && run.lambda.norm() < best->lambda.norm());
    if (better) best = std::move(run);
  }

  if (!best) {
    // Every start failed to evaluate; surface the underlying cause.
    const Vector r = sys.raw();
    (void)m_scale(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())), spec);
    throw NumericalError("sigma-lambda system could not be evaluated at any start");
  }

  SigmaLambdaEstimate out;
  out.sigma = best->eval.sigma;
  out.lambda = best->lambda;
  out.converged = best->converged;
  out.iterations = best->iterations;
  out.final_residual_norm = best->eval.norm;
  return out;
}

}  // namespace robhet
