#include "robhet/mm_regression.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "robhet/errors.hpp"
#include "robhet/nls.hpp"
#include "subsets.hpp"

namespace robhet {

namespace {

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

using detail::draw_subsets;

// Keeps the `capacity` smallest-scale candidates, stable on ties.
template <typename Candidate>
class BestCandidates {
 public:
  explicit BestCandidates(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  bool full() const { return items_.size() >= capacity_; }
  double worst_scale() const { return items_.back().scale; }
  bool empty() const { return items_.empty(); }
  const std::vector<Candidate>& items() const { return items_; }

  void offer(Candidate c) {
    auto pos = std::upper_bound(items_.begin(), items_.end(), c.scale,
                                [](double s, const Candidate& item) { return s < item.scale; });
    if (full() && pos == items_.end()) return;
    items_.insert(pos, std::move(c));
    if (items_.size() > capacity_) items_.pop_back();
  }

 private:
  std::size_t capacity_;
  std::vector<Candidate> items_;
};

// M-scale that maps exact fits to zero instead of throwing.
double scale_or_zero(std::span<const double> r, const MScaleSpec& spec,
                     std::span<const double> weights) {
  try {
    return m_scale(r, spec, weights);
  } catch (const DegenerateScaleError&) {
    return 0.0;
  }
}

// Score a candidate against the current pool; returns nullopt if its scale
// cannot beat the worst pooled candidate.
template <typename Pool>
std::optional<double> score(const Pool& pool, std::span<const double> r, const MScaleSpec& spec,
                            std::span<const double> weights) {
  if (pool.full() && pool.worst_scale() > 0.0 &&
      mean_chi(r, pool.worst_scale(), spec, weights) > 0.0) {
    return std::nullopt;
  }
  return scale_or_zero(r, spec, weights);
}

// ---------------------------------------------------------------- linear

struct LinearCandidate {
  double scale;
  Vector theta;
};

std::optional<Vector> weighted_ls(const Matrix& x, const Vector& z, const Vector& w) {
  const Vector sw = w.cwiseSqrt();
  const Matrix xw = sw.asDiagonal() * x;
  const auto qr = xw.colPivHouseholderQr();
  if (qr.rank() < x.cols()) return std::nullopt;
  Vector theta = qr.solve(sw.cwiseProduct(z));
  if (!theta.allFinite()) return std::nullopt;
  return theta;
}

double linear_rho_objective(const Vector& r, const RhoSpec& rho, double s) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) sum += rho.rho(r(i) / s);
  return sum / static_cast<double>(r.size());
}

LinearCandidate refine_linear_s(const Matrix& x, const Vector& z, LinearCandidate c,
                                const MmOptions& opt, const MScaleSpec& spec) {
  if (c.scale <= 0.0) return c;
  for (int it = 0; it < opt.max_refine_steps; ++it) {
    const Vector r = z - x * c.theta;
    const Vector w = r.unaryExpr([&](double v) { return opt.rho0.weight(v / c.scale); });
    const auto next = weighted_ls(x, z, w);
    if (!next) break;
    const Vector r_next = z - x * *next;
    const double s_next = scale_or_zero(as_span(r_next), spec, {});
    if (!(s_next < c.scale)) break;
    const double rel = (c.scale - s_next) / c.scale;
    c.theta = *next;
    c.scale = s_next;
    if (rel < 1e-10 || s_next == 0.0) break;
  }
  return c;
}

}  // namespace

LinearMmFit linear_mm(const Vector& z, const Matrix& v, const MmOptions& options) {
  const auto n = static_cast<std::size_t>(z.size());
  const auto q = static_cast<std::size_t>(v.cols());
  if (static_cast<std::size_t>(v.rows()) != n) throw PreconditionError("linear_mm: z and V differ in rows");
  if (n <= q + 1) throw PreconditionError("linear_mm needs n > q + 1 observations");
  if (!z.allFinite() || !v.allFinite()) throw PreconditionError("linear_mm: non-finite input");

  const MScaleSpec spec = options.scale_spec();
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q + 1));
  x.col(0).setOnes();
  x.rightCols(static_cast<Eigen::Index>(q)) = v;

  BestCandidates<LinearCandidate> pool(static_cast<std::size_t>(options.refine_candidates));
  for (const auto& idx : draw_subsets(n, q + 1, options.n_subsets, options.seed)) {
    Matrix xs(static_cast<Eigen::Index>(q + 1), static_cast<Eigen::Index>(q + 1));
    Vector zs(static_cast<Eigen::Index>(q + 1));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      xs.row(static_cast<Eigen::Index>(j)) = x.row(static_cast<Eigen::Index>(idx[j]));
      zs(static_cast<Eigen::Index>(j)) = z(static_cast<Eigen::Index>(idx[j]));
    }
    Eigen::FullPivLU<Matrix> lu(xs);
    if (!lu.isInvertible()) continue;
    Vector theta = lu.solve(zs);
    if (!theta.allFinite()) continue;
    const Vector r = z - x * theta;
    const auto s = score(pool, as_span(r), spec, {});
    if (s) pool.offer({*s, std::move(theta)});
  }
  if (pool.empty()) throw NumericalError("linear_mm: design is collinear in every subset");

  LinearCandidate best = refine_linear_s(x, z, pool.items().front(), options, spec);
  for (std::size_t k = 1; k < pool.items().size(); ++k) {
    LinearCandidate c = refine_linear_s(x, z, pool.items()[k], options, spec);
    if (c.scale < best.scale) best = std::move(c);
  }

  LinearMmFit out;
  out.scale = best.scale;
  const double mad = median_mad(std::span<const double>(z.data(), n), 1.0).scale;
  if (best.scale <= 1e-10 * mad || best.scale == 0.0) {
    out.alpha = best.theta(0);
    out.lambda = best.theta.tail(static_cast<Eigen::Index>(q));
    out.degenerate = true;
    out.converged = true;
    return out;
  }

  const double s = best.scale;
  Vector theta = best.theta;
  Vector r = z - x * theta;
  double obj = linear_rho_objective(r, options.rho1, s);
  out.trace.push_back(obj);
  for (int it = 0; it < options.max_irwls; ++it) {
    out.iterations = it + 1;
    const Vector w = r.unaryExpr([&](double e) { return options.rho1.weight(e / s); });
    const auto next = weighted_ls(x, z, w);
    if (!next) break;
    const Vector step = *next - theta;
    bool accepted = false;
    double t = 1.0;
    for (int k = 0; k <= options.max_halvings; ++k, t *= 0.5) {
      const Vector trial = theta + t * step;
      const Vector r_trial = z - x * trial;
      const double obj_trial = linear_rho_objective(r_trial, options.rho1, s);
      if (obj_trial <= obj) {
        theta = trial;
        r = r_trial;
        obj = obj_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.converged = step.norm() <= 1e-6 * (1.0 + theta.norm());
      break;
    }
    out.trace.push_back(obj);
    if (t * step.norm() <= options.tol * (theta.norm() + options.tol)) {
      out.converged = true;
      break;
    }
  }
  out.alpha = theta(0);
  out.lambda = theta.tail(static_cast<Eigen::Index>(q));
  return out;
}

// ------------------------------------------------------------- nonlinear

double mm_objective(const Dataset& data, const ModelSpec& model, const Vector& beta,
                    const RhoSpec& rho1, double sigma, std::span<const double> divisors,
                    std::span<const double> weights) {
  const Vector r = raw_residuals(data, model, beta);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double d = divisors.empty() ? 1.0 : divisors[k];
    const double w = weights.empty() ? 1.0 : weights[k];
    sum += rho1.rho(r(i) / (sigma * d)) * w;
  }
  return sum / static_cast<double>(r.size());
}

namespace {

struct NonlinearCandidate {
  double scale;
  Vector beta;
};

std::optional<Vector> finite_residuals(const Dataset& data, const ModelSpec& model,
                                       const Vector& beta) {
  Vector r = raw_residuals(data, model, beta);
  if (!r.allFinite()) return std::nullopt;
  return r;
}

NonlinearCandidate refine_nonlinear_s(const Dataset& data, const ModelSpec& model,
                                      NonlinearCandidate c, const MmOptions& opt,
                                      const MScaleSpec& spec, const Vector& lev) {
  if (c.scale <= 0.0) return c;
  const std::span<const double> lev_span = as_span(lev);
  for (int it = 0; it < opt.max_refine_steps; ++it) {
    const Vector r = raw_residuals(data, model, c.beta);
    std::vector<double> u(static_cast<std::size_t>(r.size()));
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      u[static_cast<std::size_t>(i)] = opt.rho0.weight(r(i) / c.scale) * lev(i);
    }
    const Vector dir = gauss_newton_direction(data, model, c.beta, u);
    if (!dir.allFinite()) break;
    bool improved = false;
    double t = 1.0;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      const Vector trial = c.beta + t * dir;
      const auto r_trial = finite_residuals(data, model, trial);
      if (!r_trial) continue;
      const double s_trial = scale_or_zero(as_span(*r_trial), spec, lev_span);
      if (s_trial < c.scale) {
        const double rel = (c.scale - s_trial) / c.scale;
        c.beta = trial;
        c.scale = s_trial;
        improved = rel >= 1e-10 && s_trial > 0.0;
        break;
      }
    }
    if (!improved) break;
  }
  return c;
}

void mm_stage(const Dataset& data, const ModelSpec& model, const MmOptions& opt, double sigma,
              const Vector& divisors, const Vector& lev, MmFit& fit) {
  const std::span<const double> d_span = as_span(divisors);
  const std::span<const double> w_span = as_span(lev);
  Vector beta = fit.beta_s;
  double obj = mm_objective(data, model, beta, opt.rho1, sigma, d_span, w_span);
  fit.s_objective = obj;
  fit.trace.push_back(obj);
  fit.converged = false;

  const auto n = static_cast<std::size_t>(data.size());
  std::vector<double> irls(n);
  for (int it = 0; it < opt.max_irwls; ++it) {
    fit.iterations = it + 1;
    const Vector r = raw_residuals(data, model, beta);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double d = divisors(k);
      irls[i] = opt.rho1.weight(r(k) / (sigma * d)) * lev(k) / (d * d);
    }
    const Vector dir = gauss_newton_direction(data, model, beta, irls);
    if (!dir.allFinite()) break;
    bool accepted = false;
    double t = 1.0;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      const Vector trial = beta + t * dir;
      const double obj_trial = mm_objective(data, model, trial, opt.rho1, sigma, d_span, w_span);
      if (std::isfinite(obj_trial) && obj_trial <= obj) {
        beta = trial;
        obj = obj_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      fit.converged = dir.norm() <= 1e-6 * (1.0 + beta.norm());
      break;
    }
    fit.trace.push_back(obj);
    if (t * dir.norm() <= opt.tol * (beta.norm() + opt.tol)) {
      fit.converged = true;
      break;
    }
  }
  for (std::size_t k = 1; k < fit.trace.size(); ++k) {
    if (fit.trace[k] > fit.trace[k - 1]) {
      throw NumericalError("internal: MM objective increased during IRWLS");
    }
  }
  fit.beta = beta;
  fit.objective = obj;
}

}  // namespace

MmFit nonlinear_mm(const Dataset& data, const ModelSpec& model, const MmOptions& options,
                   std::span<const double> leverage_weights,
                   const std::optional<ScaleOverride>& scale_override) {
  const std::size_t n = data.size();
  if (n < static_cast<std::size_t>(model.p) + 1) {
    throw PreconditionError("nonlinear_mm needs n >= p + 1 observations");
  }
  Vector lev = Vector::Ones(static_cast<Eigen::Index>(n));
  if (!leverage_weights.empty()) {
    if (leverage_weights.size() != n) throw PreconditionError("leverage weights and data differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      if (!(leverage_weights[i] >= 0.0)) throw PreconditionError("leverage weights must be non-negative");
      lev(static_cast<Eigen::Index>(i)) = leverage_weights[i];
    }
  }

  MmFit fit;
  if (scale_override) {
    const ScaleOverride& so = *scale_override;
    if (!(so.sigma > 0.0) || !std::isfinite(so.sigma)) {
      throw PreconditionError("scale override needs a positive sigma");
    }
    if (so.divisors.size() != static_cast<Eigen::Index>(n) || !(so.divisors.array() > 0.0).all() ||
        !so.divisors.allFinite()) {
      throw PreconditionError("scale override divisors must be positive, one per observation");
    }
    if (so.beta_start.size() != model.p) throw PreconditionError("scale override needs a p-vector start");
    fit.beta_s = so.beta_start;
    fit.s_scale = so.sigma;
    mm_stage(data, model, options, so.sigma, so.divisors, lev, fit);
    return fit;
  }

  const MScaleSpec spec = options.scale_spec();
  const std::span<const double> lev_span = as_span(lev);
  BestCandidates<NonlinearCandidate> pool(static_cast<std::size_t>(options.refine_candidates));
  for (const auto& idx : draw_subsets(n, static_cast<std::size_t>(model.p), options.n_subsets,
                                      options.seed)) {
    const Dataset sub = data.subset(idx);
    Vector beta;
    try {
      beta = nonlinear_ls(sub, model, start_values(sub, model)).beta;
    } catch (const Error&) {
      continue;
    }
    if (!beta.allFinite()) continue;
    const auto r = finite_residuals(data, model, beta);
    if (!r) continue;
    const auto s = score(pool, as_span(*r), spec, lev_span);
    if (s) pool.offer({*s, std::move(beta)});
  }
  if (pool.empty()) throw NumericalError("nonlinear_mm: every elemental subset fit failed");

  NonlinearCandidate best = refine_nonlinear_s(data, model, pool.items().front(), options, spec, lev);
  for (std::size_t k = 1; k < pool.items().size(); ++k) {
    NonlinearCandidate c = refine_nonlinear_s(data, model, pool.items()[k], options, spec, lev);
    if (c.scale < best.scale) best = std::move(c);
  }

  fit.beta_s = best.beta;
  fit.s_scale = best.scale;
  const double mad = median_mad(std::span<const double>(data.y.data(), n), 1.0).scale;
  if (best.scale == 0.0 || best.scale <= 1e-10 * mad) {
    fit.beta = best.beta;
    fit.exact_fit = true;
    fit.converged = true;
    return fit;
  }
  mm_stage(data, model, options, best.scale, Vector::Ones(static_cast<Eigen::Index>(n)), lev, fit);
  return fit;
}

}  // namespace robhet
