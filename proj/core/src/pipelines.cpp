#include "robhet/pipelines.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <string>

#include "robhet/errors.hpp"

namespace robhet {

// ----------------------------------------------------------- FitResult

std::string_view to_string(MethodTag tag) noexcept {
  switch (tag) {
    case MethodTag::LS: return "LS";
    case MethodTag::HLS: return "HLS";
    case MethodTag::MM: return "MM";
    case MethodTag::WMM: return "WMM";
    case MethodTag::HMM: return "HMM";
    case MethodTag::HWMM: return "HWMM";
    case MethodTag::HMM_N: return "HMM_N";
    case MethodTag::HWMM_N: return "HWMM_N";
  }
  return "?";
}

std::optional<MethodTag> parse_method(std::string_view text) noexcept {
  for (MethodTag t : kAllMethods) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

bool FitResult::complete() const noexcept {
  for (const auto& d : diagnostics) {
    if (!d.ok) return false;
  }
  return beta.size() > 0;
}

bool FitResult::converged() const noexcept {
  if (!complete()) return false;
  for (const auto& d : diagnostics) {
    if (!d.converged) return false;
  }
  return true;
}

double FitResult::curve_sigma() const noexcept { return sigma_refined.value_or(sigma); }

const Vector& FitResult::curve_lambda() const noexcept {
  return lambda_refined ? *lambda_refined : lambda;
}

// ------------------------------------------------------------ weights

std::vector<double> bisquare_leverage_weights(const Dataset& data, double mad_consistency) {
  const std::size_t n = data.size();
  const Eigen::Index k = data.covariates();
  if (n == 0) return {};
  const boost::math::chi_squared chi2(static_cast<double>(k));
  const RhoSpec bisquare(boost::math::quantile(chi2, 0.95));

  std::vector<double> dist(n, 0.0);
  std::vector<double> column(n);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = data.x(static_cast<Eigen::Index>(i), j);
    const RobustLocationScale ls = median_mad(column, mad_consistency);
    for (std::size_t i = 0; i < n; ++i) {
      const double dev = column[i] - ls.location;
      if (ls.scale > 0.0) {
        dist[i] += dev * dev / (ls.scale * ls.scale);
      } else if (dev != 0.0) {
        dist[i] = std::numeric_limits<double>::infinity();
      }
    }
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = bisquare.weight(dist[i]);
  return w;
}

// ------------------------------------------------------------- stages

namespace {

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

void check_stepwise_size(const Dataset& data, const ModelSpec& model) {
  if (data.size() < static_cast<std::size_t>(model.p + model.q + 2)) {
    throw PreconditionError("stepwise estimators need n >= p + q + 2 observations (n = " +
                            std::to_string(data.size()) + ")");
  }
}

// Runs `body`, recording a diagnostics entry. Returns false on failure.
template <typename Body>
bool run_stage(FitResult& out, const std::string& name, Body&& body) {
  StageDiagnostics d;
  d.stage = name;
  try {
    body(d);
    d.ok = true;
  } catch (const OverflowError& e) {
    out.overflow = true;
    d.ok = false;
    d.message = e.what();
  } catch (const Error& e) {
    d.ok = false;
    d.message = e.what();
  }
  out.diagnostics.push_back(std::move(d));
  return out.diagnostics.back().ok;
}

void mark_skipped(FitResult& out, const std::string& name, const std::string& why) {
  out.diagnostics.push_back({name, true, true, 0, "skipped: " + why});
}

bool weighted(const InitialFit& init) { return init.weighting == Weighting::bisquare_leverage; }

Vector divisors_at(const Dataset& data, const ModelSpec& model, const Vector& lambda,
                   const Vector& beta_ini) {
  return variance_divisors(data, model, lambda, beta_ini);
}

// Step 3 / N3.
bool pseudo_mm_stage(FitResult& out, const std::string& name, const Dataset& data,
                     const ModelSpec& model, const PipelineOptions& options,
                     const InitialFit& init) {
  return run_stage(out, name, [&](StageDiagnostics& d) {
    ScaleOverride so;
    so.sigma = out.sigma;
    so.divisors = divisors_at(data, model, out.lambda, out.beta_ini);
    so.beta_start = out.beta_ini;
    const MmFit fit = nonlinear_mm(data, model, options.mm, init.weights, so);
    out.beta = fit.beta;
    d.converged = fit.converged;
    d.iterations = fit.iterations;
  });
}

LinearMmFit log_residual_mm(const Dataset& data, const ModelSpec& model, const Vector& beta,
                            const MmOptions& mm) {
  const Vector z = log_abs_residuals(raw_residuals(data, model, beta));
  return linear_mm(z, variance_covariates(data, model, beta), mm);
}

FitResult exact_fit_result(FitResult out, const InitialFit& init, const ModelSpec& model) {
  out.exact_fit = true;
  out.beta = init.mm->beta;
  out.sigma = init.mm->s_scale;
  out.lambda = Vector::Zero(model.q);
  return out;
}

}  // namespace

InitialFit initial_fit(const Dataset& data, const ModelSpec& model, const PipelineOptions& options,
                       Weighting weighting) {
  InitialFit init;
  init.weighting = weighting;
  if (weighting == Weighting::bisquare_leverage) init.weights = bisquare_leverage_weights(data, options.leverage_mad_consistency);
  try {
    init.mm = nonlinear_mm(data, model, options.mm, init.weights);
  } catch (const OverflowError& e) {
    init.overflow = true;
    init.error = e.what();
  } catch (const Error& e) {
    init.error = e.what();
  }
  return init;
}

FitResult fit_homoscedastic(const Dataset& data, const ModelSpec& model,
                            const PipelineOptions& options, Weighting weighting) {
  check_stepwise_size(data, model);
  return fit_homoscedastic(data, model, options, initial_fit(data, model, options, weighting));
}

FitResult fit_homoscedastic(const Dataset& data, const ModelSpec& model,
                            const PipelineOptions& options, const InitialFit& init) {
  check_stepwise_size(data, model);
  FitResult out;
  out.method = weighted(init) ? MethodTag::WMM : MethodTag::MM;
  if (!init.mm) {
    out.overflow = init.overflow;
    out.diagnostics.push_back({"step1", false, false, 0, init.error});
    return out;
  }
  out.diagnostics.push_back({"step1", true, init.mm->converged, init.mm->iterations,
                             init.mm->exact_fit ? "exact fit" : ""});
  out.beta_ini = init.mm->beta;
  out.beta = init.mm->beta;
  if (init.mm->exact_fit) {
    mark_skipped(out, "step2", "exact fit");
    return exact_fit_result(std::move(out), init, model);
  }
  run_stage(out, "step2", [&](StageDiagnostics& d) {
    const SigmaLambdaEstimate est = solve_sigma_lambda(data, out.beta_ini, model,
                                                       options.mm.scale_spec(), init.weights,
                                                       options.step2);
    out.sigma = est.sigma;
    out.lambda = est.lambda;
    d.converged = est.converged;
    d.iterations = est.iterations;
    if (!est.converged) d.message = "residual norm " + std::to_string(est.final_residual_norm);
  });
  return out;
}

namespace {

FitResult continue_stepwise(FitResult out, const Dataset& data, const ModelSpec& model,
                            const PipelineOptions& options, const InitialFit& init) {
  out.method = weighted(init) ? MethodTag::HWMM : MethodTag::HMM;
  if (!out.complete()) {
    out.beta = Vector();
    return out;
  }
  if (out.exact_fit) {
    mark_skipped(out, "step3", "exact fit");
    mark_skipped(out, "step4", "exact fit");
    out.lambda_refined = Vector::Zero(model.q);
    return out;
  }
  out.beta = Vector();
  if (!pseudo_mm_stage(out, "step3", data, model, options, init)) return out;
  run_stage(out, "step4", [&](StageDiagnostics& d) {
    const LinearMmFit lin = log_residual_mm(data, model, out.beta, options.mm);
    out.lambda_refined = lin.lambda;
    out.alpha = lin.alpha;
    d.converged = lin.converged;
    d.iterations = lin.iterations;
    if (lin.degenerate) d.message = "degenerate log-residual scale";
  });
  return out;
}

}  // namespace

FitResult fit_stepwise(const Dataset& data, const ModelSpec& model, const PipelineOptions& options,
                       Weighting weighting) {
  check_stepwise_size(data, model);
  return fit_stepwise(data, model, options, initial_fit(data, model, options, weighting));
}

FitResult fit_stepwise(const Dataset& data, const ModelSpec& model, const PipelineOptions& options,
                       const InitialFit& init) {
  return continue_stepwise(fit_homoscedastic(data, model, options, init), data, model, options,
                           init);
}

FitResult fit_stepwise_n(const Dataset& data, const ModelSpec& model,
                         const PipelineOptions& options, Weighting weighting) {
  check_stepwise_size(data, model);
  return fit_stepwise_n(data, model, options, initial_fit(data, model, options, weighting));
}

FitResult fit_stepwise_n(const Dataset& data, const ModelSpec& model,
                         const PipelineOptions& options, const InitialFit& init) {
  check_stepwise_size(data, model);
  FitResult out;
  out.method = weighted(init) ? MethodTag::HWMM_N : MethodTag::HMM_N;
  if (!init.mm) {
    out.overflow = init.overflow;
    out.diagnostics.push_back({"stepN1", false, false, 0, init.error});
    return out;
  }
  out.diagnostics.push_back({"stepN1", true, init.mm->converged, init.mm->iterations,
                             init.mm->exact_fit ? "exact fit" : ""});
  out.beta_ini = init.mm->beta;
  if (init.mm->exact_fit) {
    for (const char* s : {"stepN2", "stepN3", "stepN4"}) mark_skipped(out, s, "exact fit");
    out = exact_fit_result(std::move(out), init, model);
    out.lambda_refined = out.lambda;
    out.sigma_refined = out.sigma;
    return out;
  }

  const MScaleSpec spec = options.mm.scale_spec();
  const bool n2 = run_stage(out, "stepN2", [&](StageDiagnostics& d) {
    const LinearMmFit lin = log_residual_mm(data, model, out.beta_ini, options.mm);
    out.lambda = lin.lambda;
    out.alpha = lin.alpha;
    const Vector r = residuals(data, model, out.beta_ini, out.lambda);
    out.sigma = m_scale(as_span(r), spec);
    d.converged = lin.converged;
    d.iterations = lin.iterations;
  });
  if (!n2) return out;
  if (!pseudo_mm_stage(out, "stepN3", data, model, options, init)) return out;
  run_stage(out, "stepN4", [&](StageDiagnostics& d) {
    const LinearMmFit lin = log_residual_mm(data, model, out.beta, options.mm);
    const Vector r = residuals(data, model, out.beta, lin.lambda);
    out.sigma_refined = m_scale(as_span(r), spec);
    out.lambda_refined = lin.lambda;
    d.converged = lin.converged;
    d.iterations = lin.iterations;
  });
  return out;
}

FitResult fit_classical(const Dataset& data, const ModelSpec& model, ClassicalVariant variant,
                        const PipelineOptions& options) {
  FitResult out;
  if (variant == ClassicalVariant::HLS) {
    if (data.size() < static_cast<std::size_t>(model.p + model.q + 1)) {
      throw PreconditionError("HLS needs n >= p + q + 1 observations");
    }
    run_stage(out, "hls", [&](StageDiagnostics& d) {
      out = weighted_ls_pipeline(data, model, options.hls);
      d.converged = out.converged();
      d.iterations = static_cast<int>(out.diagnostics.size());
    });
    out.method = MethodTag::HLS;
    if (!out.complete()) out.beta = Vector();
    return out;
  }

  if (data.size() < static_cast<std::size_t>(model.p)) {
    throw PreconditionError("LS needs n >= p observations");
  }
  out.method = MethodTag::LS;
  Vector beta;
  const bool ok = run_stage(out, "ls", [&](StageDiagnostics& d) {
    const LsFit ls = global_nonlinear_ls(data, model, options.hls.lm, options.hls.search);
    beta = ls.beta;
    d.converged = ls.converged;
    d.iterations = ls.iterations;
  });
  if (!ok) return out;
  out.beta_ini = beta;
  if (data.size() >= static_cast<std::size_t>(model.q + 2)) {
    run_stage(out, "log-variance", [&](StageDiagnostics& d) {
      const Vector z = log_abs_residuals(raw_residuals(data, model, beta));
      const LinearFit lf = ols_with_intercept(z, variance_covariates(data, model, beta));
      out.lambda = lf.slope;
      out.alpha = lf.intercept;
      out.sigma = std::exp(lf.intercept + kLogAbsNormalOffset);
      d.converged = true;
      d.iterations = 1;
    });
  }
  if (out.complete() || out.diagnostics.back().ok) out.beta = beta;
  return out;
}

std::vector<FitResult> fit_methods(const Dataset& data, const ModelSpec& model,
                                   const PipelineOptions& options, std::span<const MethodTag> methods) {
  std::map<Weighting, InitialFit> initial;
  std::map<Weighting, FitResult> homoscedastic;
  auto init_for = [&](Weighting w) -> const InitialFit& {
    auto it = initial.find(w);
    if (it == initial.end()) it = initial.emplace(w, initial_fit(data, model, options, w)).first;
    return it->second;
  };
  auto homo_for = [&](Weighting w) -> const FitResult& {
    auto it = homoscedastic.find(w);
    if (it == homoscedastic.end()) {
      it = homoscedastic.emplace(w, fit_homoscedastic(data, model, options, init_for(w))).first;
    }
    return it->second;
  };

  std::vector<FitResult> out;
  out.reserve(methods.size());
  for (MethodTag tag : methods) {
    switch (tag) {
      case MethodTag::LS: out.push_back(fit_classical(data, model, ClassicalVariant::LS, options)); break;
      case MethodTag::HLS: out.push_back(fit_classical(data, model, ClassicalVariant::HLS, options)); break;
      case MethodTag::MM: check_stepwise_size(data, model); out.push_back(homo_for(Weighting::unweighted)); break;
      case MethodTag::WMM: check_stepwise_size(data, model); out.push_back(homo_for(Weighting::bisquare_leverage)); break;
      case MethodTag::HMM:
      case MethodTag::HWMM: {
        check_stepwise_size(data, model);
        const Weighting w = tag == MethodTag::HMM ? Weighting::unweighted : Weighting::bisquare_leverage;
        out.push_back(continue_stepwise(homo_for(w), data, model, options, init_for(w)));
        break;
      }
      case MethodTag::HMM_N:
      case MethodTag::HWMM_N: {
        const Weighting w = tag == MethodTag::HMM_N ? Weighting::unweighted : Weighting::bisquare_leverage;
        out.push_back(fit_stepwise_n(data, model, options, init_for(w)));
        break;
      }
    }
  }
  return out;
}

FitResult fit_method(MethodTag method, const Dataset& data, const ModelSpec& model,
                     const PipelineOptions& options) {
  const MethodTag one[] = {method};
  return fit_methods(data, model, options, one).front();
}

PseudoProblem pseudo_observations(const Dataset& data, const ModelSpec& model, const Vector& lambda,
                                  const Vector& beta_ini) {
  PseudoProblem out;
  out.data = data;
  out.data.y = data.y.cwiseQuotient(variance_divisors(data, model, lambda, beta_ini));
  out.model = model;
  out.model.name = model.name + "*";
  out.model.g = [model, lambda, beta_ini](Covariate x, const Vector& beta) {
    return model.g(x, beta) / upsilon(model, x, lambda, beta_ini);
  };
  out.model.grad_g = [model, lambda, beta_ini](Covariate x, const Vector& beta) {
    return Vector(model.grad_g(x, beta) / upsilon(model, x, lambda, beta_ini));
  };
  out.model.start = nullptr;
  return out;
}

}  // namespace robhet
