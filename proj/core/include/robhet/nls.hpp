#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "robhet/fit_result.hpp"
#include "robhet/model.hpp"

namespace robhet {

struct LmOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;  // relative to 1 + rss
  double step_tolerance = 1e-10;     // relative to 1 + |beta|
  double initial_damping = 1e-3;     // times max diag(J'WJ)
};

/// Relative rss increase treated as rounding noise. Only the final
/// Gauss-Newton steps use it, so rss_trace is non-increasing up to this slack.
inline constexpr double kRssRoundingSlack = 1e-13;

struct LsFit {
  Vector beta;
  double rss = 0.0;
  bool converged = false;
  int iterations = 0;
  /// rss at the start and after each accepted step.
  std::vector<double> rss_trace;
};

/// Levenberg-Marquardt minimisation of sum w_i (y_i - g(x_i, beta))^2.
///
/// Damping starts at initial_damping * max diag(J'WJ), grows x10 on a
/// rejected step and shrinks /3 on an accepted one. Hitting the iteration
/// cap returns the best iterate with converged = false. A converged fit is
/// finished by up to three undamped Gauss-Newton steps. Throws
/// NumericalError when J'WJ vanishes identically.
LsFit nonlinear_ls(const Dataset& data, const ModelSpec& model, const Vector& beta0,
                   std::span<const double> case_weights = {}, const LmOptions& options = {});

struct LsSearchOptions {
  /// Random p-point exact fits tried as extra starts; 0 keeps the single
  /// model start.
  int n_subsets = 100;
  /// Best subset fits (by full-data rss) refined by Levenberg-Marquardt.
  int refine_candidates = 5;
  std::uint64_t seed = 0x5eed;
};

/// Least squares over several starts: the model start plus the best few
/// elemental fits. Returns the refined fit with the smallest rss, the model
/// start winning ties.
///
/// A single local search can miss the global minimiser badly: a tight
/// cluster of outliers at one covariate value admits a sharply decaying
/// curve through the cluster whose rss beats every moderate fit.
LsFit global_nonlinear_ls(const Dataset& data, const ModelSpec& model, const LmOptions& lm = {},
                          const LsSearchOptions& search = {});

/// One Gauss-Newton direction for min sum w_i (y_i - g(x_i, beta))^2.
/// A tiny ridge keeps near-singular systems solvable.
Vector gauss_newton_direction(const Dataset& data, const ModelSpec& model, const Vector& beta,
                              std::span<const double> weights);

/// Floor applied to |r| before taking logs of residuals.
inline constexpr double kLogResidualFloor = 1e-12;

/// -E[log|eps|] for eps ~ N(0, 1), i.e. (gamma + log 2) / 2.
inline constexpr double kLogAbsNormalOffset = 0.6351814227307392;

/// z_i = log(max(|r_i|, kLogResidualFloor)).
Vector log_abs_residuals(const Vector& r);

struct LinearFit {
  double intercept = 0.0;
  Vector slope;
};

/// Ordinary least squares of z on [1, V].
LinearFit ols_with_intercept(const Vector& z, const Matrix& v);

struct HlsOptions {
  LmOptions lm;
  LsSearchOptions search;
};

/// Classical heteroscedastic weighted least squares:
///   1. LS fit of beta (global_nonlinear_ls);
///   2. OLS of log|r_i| on h(x_i, beta_LS) giving (alpha, lambda);
///   3. case-weighted LS refit with weights 1 / upsilon(x_i, lambda, beta_LS)^2;
///   4. sigma = sample sd of the scaled residuals at the refit.
/// exp(alpha + kLogAbsNormalOffset) is reported as FitResult::alpha's
/// companion in the diagnostics and as the LS-row scale.
FitResult weighted_ls_pipeline(const Dataset& data, const ModelSpec& model,
                               const HlsOptions& options = {});

}  // namespace robhet
