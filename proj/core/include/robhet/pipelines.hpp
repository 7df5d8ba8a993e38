#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robhet/fit_result.hpp"
#include "robhet/mm_regression.hpp"
#include "robhet/model.hpp"
#include "robhet/nls.hpp"
#include "robhet/scale_solvers.hpp"

namespace robhet {

enum class Weighting { unweighted, bisquare_leverage };

enum class ClassicalVariant { LS, HLS };

/// 1 / Phi^{-1}(3/4): the usual normalisation of the MAD.
inline constexpr double kNormalMadConsistency = 1.482602218505602;

/// Covariate scale factor of the leverage weights: 4/sqrt(12) times the
/// normalised MAD, as R's mad() returns it. The raw-MAD reading
/// (4/sqrt(12) alone, exactly consistent for U(0, 1)) downweights the ends
/// of the design much harder and costs far more efficiency on clean data.
inline const double kLeverageMadConsistency = kNormalMadConsistency * 4.0 / std::sqrt(12.0);

struct PipelineOptions {
  MmOptions mm;
  SigmaLambdaOptions step2;
  HlsOptions hls;
  /// Multiplier of the raw MAD giving the covariate scale in the leverage
  /// weights.
  double leverage_mad_consistency = kLeverageMadConsistency;
};

/// Covariate leverage weights w(x_i) = bisquare_weight_c((x_i - mu)^2 / s^2)
/// with mu = median(x), s = mad_consistency * median|x - mu|, and c the
/// 0.95 quantile of chi^2_k. For k > 1 the squared distance sums over
/// coordinates.
std::vector<double> bisquare_leverage_weights(const Dataset& data,
                                              double mad_consistency = kLeverageMadConsistency);

/// Step 1 / N1 output, reusable across estimators on the same sample.
struct InitialFit {
  Weighting weighting = Weighting::unweighted;
  std::vector<double> weights;  // empty when unweighted
  std::optional<MmFit> mm;
  std::string error;
  bool overflow = false;
};

/// Homoscedastic (weighted) MM fit of beta: Step 1 and N1.
InitialFit initial_fit(const Dataset& data, const ModelSpec& model, const PipelineOptions& options,
                       Weighting weighting);

/// MM or WMM: the Step-1 beta with the Step-2 (sigma, lambda) attached.
FitResult fit_homoscedastic(const Dataset& data, const ModelSpec& model,
                            const PipelineOptions& options, Weighting weighting);
FitResult fit_homoscedastic(const Dataset& data, const ModelSpec& model,
                            const PipelineOptions& options, const InitialFit& initial);

/// HMM / HWMM. Step 1: homoscedastic MM; Step 2: joint (sigma, lambda)
/// estimating equations at beta_ini; Step 3: MM with residuals divided by
/// sigma * upsilon(x_i, lambda, beta_ini); Step 4: MM regression of
/// log|y_i - g(x_i, beta)| on h(x_i, beta) for lambda_refined.
///
/// Stage failures are recorded in diagnostics and leave later stages empty.
FitResult fit_stepwise(const Dataset& data, const ModelSpec& model, const PipelineOptions& options,
                       Weighting weighting);
FitResult fit_stepwise(const Dataset& data, const ModelSpec& model, const PipelineOptions& options,
                       const InitialFit& initial);

/// HMM_N / HWMM_N. N1 as Step 1; N2 log-residual MM regression for lambda
/// and S-scale of r_i(beta_ini, lambda) for sigma; N3 as Step 3; N4 repeats
/// N2 at the N3 fit giving (lambda_refined, sigma_refined).
FitResult fit_stepwise_n(const Dataset& data, const ModelSpec& model,
                         const PipelineOptions& options, Weighting weighting);
FitResult fit_stepwise_n(const Dataset& data, const ModelSpec& model,
                         const PipelineOptions& options, const InitialFit& initial);

/// LS: Levenberg-Marquardt fit, with lambda from OLS of log|r| on h and
/// sigma = exp(alpha + 0.6352). HLS: weighted_ls_pipeline.
FitResult fit_classical(const Dataset& data, const ModelSpec& model, ClassicalVariant variant,
                        const PipelineOptions& options = {});

/// Fits every requested estimator on one sample, sharing Step 1 and Step 2
/// between estimators that use them. Results follow `methods` order.
std::vector<FitResult> fit_methods(const Dataset& data, const ModelSpec& model,
                                   const PipelineOptions& options, std::span<const MethodTag> methods);

FitResult fit_method(MethodTag method, const Dataset& data, const ModelSpec& model,
                     const PipelineOptions& options = {});

/// Transformed homoscedastic problem y* = y / upsilon(x, lambda, beta_ini),
/// g*(x, beta) = g(x, beta) / upsilon(x, lambda, beta_ini).
struct PseudoProblem {
  Dataset data;
  ModelSpec model;
};
PseudoProblem pseudo_observations(const Dataset& data, const ModelSpec& model, const Vector& lambda,
                                  const Vector& beta_ini);

}  // namespace robhet
