#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "robhet/model.hpp"
#include "robhet/robust_kernels.hpp"
#include "robhet/scale_solvers.hpp"

namespace robhet {

/// Tuning for S-initialised MM regression.
struct MmOptions {
  RhoSpec rho0{kScaleTuning};
  RhoSpec rho1{kEfficiencyTuning};
  double b = 0.5;
  /// Random elemental subsets tried at the S stage.
  int n_subsets = 500;
  /// Best subsets carried into local S refinement.
  int refine_candidates = 5;
  int max_refine_steps = 50;
  int max_irwls = 200;
  int max_halvings = 20;
  /// Relative step size that ends the IRWLS iterations.
  double tol = 1e-8;
  std::uint64_t seed = 0x5eed;

  MScaleSpec scale_spec() const { return {rho0, b}; }
};

struct LinearMmFit {
  double alpha = 0.0;
  Vector lambda;
  /// S-scale of the residuals; ~0 when `degenerate`.
  double scale = 0.0;
  /// Exact fit: more than half the points lie on the S-minimiser.
  bool degenerate = false;
  bool converged = false;
  int iterations = 0;
  /// rho1 objective after each accepted IRWLS step.
  std::vector<double> trace;
};

/// MM regression of z on [1, V]. The S stage scores random (q+1)-point
/// exact fits by the M-scale of their residuals, refines the best few by
/// IRWLS on the S criterion, and the MM stage then minimises
/// sum rho1((z_i - alpha - lambda' v_i) / s) by descent-guarded IRWLS.
/// The slope stays consistent under asymmetric errors.
LinearMmFit linear_mm(const Vector& z, const Matrix& v, const MmOptions& options = {});

/// Plug-in scale for the MM stage: residual i is divided by
/// sigma * divisors(i), and iterations start from `beta_start`.
struct ScaleOverride {
  double sigma = 0.0;
  Vector divisors;
  Vector beta_start;
};

struct MmFit {
  Vector beta;
  /// S-stage minimiser (or the supplied start under a scale override).
  Vector beta_s;
  double s_scale = 0.0;
  /// (1/n) sum rho1(r_i / (s d_i)) w_i at beta.
  double objective = 0.0;
  /// Same criterion at beta_s.
  double s_objective = 0.0;
  bool converged = false;
  bool exact_fit = false;
  int iterations = 0;
  std::vector<double> trace;
};

/// (1/n) sum rho1((y_i - g(x_i, beta)) / (sigma d_i)) w_i. Empty divisors or
/// weights mean all ones.
double mm_objective(const Dataset& data, const ModelSpec& model, const Vector& beta,
                    const RhoSpec& rho1, double sigma, std::span<const double> divisors = {},
                    std::span<const double> weights = {});

/// Weighted MM estimator for a nonlinear model.
///
/// Without `scale_override`: S stage over `n_subsets` random p-point LM fits
/// scored by the leverage-weighted M-scale, local refinement of the best
/// candidates, then IRWLS on sum rho1(r_i / s) w_i from the S minimiser.
/// A scale below 1e-10 MAD(y) returns the S minimiser flagged exact_fit.
///
/// With `scale_override`: the scale stage is skipped and the criterion
/// sum rho1((y_i - g) / (sigma d_i)) w_i is minimised from beta_start.
MmFit nonlinear_mm(const Dataset& data, const ModelSpec& model, const MmOptions& options = {},
                   std::span<const double> leverage_weights = {},
                   const std::optional<ScaleOverride>& scale_override = std::nullopt);

}  // namespace robhet
