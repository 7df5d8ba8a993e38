#pragma once

#include <optional>
#include <span>

#include "robhet/model.hpp"
#include "robhet/robust_kernels.hpp"

namespace robhet {

/// M-scale definition: sigma solves (1/n) sum chi(r_i / sigma) = 0 with
/// chi(u) = rho0(u) - b. With sup rho0 = 1 the breakdown point is
/// min(b, 1 - b).
struct MScaleSpec {
  RhoSpec rho0{kScaleTuning};
  double b = 0.5;

  double chi(double u) const noexcept { return rho0.rho(u) - b; }
};

/// (1/n) sum chi(r_i / s), or the weight-normalised mean when `weights` is
/// non-empty.
double mean_chi(std::span<const double> residuals, double s, const MScaleSpec& spec,
                std::span<const double> weights = {});

/// Root of mean_chi(r, sigma) = 0 by bracketing from the MAD and bisection.
///
/// The map sigma -> mean_chi is non-increasing, so the root is unique. The
/// bracket starts at median|r| / 0.6745, expands by factors of 10, then
/// bisects to a relative width of 1e-12.
///
/// Throws DegenerateScaleError when the (weighted) fraction of exactly-zero
/// residuals is at least 1 - b, and NumericalError if no bracket is found.
double m_scale(std::span<const double> residuals, const MScaleSpec& spec = {},
               std::span<const double> weights = {});

struct SigmaLambdaOptions {
  int max_iterations = 100;
  int max_halvings = 20;
  double fd_step = 1e-6;
  double tolerance = 1e-8;
  /// Extra Newton start, e.g. an estimate from an earlier pipeline pass.
  std::optional<Vector> previous;
};

struct SigmaLambdaEstimate {
  double sigma = 0.0;
  Vector lambda;
  bool converged = false;
  int iterations = 0;
  /// Max-norm of the stacked estimating equations at (sigma, lambda).
  double final_residual_norm = 0.0;
};

/// Joint robust estimate of the error scale and the variance parameters at
/// a fixed beta, solving
///
///   (1/n) sum chi(r_i(beta, lambda) / sigma)                 = 0
///   (1/n) sum chi(r_i(beta, lambda) / sigma) w2_i h(x_i, beta) = 0
///
/// Nested: sigma(lambda) is the exact M-scale of r(beta, lambda), and the
/// q-dimensional lambda equation is solved by damped Newton with a
/// forward-difference Jacobian from the starts {0, log-residual OLS slope,
/// options.previous}. The start with the smallest stacked norm wins; ties go
/// to the smallest |lambda|, then to start order.
///
/// `leverage_weights` holds w2(h(x_i, beta)) per observation; empty means
/// w2 = 1.
SigmaLambdaEstimate solve_sigma_lambda(const Dataset& data, const Vector& beta,
                                       const ModelSpec& model, const MScaleSpec& spec,
                                       std::span<const double> leverage_weights = {},
                                       const SigmaLambdaOptions& options = {});

}  // namespace robhet
