#pragma once

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "robhet/model.hpp"

namespace robhet {

enum class MethodTag { LS, HLS, MM, WMM, HMM, HWMM, HMM_N, HWMM_N };

inline constexpr MethodTag kAllMethods[] = {MethodTag::LS,   MethodTag::MM,    MethodTag::WMM,
                                            MethodTag::HLS,  MethodTag::HMM,   MethodTag::HWMM,
                                            MethodTag::HMM_N, MethodTag::HWMM_N};

std::string_view to_string(MethodTag tag) noexcept;
std::optional<MethodTag> parse_method(std::string_view text) noexcept;

struct StageDiagnostics {
  std::string stage;
  bool ok = false;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

/// Output of every estimator. Stages that did not run leave their fields
/// empty (size-0 vectors, NaN scalars, nullopt).
struct FitResult {
  MethodTag method = MethodTag::LS;
  Vector beta_ini;
  Vector beta;
  double sigma = std::numeric_limits<double>::quiet_NaN();
  Vector lambda;
  std::optional<Vector> lambda_refined;
  std::optional<double> sigma_refined;
  /// Secondary quantities (e.g. the log-regression intercept).
  std::optional<double> alpha;
  std::vector<StageDiagnostics> diagnostics;
  bool overflow = false;
  bool exact_fit = false;

  /// Every stage ran without error.
  bool complete() const noexcept;
  /// complete() and every iterative stage met its tolerance.
  bool converged() const noexcept;

  /// Scale and variance parameters used to draw sigma(x) = s * exp(l' h(x)).
  double curve_sigma() const noexcept;
  const Vector& curve_lambda() const noexcept;
};

}  // namespace robhet
