#pragma once

#include <span>
#include <vector>

namespace robhet {

/// Tuning constant giving a Fisher-consistent M-scale under normality with
/// 50% breakdown (b = 0.5).
inline constexpr double kScaleTuning = 1.54764;

/// Tuning constant of the efficient rho used at the MM stage.
inline constexpr double kEfficiencyTuning = 4.75;

/// Tukey bisquare rho-function, bounded so that sup rho = 1.
///
///   rho(t)    = min(1 - (1 - (t/c)^2)^3, 1)
///   psi(t)    = rho'(t) = 6 t (1 - (t/c)^2)^2 / c^2   for |t| < c, else 0
///   weight(t) = (1 - (t/c)^2)^2                       for |t| < c, else 0
///
/// weight is psi(t)/t rescaled by its limit 6/c^2 at zero so that
/// weight(0) = 1. The rescaling is a constant and does not move any argmin
/// or IRWLS fixed point.
class RhoSpec {
 public:
  explicit RhoSpec(double c);

  double c() const noexcept { return c_; }

  double rho(double t) const noexcept;
  double psi(double t) const noexcept;
  double weight(double t) const noexcept;

 private:
  double c_;
};

struct RobustLocationScale {
  double location = 0.0;
  double scale = 0.0;
};

/// Sample median; even sizes average the two central order statistics.
/// Throws PreconditionError on an empty sample.
double median(std::span<const double> sample);

/// Linearly interpolated empirical quantile at index prob * (n - 1).
double quantile(std::span<const double> sample, double prob);

/// location = median(sample), scale = consistency * median |x_i - location|.
/// A constant sample yields scale 0; callers decide what that means.
RobustLocationScale median_mad(std::span<const double> sample, double consistency);

}  // namespace robhet
