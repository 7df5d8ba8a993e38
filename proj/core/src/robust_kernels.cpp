#include "robhet/robust_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "robhet/errors.hpp"

namespace robhet {

RhoSpec::RhoSpec(double c) : c_(c) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw PreconditionError("rho tuning constant must be positive and finite, got " +
                            std::to_string(c));
  }
}

double RhoSpec::rho(double t) const noexcept {
  const double u = t / c_;
  const double u2 = u * u;
  if (u2 >= 1.0) return 1.0;
  const double v = 1.0 - u2;
  return 1.0 - v * v * v;
}

double RhoSpec::psi(double t) const noexcept {
  const double u = t / c_;
  const double u2 = u * u;
  if (u2 >= 1.0) return 0.0;
  const double v = 1.0 - u2;
  return 6.0 * t * v * v / (c_ * c_);
}

double RhoSpec::weight(double t) const noexcept {
  const double u = t / c_;
  const double u2 = u * u;
  if (u2 >= 1.0) return 0.0;
  const double v = 1.0 - u2;
  return v * v;
}

namespace {

double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double med = v[mid];
  if (n % 2 == 0) {
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  return med;
}

}  // namespace

double median(std::span<const double> sample) {
  if (sample.empty()) throw PreconditionError("median of an empty sample");
  std::vector<double> v(sample.begin(), sample.end());
  return median_inplace(v);
}

double quantile(std::span<const double> sample, double prob) {
  if (sample.empty()) throw PreconditionError("quantile of an empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw PreconditionError("quantile probability outside [0, 1]");
  std::vector<double> v(sample.begin(), sample.end());
  std::sort(v.begin(), v.end());
  const double idx = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(idx));
  const auto hi = static_cast<std::size_t>(std::ceil(idx));
  const double frac = idx - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

RobustLocationScale median_mad(std::span<const double> sample, double consistency) {
  if (sample.empty()) throw PreconditionError("median_mad of an empty sample");
  if (!(consistency > 0.0)) throw PreconditionError("MAD consistency factor must be positive");
  std::vector<double> v(sample.begin(), sample.end());
  const double loc = median_inplace(v);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(sample[i] - loc);
  return {loc, consistency * median_inplace(v)};
}

}  // namespace robhet
