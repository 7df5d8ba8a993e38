#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "robhet/errors.hpp"
#include "robhet/mm_regression.hpp"
#include "robhet/simulation.hpp"

using robhet::Matrix;
using robhet::Vector;

namespace {

struct LinearData {
  Vector z;
  Matrix v;
};

// z = 1 + v + log|eps|, optionally with a fraction of responses moved up by 50.
LinearData log_noise_line(int n, std::uint64_t seed, double outlier_fraction = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 4);
  std::normal_distribution<double> e(0, 1);
  LinearData d{Vector(n), Matrix(n, 1)};
  for (int i = 0; i < n; ++i) {
    d.v(i, 0) = u(rng);
    d.z(i) = 1.0 + d.v(i, 0) + std::log(std::abs(e(rng)));
  }
  const int bad = static_cast<int>(outlier_fraction * n);
  for (int i = 0; i < bad; ++i) d.z(i) += 50.0;
  return d;
}

robhet::Dataset noisy_sample(std::uint64_t seed) {
  return robhet::generate_sample(100, robhet::reference_truth(), seed);
}

void expect_same(const robhet::MmFit& a, const robhet::MmFit& b) {
  EXPECT_EQ(a.beta, b.beta);
  EXPECT_EQ(a.beta_s, b.beta_s);
  EXPECT_EQ(a.s_scale, b.s_scale);
  EXPECT_EQ(a.objective, b.objective);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.iterations, b.iterations);
}

}  // namespace

TEST(LinearMm, ExactHyperplane) {
  Vector z(30);
  Matrix v(30, 1);
  for (int i = 0; i < 30; ++i) {
    v(i, 0) = 0.1 * i - 1.0;
    z(i) = 2.0 + 3.0 * v(i, 0);
  }
  const auto fit = robhet::linear_mm(z, v);
  EXPECT_TRUE(fit.degenerate);
  EXPECT_NEAR(fit.alpha, 2.0, 1e-10);
  EXPECT_NEAR(fit.lambda(0), 3.0, 1e-10);
}

TEST(LinearMm, ExactHyperplaneTwoCovariates) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0, 1);
  Vector z(40);
  Matrix v(40, 2);
  for (int i = 0; i < 40; ++i) {
    v(i, 0) = n01(rng);
    v(i, 1) = n01(rng);
    z(i) = -1.0 + 0.5 * v(i, 0) + 4.0 * v(i, 1);
  }
  const auto fit = robhet::linear_mm(z, v);
  EXPECT_TRUE(fit.degenerate);
  EXPECT_NEAR(fit.alpha, -1.0, 1e-10);
  EXPECT_NEAR(fit.lambda(0), 0.5, 1e-10);
  EXPECT_NEAR(fit.lambda(1), 4.0, 1e-10);
}

TEST(LinearMm, SlopeUnderAsymmetricErrors) {
  std::vector<double> slopes;
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = log_noise_line(1000, 100 + static_cast<std::uint64_t>(rep));
    slopes.push_back(robhet::linear_mm(d.z, d.v).lambda(0));
  }
  EXPECT_NEAR(robhet::median(slopes), 1.0, 0.05);
}

TEST(LinearMm, SlopeUnderGrossOutliers) {
  std::vector<double> slopes;
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = log_noise_line(200, 300 + static_cast<std::uint64_t>(rep), 0.2);
    slopes.push_back(robhet::linear_mm(d.z, d.v).lambda(0));
  }
  EXPECT_LT(std::abs(robhet::median(slopes) - 1.0), 0.1);
}

TEST(LinearMm, DescentTraceAndDeterminism) {
  const auto d = log_noise_line(150, 7, 0.1);
  const auto a = robhet::linear_mm(d.z, d.v);
  const auto b = robhet::linear_mm(d.z, d.v);
  EXPECT_TRUE(a.converged);
  for (std::size_t k = 1; k < a.trace.size(); ++k) EXPECT_LE(a.trace[k], a.trace[k - 1]);
  EXPECT_EQ(a.lambda, b.lambda);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(LinearMm, Preconditions) {
  Vector z(2);
  z << 1, 2;
  EXPECT_THROW(robhet::linear_mm(z, Matrix::Ones(2, 1)), robhet::PreconditionError);
  const auto d = log_noise_line(20, 9);
  EXPECT_THROW(robhet::linear_mm(d.z, Matrix::Constant(20, 1, 3.0)), robhet::Error);
}

TEST(NonlinearMm, ExactCurveFlagsExactFit) {
  auto truth = robhet::reference_truth();
  truth.sigma = 0.0;
  const auto d = robhet::generate_sample(100, truth, 3);
  const auto fit = robhet::nonlinear_mm(d, robhet::exponential_experiment_model());
  EXPECT_TRUE(fit.exact_fit);
  EXPECT_NEAR(fit.beta(0), 5.0, 1e-6);
  EXPECT_NEAR(fit.beta(1), 2.0, 1e-6);
}

TEST(NonlinearMm, DescentAndNoWorseThanSStage) {
  const auto m = robhet::exponential_experiment_model();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fit = robhet::nonlinear_mm(noisy_sample(seed), m);
    ASSERT_FALSE(fit.trace.empty());
    for (std::size_t k = 1; k < fit.trace.size(); ++k) EXPECT_LE(fit.trace[k], fit.trace[k - 1]);
    EXPECT_LE(fit.objective, fit.s_objective);
    EXPECT_GT(fit.s_scale, 0.0);
  }
}

TEST(NonlinearMm, UnitLeverageWeightsAreBitIdentical) {
  const auto d = noisy_sample(11);
  const auto m = robhet::exponential_experiment_model();
  const std::vector<double> ones(d.size(), 1.0);
  expect_same(robhet::nonlinear_mm(d, m), robhet::nonlinear_mm(d, m, {}, ones));
}

TEST(NonlinearMm, SeededDeterminism) {
  const auto d = noisy_sample(12);
  const auto m = robhet::exponential_experiment_model();
  robhet::MmOptions opt;
  opt.seed = 77;
  expect_same(robhet::nonlinear_mm(d, m, opt), robhet::nonlinear_mm(d, m, opt));
}

TEST(NonlinearMm, ResponseScaleEquivarianceOnLinearModel) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 10);
  std::normal_distribution<double> e(0, 1);
  std::vector<double> x(80), y(80), ya(80);
  const double a = 3.0;
  for (std::size_t i = 0; i < 80; ++i) {
    x[i] = u(rng);
    y[i] = 2.0 - 0.5 * x[i] + e(rng) + (i < 8 ? 30.0 : 0.0);
    ya[i] = a * y[i];
  }
  const auto m = robhet::linear_model();
  const auto base = robhet::nonlinear_mm(robhet::Dataset::from_columns(x, y), m);
  const auto scaled = robhet::nonlinear_mm(robhet::Dataset::from_columns(x, ya), m);
  EXPECT_NEAR((scaled.beta - a * base.beta).norm(), 0.0, 1e-6 * a * base.beta.norm());
  EXPECT_NEAR(scaled.s_scale, a * base.s_scale, 1e-8 * a * base.s_scale);
  // The outliers do not drag the robust fit.
  EXPECT_NEAR(base.beta(1), -0.5, 0.2);
}

TEST(NonlinearMm, ScaleOverrideStartsFromGivenBeta) {
  const auto d = noisy_sample(14);
  const auto m = robhet::exponential_experiment_model();
  robhet::ScaleOverride so;
  so.sigma = 1.0;
  Vector lambda(1);
  lambda << 1.0;
  Vector start(2);
  start << 4.5, 2.1;
  so.divisors = robhet::variance_divisors(d, m, lambda, start);
  so.beta_start = start;
  const auto fit = robhet::nonlinear_mm(d, m, {}, {}, so);
  EXPECT_EQ(fit.beta_s, start);
  EXPECT_EQ(fit.s_scale, 1.0);
  const std::span<const double> div(so.divisors.data(), d.size());
  const double at_start = robhet::mm_objective(d, m, start, robhet::RhoSpec(robhet::kEfficiencyTuning), 1.0, div);
  EXPECT_LE(fit.objective, at_start);
  EXPECT_DOUBLE_EQ(fit.objective,
                   robhet::mm_objective(d, m, fit.beta, robhet::RhoSpec(robhet::kEfficiencyTuning), 1.0, div));

  so.divisors(3) = -1.0;
  EXPECT_THROW(robhet::nonlinear_mm(d, m, {}, {}, so), robhet::PreconditionError);
  so.divisors(3) = 1.0;
  so.sigma = 0.0;
  EXPECT_THROW(robhet::nonlinear_mm(d, m, {}, {}, so), robhet::PreconditionError);
}

TEST(NonlinearMm, Preconditions) {
  const auto m = robhet::exponential_experiment_model();
  const auto d = robhet::Dataset::from_columns({0.1, 0.2}, {1.0, 2.0});
  EXPECT_THROW(robhet::nonlinear_mm(d, m), robhet::PreconditionError);
  const auto e = noisy_sample(15);
  EXPECT_THROW(robhet::nonlinear_mm(e, m, {}, std::vector<double>(3, 1.0)), robhet::PreconditionError);
  std::vector<double> neg(e.size(), 1.0);
  neg[0] = -0.5;
  EXPECT_THROW(robhet::nonlinear_mm(e, m, {}, neg), robhet::PreconditionError);
}
