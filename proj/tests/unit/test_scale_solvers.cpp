#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "robhet/errors.hpp"
#include "robhet/scale_solvers.hpp"
#include "robhet/simulation.hpp"

namespace {

using robhet::MScaleSpec;
using robhet::Vector;

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

std::vector<double> normal_sample(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, sd);
  std::vector<double> out(n);
  for (auto& v : out) v = z(rng);
  return out;
}

}  // namespace

TEST(MScale, TwoPointClosedForm) {
  std::vector<double> r;
  for (int k = 0; k < 10; ++k) {
    r.push_back(1.0);
    r.push_back(-1.0);
  }
  EXPECT_NEAR(robhet::m_scale(r), oracle::two_point_scale(robhet::kScaleTuning), 1e-11);
}

TEST(MScale, FisherConsistentUnderNormality) {
  const auto r = normal_sample(100000, 42);
  const double s = robhet::m_scale(r);
  EXPECT_GE(s, 0.99);
  EXPECT_LE(s, 1.01);
}

TEST(MScale, SolvesTheScaleEquation) {
  const auto r = normal_sample(500, 7, 3.0);
  const MScaleSpec spec;
  const double s = robhet::m_scale(r, spec);
  EXPECT_LE(std::abs(robhet::mean_chi(r, s, spec)), 1e-10);
}

TEST(MScale, Equivariance) {
  const auto r = normal_sample(300, 9);
  const double s = robhet::m_scale(r);
  for (double a : {0.1, 1.0, 7.0, 100.0, -3.0}) {
    std::vector<double> t(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) t[i] = a * r[i];
    EXPECT_NEAR(robhet::m_scale(t), std::abs(a) * s, 1e-10 * std::abs(a) * s);
  }
}

TEST(MScale, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng() % 200;
    std::vector<double> r(n);
    std::student_t_distribution<double> t(1.0 + trial % 5);
    const double scale = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    for (auto& v : r) v = scale * t(rng);
    const double got = robhet::m_scale(r);
    const double want = oracle::m_scale(r, robhet::kScaleTuning, 0.5);
    EXPECT_NEAR(got, want, 1e-8 * want) << "trial " << trial;
  }
}

TEST(MScale, DegenerateResiduals) {
  EXPECT_THROW(robhet::m_scale(std::vector<double>(10, 0.0)), robhet::DegenerateScaleError);
  std::vector<double> half(10, 0.0);
  for (int i = 0; i < 5; ++i) half[static_cast<std::size_t>(i)] = 1.0 + i;
  EXPECT_THROW(robhet::m_scale(half), robhet::DegenerateScaleError);
  half[5] = 2.0;  // 4 of 10 zero: fine
  EXPECT_GT(robhet::m_scale(half), 0.0);
}

TEST(MScale, WeightsActAsReplication) {
  const std::vector<double> r{0.3, -1.2, 2.5, 0.7, -0.1};
  const std::vector<double> w{1, 2, 1, 3, 1};
  std::vector<double> expanded;
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (int k = 0; k < static_cast<int>(w[i]); ++k) expanded.push_back(r[i]);
  }
  EXPECT_NEAR(robhet::m_scale(r, {}, w), robhet::m_scale(expanded), 1e-11);
  const std::vector<double> ones(r.size(), 1.0);
  EXPECT_EQ(robhet::m_scale(r, {}, ones), robhet::m_scale(r));
}

namespace {

struct SigmaLambdaCase {
  robhet::Dataset data;
  robhet::ModelSpec model = robhet::exponential_experiment_model();
  robhet::Truth truth = robhet::reference_truth();
};

SigmaLambdaCase make_case(std::uint64_t seed, double lambda = 1.0) {
  SigmaLambdaCase c;
  c.truth.lambda(0) = lambda;
  c.data = robhet::generate_sample(100, c.truth, seed);
  return c;
}

}  // namespace

TEST(SigmaLambda, EquationsVanishAtSolution) {
  const auto c = make_case(11);
  const MScaleSpec spec;
  const auto est = robhet::solve_sigma_lambda(c.data, c.truth.beta, c.model, spec);
  ASSERT_TRUE(est.converged);
  const Vector r = robhet::residuals(c.data, c.model, c.truth.beta, est.lambda);
  const robhet::Matrix h = robhet::variance_covariates(c.data, c.model, c.truth.beta);
  double e1 = 0, e2 = 0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const double chi = spec.chi(r(i) / est.sigma);
    e1 += chi;
    e2 += chi * h(i, 0);
  }
  EXPECT_LE(std::abs(e1 / 100.0), 1e-8);
  EXPECT_LE(std::abs(e2 / 100.0), 1e-8);
  EXPECT_LE(est.final_residual_norm, 1e-8);
}

TEST(SigmaLambda, InnerScaleIsTheMScale) {
  const auto c = make_case(12);
  const auto est = robhet::solve_sigma_lambda(c.data, c.truth.beta, c.model, {});
  const Vector r = robhet::residuals(c.data, c.model, c.truth.beta, est.lambda);
  EXPECT_DOUBLE_EQ(est.sigma, robhet::m_scale(as_span(r)));
}

TEST(SigmaLambda, ResponseScaleEquivariance) {
  auto c = make_case(13);
  const auto base = robhet::solve_sigma_lambda(c.data, c.truth.beta, c.model, {});
  const double a = 4.0;
  c.data.y *= a;
  Vector beta = c.truth.beta;
  beta(0) *= a;
  const auto scaled = robhet::solve_sigma_lambda(c.data, beta, c.model, {});
  EXPECT_NEAR(scaled.sigma, a * base.sigma, 1e-7 * a * base.sigma);
  EXPECT_NEAR(scaled.lambda(0), base.lambda(0), 1e-7);
}

TEST(SigmaLambda, RecoversVarianceParameterOverReplications) {
  for (double lambda0 : {1.0, 0.0}) {
    std::vector<double> lambdas, sigmas;
    for (int rep = 0; rep < 200; ++rep) {
      const auto c = make_case(1000 + static_cast<std::uint64_t>(rep), lambda0);
      const auto est = robhet::solve_sigma_lambda(c.data, c.truth.beta, c.model, {});
      lambdas.push_back(est.lambda(0));
      sigmas.push_back(est.sigma);
    }
    const double med = robhet::median(lambdas);
    if (lambda0 == 1.0) {
      EXPECT_GE(med, 0.85);
      EXPECT_LE(med, 1.15);
      EXPECT_NEAR(robhet::median(sigmas), 1.0, 0.25);
    } else {
      EXPECT_NEAR(med, 0.0, 0.1);
    }
  }
}

TEST(SigmaLambda, PreviousEstimateIsAnExtraStart) {
  const auto c = make_case(14);
  robhet::SigmaLambdaOptions opt;
  const auto a = robhet::solve_sigma_lambda(c.data, c.truth.beta, c.model, {}, {}, opt);
  opt.previous = a.lambda;
  const auto b = robhet::solve_sigma_lambda(c.data, c.truth.beta, c.model, {}, {}, opt);
  EXPECT_NEAR(a.lambda(0), b.lambda(0), 1e-8);
  EXPECT_NEAR(a.sigma, b.sigma, 1e-8);
}

TEST(SigmaLambda, DegenerateResidualsPropagate) {
  auto c = make_case(15);
  c.truth.sigma = 0.0;
  c.data = robhet::generate_sample(50, c.truth, 15);
  EXPECT_THROW(robhet::solve_sigma_lambda(c.data, c.truth.beta, c.model, {}), robhet::DegenerateScaleError);
}
