#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "robhet/errors.hpp"
#include "robhet/pipelines.hpp"
#include "robhet/simulation.hpp"

using robhet::FitResult;
using robhet::MethodTag;
using robhet::Vector;
using robhet::Weighting;

namespace {

const robhet::ModelSpec kModel = robhet::exponential_experiment_model();

robhet::Dataset sample(std::uint64_t seed, const char* scheme = "C0") {
  const auto clean = robhet::generate_sample(100, robhet::reference_truth(), seed);
  return robhet::apply_contamination(clean, *robhet::builtin_scheme(scheme), seed + 1);
}

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

TEST(MethodTags, RoundTrip) {
  for (MethodTag t : robhet::kAllMethods) EXPECT_EQ(robhet::parse_method(robhet::to_string(t)), t);
  EXPECT_FALSE(robhet::parse_method("hmm").has_value());
  EXPECT_EQ(std::size(robhet::kAllMethods), 8u);
}

TEST(LeverageWeights, BisquareOfStandardisedDistance) {
  const auto d = sample(1, "D1");
  const auto w = robhet::bisquare_leverage_weights(d);
  ASSERT_EQ(w.size(), d.size());
  for (std::size_t i = 95; i < 100; ++i) EXPECT_EQ(w[i], 0.0) << "leverage point " << i;
  std::vector<double> x(d.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = d.x(static_cast<Eigen::Index>(i), 0);
  const auto ls = robhet::median_mad(x, robhet::kLeverageMadConsistency);
  const robhet::RhoSpec bisquare(3.841458820694124);
  for (std::size_t i = 0; i < 95; ++i) {
    const double t = (x[i] - ls.location) * (x[i] - ls.location) / (ls.scale * ls.scale);
    EXPECT_NEAR(w[i], bisquare.weight(t), 1e-12);
    EXPECT_GT(w[i], 0.0);
  }
  // At the median the weight is one.
  const auto med = robhet::Dataset::from_columns({0.0, 0.5, 1.0}, {1, 1, 1});
  EXPECT_EQ(robhet::bisquare_leverage_weights(med)[1], 1.0);
}

TEST(Pipelines, LabelAlgebra) {
  const auto d = sample(2);
  const robhet::PipelineOptions opt;
  EXPECT_EQ(robhet::fit_homoscedastic(d, kModel, opt, Weighting::unweighted).method, MethodTag::MM);
  EXPECT_EQ(robhet::fit_homoscedastic(d, kModel, opt, Weighting::bisquare_leverage).method, MethodTag::WMM);
  EXPECT_EQ(robhet::fit_stepwise(d, kModel, opt, Weighting::unweighted).method, MethodTag::HMM);
  EXPECT_EQ(robhet::fit_stepwise(d, kModel, opt, Weighting::bisquare_leverage).method, MethodTag::HWMM);
  EXPECT_EQ(robhet::fit_stepwise_n(d, kModel, opt, Weighting::unweighted).method, MethodTag::HMM_N);
  EXPECT_EQ(robhet::fit_stepwise_n(d, kModel, opt, Weighting::bisquare_leverage).method, MethodTag::HWMM_N);
  EXPECT_EQ(robhet::fit_classical(d, kModel, robhet::ClassicalVariant::LS).method, MethodTag::LS);
  EXPECT_EQ(robhet::fit_classical(d, kModel, robhet::ClassicalVariant::HLS).method, MethodTag::HLS);
}

TEST(Pipelines, StepwiseStagesAreComplete) {
  const auto d = sample(3);
  const auto hmm = robhet::fit_stepwise(d, kModel, {}, Weighting::unweighted);
  ASSERT_TRUE(hmm.complete());
  EXPECT_EQ(hmm.diagnostics.size(), 4u);
  EXPECT_EQ(hmm.beta.size(), 2);
  EXPECT_EQ(hmm.beta_ini.size(), 2);
  EXPECT_GT(hmm.sigma, 0.0);
  ASSERT_TRUE(hmm.lambda_refined.has_value());
  EXPECT_FALSE(hmm.sigma_refined.has_value());

  const auto n = robhet::fit_stepwise_n(d, kModel, {}, Weighting::unweighted);
  ASSERT_TRUE(n.complete());
  ASSERT_TRUE(n.lambda_refined.has_value());
  ASSERT_TRUE(n.sigma_refined.has_value());
  EXPECT_EQ(n.curve_sigma(), *n.sigma_refined);
  EXPECT_EQ(n.curve_lambda(), *n.lambda_refined);
  EXPECT_EQ(hmm.beta_ini, n.beta_ini);
}

TEST(Pipelines, StageProvenance) {
  // A skewed sample: vertical outliers make the two lambda estimates differ.
  const auto d = sample(4, "C2");
  const robhet::PipelineOptions opt;
  const auto hmm = robhet::fit_stepwise(d, kModel, opt, Weighting::unweighted);
  const auto n = robhet::fit_stepwise_n(d, kModel, opt, Weighting::unweighted);

  const auto step2 = robhet::solve_sigma_lambda(d, hmm.beta_ini, kModel, opt.mm.scale_spec(), {}, opt.step2);
  EXPECT_EQ(hmm.lambda, step2.lambda);
  EXPECT_EQ(hmm.sigma, step2.sigma);

  const Vector z = robhet::log_abs_residuals(robhet::raw_residuals(d, kModel, n.beta_ini));
  const auto lin = robhet::linear_mm(z, robhet::variance_covariates(d, kModel, n.beta_ini), opt.mm);
  EXPECT_EQ(n.lambda, lin.lambda);
  const Vector r = robhet::residuals(d, kModel, n.beta_ini, n.lambda);
  EXPECT_EQ(n.sigma, robhet::m_scale(as_span(r), opt.mm.scale_spec()));

  EXPECT_GT(std::abs(hmm.lambda(0) - n.lambda(0)), 1e-6);

  const Vector z4 = robhet::log_abs_residuals(robhet::raw_residuals(d, kModel, hmm.beta));
  const auto lin4 = robhet::linear_mm(z4, robhet::variance_covariates(d, kModel, hmm.beta), opt.mm);
  EXPECT_EQ(*hmm.lambda_refined, lin4.lambda);
}

TEST(Pipelines, PseudoObservationIdentity) {
  const auto d = sample(5);
  const auto hmm = robhet::fit_stepwise(d, kModel, {}, Weighting::unweighted);
  ASSERT_TRUE(hmm.complete());
  const auto pseudo = robhet::pseudo_observations(d, kModel, hmm.lambda, hmm.beta_ini);
  const Vector div = robhet::variance_divisors(d, kModel, hmm.lambda, hmm.beta_ini);
  const robhet::RhoSpec rho1(robhet::kEfficiencyTuning);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u1(3, 7), u2(1, 3);
  for (int k = 0; k < 10; ++k) {
    Vector beta(2);
    beta << u1(rng), u2(rng);
    const double a = robhet::mm_objective(d, kModel, beta, rho1, hmm.sigma, as_span(div));
    const double b = robhet::mm_objective(pseudo.data, pseudo.model, beta, rho1, hmm.sigma);
    EXPECT_NEAR(a, b, 1e-12 * (1 + std::abs(a)));
  }
}

TEST(Pipelines, SharedStagesMatchStandaloneFits) {
  const auto d = sample(6, "C3");
  const robhet::PipelineOptions opt;
  const auto all = robhet::fit_methods(d, kModel, opt, robhet::kAllMethods);
  ASSERT_EQ(all.size(), 8u);
  for (std::size_t k = 0; k < all.size(); ++k) {
    const FitResult one = robhet::fit_method(robhet::kAllMethods[k], d, kModel, opt);
    EXPECT_EQ(all[k].method, robhet::kAllMethods[k]);
    EXPECT_EQ(all[k].beta, one.beta);
    EXPECT_EQ(all[k].lambda, one.lambda);
    EXPECT_EQ(all[k].sigma, one.sigma);
  }
  // MM and HMM share Step 1 and Step 2.
  EXPECT_EQ(all[1].beta, all[4].beta_ini);
  EXPECT_EQ(all[1].lambda, all[4].lambda);
}

TEST(Pipelines, DeterministicUnderSeed) {
  const auto d = sample(7, "D2");
  robhet::PipelineOptions opt;
  opt.mm.seed = 1234;
  const auto a = robhet::fit_methods(d, kModel, opt, robhet::kAllMethods);
  const auto b = robhet::fit_methods(d, kModel, opt, robhet::kAllMethods);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].beta, b[k].beta);
    EXPECT_EQ(a[k].sigma, b[k].sigma);
    EXPECT_EQ(a[k].lambda_refined.has_value(), b[k].lambda_refined.has_value());
    if (a[k].lambda_refined) EXPECT_EQ(*a[k].lambda_refined, *b[k].lambda_refined);
  }
}

TEST(Pipelines, ZeroNoiseShortCircuits) {
  auto truth = robhet::reference_truth();
  truth.sigma = 0.0;
  const auto d = robhet::generate_sample(60, truth, 8);
  for (MethodTag t : robhet::kAllMethods) {
    const auto fit = robhet::fit_method(t, d, kModel);
    ASSERT_TRUE(fit.complete()) << robhet::to_string(t);
    EXPECT_NEAR(fit.beta(0), 5.0, 1e-6) << robhet::to_string(t);
    EXPECT_NEAR(fit.beta(1), 2.0, 1e-6) << robhet::to_string(t);
  }
  const auto hmm = robhet::fit_stepwise(d, kModel, {}, Weighting::unweighted);
  EXPECT_TRUE(hmm.exact_fit);
  EXPECT_EQ(hmm.beta, hmm.beta_ini);
  ASSERT_TRUE(hmm.lambda_refined.has_value());
  EXPECT_EQ((*hmm.lambda_refined)(0), 0.0);
}

TEST(Pipelines, Preconditions) {
  const auto one = robhet::Dataset::from_columns({0.3}, {4.0});
  EXPECT_THROW(robhet::fit_stepwise(one, kModel, {}, Weighting::unweighted), robhet::PreconditionError);
  EXPECT_THROW(robhet::fit_method(MethodTag::HMM, one, kModel), robhet::PreconditionError);
  const auto four = robhet::Dataset::from_columns({0.1, 0.2, 0.3, 0.4}, {5, 6, 7, 9});
  EXPECT_THROW(robhet::fit_stepwise_n(four, kModel, {}, Weighting::unweighted), robhet::PreconditionError);
  EXPECT_THROW(robhet::fit_classical(one, kModel, robhet::ClassicalVariant::LS), robhet::PreconditionError);
}

TEST(Pipelines, StageFailureGivesPartialResult) {
  robhet::ModelSpec broken = kModel;
  broken.h = [](robhet::Covariate, const Vector&) -> Vector {
    throw robhet::NumericalError("variance covariates unavailable");
  };
  const auto d = sample(9);
  const auto hmm = robhet::fit_stepwise(d, broken, {}, Weighting::unweighted);
  EXPECT_FALSE(hmm.complete());
  EXPECT_EQ(hmm.beta.size(), 0);
  ASSERT_EQ(hmm.diagnostics.size(), 2u);
  EXPECT_TRUE(hmm.diagnostics[0].ok);
  EXPECT_FALSE(hmm.diagnostics[1].ok);
  EXPECT_EQ(hmm.diagnostics[1].stage, "step2");
  EXPECT_EQ(hmm.beta_ini.size(), 2);

  const auto n = robhet::fit_stepwise_n(d, broken, {}, Weighting::unweighted);
  EXPECT_FALSE(n.complete());
  EXPECT_EQ(n.diagnostics.back().stage, "stepN2");
}

TEST(Pipelines, ClassicalLsRow) {
  const auto d = sample(10);
  const auto ls = robhet::fit_classical(d, kModel, robhet::ClassicalVariant::LS);
  ASSERT_TRUE(ls.complete());
  ASSERT_TRUE(ls.alpha.has_value());
  EXPECT_NEAR(ls.sigma, std::exp(*ls.alpha + robhet::kLogAbsNormalOffset), 1e-12);
  const auto hls = robhet::fit_classical(d, kModel, robhet::ClassicalVariant::HLS);
  EXPECT_EQ(hls.lambda, ls.lambda);
  EXPECT_EQ(hls.beta_ini, ls.beta);
}

TEST(Pipelines, HomoscedasticDataGivesFlatVarianceN) {
  auto truth = robhet::reference_truth();
  truth.lambda(0) = 0.0;
  std::vector<double> lambdas, ratios;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto d = robhet::generate_sample(100, truth, 900 + seed);
    const auto n = robhet::fit_stepwise_n(d, kModel, {}, Weighting::unweighted);
    ASSERT_TRUE(n.complete());
    lambdas.push_back((*n.lambda_refined)(0));
    const Vector r = robhet::raw_residuals(d, kModel, n.beta);
    ratios.push_back(*n.sigma_refined / robhet::m_scale(as_span(r)));
  }
  EXPECT_NEAR(robhet::median(lambdas), 0.0, 0.1);
  EXPECT_NEAR(robhet::median(ratios), 1.0, 0.05);
}
