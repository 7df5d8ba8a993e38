#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "robhet/fit_result.hpp"
#include "robhet/model.hpp"
#include "robhet/pipelines.hpp"

namespace robhet {

/// Parameters of y = b1 exp(b2 x) + sigma exp(lambda (x + 1)^2) eps.
struct Truth {
  Vector beta;
  Vector lambda;
  double sigma = 1.0;
};

/// beta = (5, 2), lambda = 1, sigma = 1.
Truth reference_truth();

/// n draws with x ~ U(0, 1) and eps ~ N(0, 1) from the exponential
/// experiment model. Deterministic in `seed`.
Dataset generate_sample(std::size_t n, const Truth& truth, std::uint64_t seed);

/// Replaces the trailing ceil(fraction * n) observations by (x0 + u, y0)
/// with u ~ N(0, jitter_sd^2).
struct ContaminationScheme {
  std::string name;
  double fraction = 0.0;
  double x0 = 0.0;
  double y0 = 0.0;
  double jitter_sd = 1e-4;
};

/// C0 (clean), C1-C3 (x0 = 0.01, y0 = 25, 50, 100) and D1-D2 (x0 = 3.5,
/// y0 = 90, 150), all with fraction 0.05.
std::vector<ContaminationScheme> builtin_schemes();
std::optional<ContaminationScheme> builtin_scheme(std::string_view name);

Dataset apply_contamination(const Dataset& sample, const ContaminationScheme& scheme,
                            std::uint64_t seed);

struct ExperimentConfig {
  std::size_t n = 100;
  int nrep = 200;
  std::uint64_t master_seed = 20240601;
  std::vector<ContaminationScheme> schemes;
  std::vector<MethodTag> estimators;
  Truth truth = reference_truth();
  PipelineOptions options;
  /// 0 picks std::thread::hardware_concurrency().
  int threads = 1;
  /// Report directory; the CLI flag overrides it.
  std::string output_dir;
  /// Points where variance curves are recorded.
  std::vector<double> grid;

  /// Throws PreconditionError naming the offending field.
  void validate() const;
};

/// Equispaced points 0, 0.01, ..., 1.
std::vector<double> default_curve_grid();

/// Seed of an independent stream for replication `rep`. Stream 0 draws the
/// clean sample, stream 1 the contamination jitter, stream 2 the MM
/// subsets, stream 3 the least-squares multistart. Clean samples are
/// shared across schemes.
std::uint64_t replication_seed(std::uint64_t master, int rep, int stream);

struct ReplicationRecord {
  std::string scheme;
  MethodTag estimator = MethodTag::LS;
  int replication = 0;
  FitResult fit;
  bool included = false;
};

struct CellSummary {
  std::string scheme;
  MethodTag estimator = MethodTag::LS;
  /// Per beta component, over included replications.
  std::vector<double> mse;
  std::vector<double> bias;
  int included = 0;
  int excluded = 0;
};

struct CurveEnsemble {
  std::string scheme;
  MethodTag estimator = MethodTag::LS;
  /// sigma_hat * exp(lambda_hat' h(x)) on the grid, one row per included
  /// replication.
  std::vector<std::vector<double>> curves;
};

struct SimulationReport {
  ExperimentConfig config;
  std::vector<ReplicationRecord> records;
  std::vector<CellSummary> cells;
  std::vector<CurveEnsemble> curves;
  double wall_seconds = 0.0;

  const CellSummary* cell(std::string_view scheme, MethodTag estimator) const;
  const CurveEnsemble* ensemble(std::string_view scheme, MethodTag estimator) const;
  /// Records of one cell in replication order.
  std::vector<const ReplicationRecord*> cell_records(std::string_view scheme,
                                                     MethodTag estimator) const;
};

/// A fit counts towards the summaries when every stage ran and the
/// estimates are finite.
bool usable(const FitResult& fit);

/// Runs every (replication, scheme, estimator). Replications are spread
/// over threads; aggregation runs in replication order so the report does
/// not depend on the thread count.
SimulationReport run_experiment(const ExperimentConfig& config);

struct CurveBands {
  std::vector<double> grid;
  std::vector<double> q025, q25, median, q75, q975;
  std::vector<double> truth;
};

/// Pointwise quantile bands of a cell's curve ensemble with the true curve.
CurveBands summarize_curves(const SimulationReport& report, MethodTag estimator,
                            std::string_view scheme);

}  // namespace robhet
