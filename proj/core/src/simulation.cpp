#include "robhet/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "robhet/errors.hpp"
#include "robhet/robust_kernels.hpp"

namespace robhet {

Truth reference_truth() {
  Truth t;
  t.beta = Vector(2);
  t.beta << 5.0, 2.0;
  t.lambda = Vector::Constant(1, 1.0);
  t.sigma = 1.0;
  return t;
}

Dataset generate_sample(std::size_t n, const Truth& truth, std::uint64_t seed) {
  if (n == 0) throw PreconditionError("sample size must be positive");
  const ModelSpec model = exponential_experiment_model();
  if (truth.beta.size() != model.p || truth.lambda.size() != model.q) {
    throw PreconditionError("truth must have 2 beta and 1 lambda components");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), 1);
  d.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    d.x(i, 0) = unif(rng);
    const double eps = normal(rng);
    const auto xi = d.x.row(i);
    d.y(i) = model.g(xi, truth.beta) + truth.sigma * upsilon(model, xi, truth.lambda, truth.beta) * eps;
  }
  return d;
}

std::vector<ContaminationScheme> builtin_schemes() {
  return {
      {"C0", 0.0, 0.0, 0.0, 1e-4},   {"C1", 0.05, 0.01, 25.0, 1e-4}, {"C2", 0.05, 0.01, 50.0, 1e-4},
      {"C3", 0.05, 0.01, 100.0, 1e-4}, {"D1", 0.05, 3.5, 90.0, 1e-4},  {"D2", 0.05, 3.5, 150.0, 1e-4},
  };
}

std::optional<ContaminationScheme> builtin_scheme(std::string_view name) {
  for (auto& s : builtin_schemes()) {
    if (s.name == name) return s;
  }
  return std::nullopt;
}

Dataset apply_contamination(const Dataset& sample, const ContaminationScheme& scheme,
                            std::uint64_t seed) {
  if (!(scheme.fraction >= 0.0 && scheme.fraction < 1.0)) {
    throw PreconditionError("contamination fraction must lie in [0, 1)");
  }
  Dataset out = sample;
  const std::size_t n = sample.size();
  const auto m = static_cast<std::size_t>(std::ceil(scheme.fraction * static_cast<double>(n)));
  if (m == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, scheme.jitter_sd);
  for (std::size_t i = n - m; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < out.x.cols(); ++j) out.x(row, j) = scheme.x0 + jitter(rng);
    out.y(row) = scheme.y0;
  }
  return out;
}

std::vector<double> default_curve_grid() {
  std::vector<double> g(101);
  for (int i = 0; i <= 100; ++i) g[static_cast<std::size_t>(i)] = i / 100.0;
  return g;
}

void ExperimentConfig::validate() const {
  if (nrep < 1) throw PreconditionError("nrep must be at least 1");
  const ModelSpec model = exponential_experiment_model();
  if (n < static_cast<std::size_t>(model.p + model.q + 2)) {
    throw PreconditionError("n must be at least " + std::to_string(model.p + model.q + 2));
  }
  if (schemes.empty()) throw PreconditionError("schemes must not be empty");
  if (estimators.empty()) throw PreconditionError("estimators must not be empty");
  for (const auto& s : schemes) {
    if (!(s.fraction >= 0.0 && s.fraction < 1.0)) {
      throw PreconditionError("scheme " + s.name + ": fraction must lie in [0, 1)");
    }
    if (!(s.jitter_sd > 0.0)) throw PreconditionError("scheme " + s.name + ": jitter_sd must be positive");
  }
  for (std::size_t i = 0; i < schemes.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (schemes[i].name == schemes[j].name) throw PreconditionError("duplicate scheme " + schemes[i].name);
    }
  }
  if (truth.beta.size() != model.p || truth.lambda.size() != model.q || !(truth.sigma >= 0.0)) {
    throw PreconditionError("truth must have 2 beta, 1 lambda and sigma >= 0");
  }
  if (threads < 0) throw PreconditionError("threads must be >= 0");
}

std::uint64_t replication_seed(std::uint64_t master, int rep, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(stream)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

bool usable(const FitResult& fit) {
  if (!fit.complete()) return false;
  if (!fit.beta.allFinite() || !std::isfinite(fit.curve_sigma())) return false;
  return fit.curve_lambda().allFinite();
}

const CellSummary* SimulationReport::cell(std::string_view scheme, MethodTag estimator) const {
  for (const auto& c : cells) {
    if (c.scheme == scheme && c.estimator == estimator) return &c;
  }
  return nullptr;
}

const CurveEnsemble* SimulationReport::ensemble(std::string_view scheme, MethodTag estimator) const {
  for (const auto& c : curves) {
    if (c.scheme == scheme && c.estimator == estimator) return &c;
  }
  return nullptr;
}

std::vector<const ReplicationRecord*> SimulationReport::cell_records(std::string_view scheme,
                                                                     MethodTag estimator) const {
  std::vector<const ReplicationRecord*> out;
  for (const auto& r : records) {
    if (r.scheme == scheme && r.estimator == estimator) out.push_back(&r);
  }
  return out;
}

namespace {

// Fits of one replication, indexed [scheme][estimator].
using ReplicationFits = std::vector<std::vector<FitResult>>;

ReplicationFits run_replication(const ExperimentConfig& config, const ModelSpec& model, int rep) {
  const Dataset clean = generate_sample(config.n, config.truth, replication_seed(config.master_seed, rep, 0));
  const std::uint64_t jitter_seed = replication_seed(config.master_seed, rep, 1);
  PipelineOptions options = config.options;
  options.mm.seed = replication_seed(config.master_seed, rep, 2);
  options.hls.search.seed = replication_seed(config.master_seed, rep, 3);

  ReplicationFits fits;
  fits.reserve(config.schemes.size());
  for (const auto& scheme : config.schemes) {
    const Dataset data = apply_contamination(clean, scheme, jitter_seed);
    try {
      fits.push_back(fit_methods(data, model, options, config.estimators));
    } catch (const std::exception& e) {
      std::vector<FitResult> failed(config.estimators.size());
      for (std::size_t k = 0; k < failed.size(); ++k) {
        failed[k].method = config.estimators[k];
        failed[k].diagnostics.push_back({"fit", false, false, 0, e.what()});
      }
      fits.push_back(std::move(failed));
    }
  }
  return fits;
}

std::vector<double> curve_on_grid(const FitResult& fit, const ModelSpec& model,
                                  const std::vector<double>& grid) {
  std::vector<double> out(grid.size());
  Eigen::RowVectorXd x(1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    x(0) = grid[i];
    const Vector h = model.h(x, fit.beta);
    out[i] = fit.curve_sigma() * std::exp(fit.curve_lambda().dot(h));
  }
  return out;
}

}  // namespace

SimulationReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ModelSpec model = exponential_experiment_model();
  const std::size_t nrep = static_cast<std::size_t>(config.nrep);

  std::vector<ReplicationFits> all(nrep);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t rep; (rep = next.fetch_add(1)) < nrep;) {
      try {
        all[rep] = run_replication(config, model, static_cast<int>(rep));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(nrep));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  SimulationReport report;
  report.config = config;
  if (report.config.grid.empty()) report.config.grid = default_curve_grid();
  const auto& grid = report.config.grid;
  const Eigen::Index p = config.truth.beta.size();

  for (std::size_t s = 0; s < config.schemes.size(); ++s) {
    for (std::size_t e = 0; e < config.estimators.size(); ++e) {
      CellSummary cell;
      cell.scheme = config.schemes[s].name;
      cell.estimator = config.estimators[e];
      CurveEnsemble ens{cell.scheme, cell.estimator, {}};
      std::vector<std::vector<double>> dev(static_cast<std::size_t>(p));
      for (std::size_t rep = 0; rep < nrep; ++rep) {
        ReplicationRecord rec{cell.scheme, cell.estimator, static_cast<int>(rep), std::move(all[rep][s][e]), false};
        rec.included = usable(rec.fit);
        if (rec.included) {
          ++cell.included;
          for (Eigen::Index j = 0; j < p; ++j) {
            dev[static_cast<std::size_t>(j)].push_back(rec.fit.beta(j) - config.truth.beta(j));
          }
          ens.curves.push_back(curve_on_grid(rec.fit, model, grid));
        } else {
          ++cell.excluded;
        }
        report.records.push_back(std::move(rec));
      }
      // MSE = variance + bias^2 keeps MSE >= bias^2 exact in floating point.
      for (const auto& d : dev) {
        double bias = std::numeric_limits<double>::quiet_NaN();
        double mse = bias;
        if (!d.empty()) {
          double sum = 0.0;
          for (double v : d) sum += v;
          bias = sum / static_cast<double>(d.size());
          double var = 0.0;
          for (double v : d) var += (v - bias) * (v - bias);
          var /= static_cast<double>(d.size());
          mse = var + bias * bias;
        }
        cell.bias.push_back(bias);
        cell.mse.push_back(mse);
      }
      report.cells.push_back(std::move(cell));
      report.curves.push_back(std::move(ens));
    }
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

CurveBands summarize_curves(const SimulationReport& report, MethodTag estimator,
                            std::string_view scheme) {
  const CurveEnsemble* ens = report.ensemble(scheme, estimator);
  if (ens == nullptr) {
    throw PreconditionError("no curve ensemble for " + std::string(to_string(estimator)) + " / " +
                            std::string(scheme));
  }
  if (ens->curves.empty()) throw PreconditionError("curve ensemble is empty");
  const ModelSpec model = exponential_experiment_model();
  const Truth& truth = report.config.truth;
  CurveBands bands;
  bands.grid = report.config.grid;
  std::vector<double> column(ens->curves.size());
  Eigen::RowVectorXd x(1);
  for (std::size_t i = 0; i < bands.grid.size(); ++i) {
    for (std::size_t r = 0; r < ens->curves.size(); ++r) column[r] = ens->curves[r][i];
    bands.q025.push_back(quantile(column, 0.025));
    bands.q25.push_back(quantile(column, 0.25));
    bands.median.push_back(quantile(column, 0.5));
    bands.q75.push_back(quantile(column, 0.75));
    bands.q975.push_back(quantile(column, 0.975));
    x(0) = bands.grid[i];
    bands.truth.push_back(truth.sigma * upsilon(model, x, truth.lambda, truth.beta));
  }
  return bands;
}

}  // namespace robhet
