#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "robhet/fit_result.hpp"
#include "robhet/model.hpp"
#include "robhet/simulation.hpp"

namespace robhet {

/// Shortest text that reads back to the same double ("%.17g").
std::string format_double(double v);

/// CSV dataset: a header row, covariate columns first and a final `y`
/// column. Throws ParseError with the offending line number.
Dataset parse_dataset_csv(std::string_view text);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// Header `x,y` (or `x1,...,xk,y`), 17 significant digits per value.
std::string dataset_csv(const Dataset& data);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// JSON document with the estimates, flags and per-stage diagnostics.
/// Undefined scalars are written as null.
std::string fit_result_json(const FitResult& fit);

/// JSON experiment configuration. Keys: n, nrep, seed, schemes (builtin
/// names or {name, fraction, x0, y0, jitter_sd} objects), estimators,
/// truth {beta, lambda, sigma}, threads, output, mm {...}. Unknown keys,
/// unknown estimator tags and unknown scheme names are rejected.
ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Creates `dir` if needed and proves it is writable by creating and
/// removing a probe file. Throws Error otherwise.
void ensure_writable_directory(const std::filesystem::path& dir);

/// Tidy per-replication table: scheme, estimator, replication, beta1,
/// beta2, lambda, lambda_refined, sigma, converged, included.
std::string estimates_csv(const SimulationReport& report);
/// scheme, estimator, parameter, mse, bias, included, excluded.
std::string summary_csv(const SimulationReport& report);
std::string curve_bands_csv(const CurveBands& bands);
std::string metadata_json(const SimulationReport& report);

/// estimates.csv, summary.csv, curves_<estimator>_<scheme>.csv and
/// metadata.json under `dir`.
void write_report(const SimulationReport& report, const std::filesystem::path& dir);

}  // namespace robhet
