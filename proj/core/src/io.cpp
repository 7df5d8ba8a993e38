#include "robhet/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "json.hpp"
#include "robhet/errors.hpp"

namespace robhet {

using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ----------------------------------------------------------------- CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(std::string_view field, std::size_t line, std::size_t column) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError("column " + std::to_string(column) + ": '" + std::string(field) +
                         "' is not a number",
                     line);
  }
  if (!std::isfinite(v)) {
    throw ParseError("column " + std::to_string(column) + ": non-finite value", line);
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Dataset parse_dataset_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::size_t columns = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!header_seen) {
      header_seen = true;
      columns = fields.size();
      if (columns < 2) throw ParseError("header needs covariate columns and a final y column", line_no);
      if (fields.back() != "y") throw ParseError("last header column must be 'y'", line_no);
      for (std::size_t j = 0; j < columns; ++j) {
        if (fields[j].empty()) throw ParseError("empty header name in column " + std::to_string(j + 1), line_no);
      }
      continue;
    }
    if (fields.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    std::vector<double> row(columns);
    for (std::size_t j = 0; j < columns; ++j) row[j] = parse_number(fields[j], line_no, j + 1);
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw ParseError("empty dataset: header row missing", 1);
  if (rows.empty()) throw ParseError("dataset has no observations", line_no);

  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto k = static_cast<Eigen::Index>(columns - 1);
  d.x.resize(n, k);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) d.x(i, j) = r[static_cast<std::size_t>(j)];
    d.y(i) = r.back();
  }
  return d;
}

Dataset read_dataset_csv(const std::filesystem::path& path) { return parse_dataset_csv(read_file(path)); }

std::string dataset_csv(const Dataset& data) {
  std::string out;
  const Eigen::Index k = data.covariates();
  if (k == 1) {
    out = "x,y\n";
  } else {
    for (Eigen::Index j = 0; j < k; ++j) out += "x" + std::to_string(j + 1) + ",";
    out += "y\n";
  }
  for (Eigen::Index i = 0; i < data.y.size(); ++i) {
    for (Eigen::Index j = 0; j < k; ++j) out += format_double(data.x(i, j)) + ",";
    out += format_double(data.y(i)) + "\n";
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed: " + path.string());
}

// ---------------------------------------------------------------- JSON

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

}  // namespace

std::string fit_result_json(const FitResult& fit) {
  json j;
  j["method"] = std::string(to_string(fit.method));
  j["complete"] = fit.complete();
  j["converged"] = fit.converged();
  j["beta_ini"] = vector_json(fit.beta_ini);
  j["beta"] = vector_json(fit.beta);
  j["sigma"] = number(fit.sigma);
  j["lambda"] = vector_json(fit.lambda);
  j["lambda_refined"] = fit.lambda_refined ? vector_json(*fit.lambda_refined) : json(nullptr);
  j["sigma_refined"] = fit.sigma_refined ? number(*fit.sigma_refined) : json(nullptr);
  j["alpha"] = fit.alpha ? number(*fit.alpha) : json(nullptr);
  j["exact_fit"] = fit.exact_fit;
  j["overflow"] = fit.overflow;
  json diag = json::array();
  for (const auto& d : fit.diagnostics) {
    diag.push_back({{"stage", d.stage},
                    {"ok", d.ok},
                    {"converged", d.converged},
                    {"iterations", d.iterations},
                    {"message", d.message}});
  }
  j["diagnostics"] = std::move(diag);
  return j.dump(2) + "\n";
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ParseError("unknown key '" + key + "' in " + where);
  }
}

Vector vector_from(const json& a, const std::string& what) {
  if (!a.is_array()) throw ParseError(what + " must be an array");
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

ContaminationScheme scheme_from(const json& s) {
  if (s.is_string()) {
    const auto name = s.get<std::string>();
    auto found = builtin_scheme(name);
    if (!found) throw ParseError("unknown scheme '" + name + "'");
    return *found;
  }
  if (!s.is_object()) throw ParseError("scheme must be a name or an object");
  reject_unknown_keys(s, {"name", "fraction", "x0", "y0", "jitter_sd"}, "scheme");
  ContaminationScheme c;
  c.name = s.at("name").get<std::string>();
  c.fraction = s.value("fraction", 0.05);
  c.x0 = s.at("x0").get<double>();
  c.y0 = s.at("y0").get<double>();
  c.jitter_sd = s.value("jitter_sd", 1e-4);
  return c;
}

void mm_options_from(const json& m, MmOptions& o) {
  reject_unknown_keys(m,
                      {"n_subsets", "refine_candidates", "max_refine_steps", "max_irwls", "max_halvings",
                       "tol", "c0", "c1", "b"},
                      "mm");
  o.n_subsets = m.value("n_subsets", o.n_subsets);
  o.refine_candidates = m.value("refine_candidates", o.refine_candidates);
  o.max_refine_steps = m.value("max_refine_steps", o.max_refine_steps);
  o.max_irwls = m.value("max_irwls", o.max_irwls);
  o.max_halvings = m.value("max_halvings", o.max_halvings);
  o.tol = m.value("tol", o.tol);
  o.rho0 = RhoSpec(m.value("c0", o.rho0.c()));
  o.rho1 = RhoSpec(m.value("c1", o.rho1.c()));
  o.b = m.value("b", o.b);
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  reject_unknown_keys(j, {"n", "nrep", "seed", "schemes", "estimators", "truth", "threads", "output", "mm", "leverage_mad_consistency"},
                      "config");
  ExperimentConfig c;
  try {
    c.n = j.value("n", c.n);
    c.nrep = j.value("nrep", c.nrep);
    c.master_seed = j.value("seed", c.master_seed);
    c.threads = j.value("threads", c.threads);
    c.output_dir = j.value("output", std::string());
    if (j.contains("schemes")) {
      for (const auto& s : j.at("schemes")) c.schemes.push_back(scheme_from(s));
    } else {
      c.schemes = builtin_schemes();
    }
    if (j.contains("estimators")) {
      for (const auto& e : j.at("estimators")) {
        const auto tag = e.get<std::string>();
        const auto m = parse_method(tag);
        if (!m) throw ParseError("unknown estimator tag '" + tag + "'");
        c.estimators.push_back(*m);
      }
    } else {
      c.estimators.assign(std::begin(kAllMethods), std::end(kAllMethods));
    }
    if (j.contains("truth")) {
      const json& t = j.at("truth");
      reject_unknown_keys(t, {"beta", "lambda", "sigma"}, "truth");
      if (t.contains("beta")) c.truth.beta = vector_from(t.at("beta"), "truth.beta");
      if (t.contains("lambda")) c.truth.lambda = vector_from(t.at("lambda"), "truth.lambda");
      c.truth.sigma = t.value("sigma", c.truth.sigma);
    }
    if (j.contains("mm")) mm_options_from(j.at("mm"), c.options.mm);
    c.options.leverage_mad_consistency = j.value("leverage_mad_consistency", c.options.leverage_mad_consistency);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  } catch (const PreconditionError& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  c.grid = default_curve_grid();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_file(path));
}

void ensure_writable_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw Error("cannot create output directory " + dir.string());
  }
  const auto probe = dir / ".robhet-write-probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "probe")) throw Error("output directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

// -------------------------------------------------------------- report

std::string estimates_csv(const SimulationReport& report) {
  std::string out = "scheme,estimator,replication,beta1,beta2,lambda,lambda_refined,sigma,converged,included\n";
  auto cell = [](double v) { return std::isfinite(v) ? format_double(v) : std::string("NA"); };
  for (const auto& r : report.records) {
    const FitResult& f = r.fit;
    out += r.scheme + "," + std::string(to_string(r.estimator)) + "," + std::to_string(r.replication);
    for (Eigen::Index j = 0; j < 2; ++j) out += "," + cell(j < f.beta.size() ? f.beta(j) : NAN);
    out += "," + cell(f.lambda.size() > 0 ? f.lambda(0) : NAN);
    out += "," + cell(f.lambda_refined && f.lambda_refined->size() > 0 ? (*f.lambda_refined)(0) : NAN);
    out += "," + cell(f.sigma);
    out += std::string(",") + (f.converged() ? "1" : "0") + "," + (r.included ? "1" : "0") + "\n";
  }
  return out;
}

std::string summary_csv(const SimulationReport& report) {
  std::string out = "scheme,estimator,parameter,mse,bias,included,excluded\n";
  for (const auto& c : report.cells) {
    for (std::size_t j = 0; j < c.mse.size(); ++j) {
      out += c.scheme + "," + std::string(to_string(c.estimator)) + ",beta" + std::to_string(j + 1) + "," +
             (std::isfinite(c.mse[j]) ? format_double(c.mse[j]) : "NA") + "," +
             (std::isfinite(c.bias[j]) ? format_double(c.bias[j]) : "NA") + "," +
             std::to_string(c.included) + "," + std::to_string(c.excluded) + "\n";
    }
  }
  return out;
}

std::string curve_bands_csv(const CurveBands& b) {
  std::string out = "x,q025,q25,median,q75,q975,truth\n";
  for (std::size_t i = 0; i < b.grid.size(); ++i) {
    out += format_double(b.grid[i]) + "," + format_double(b.q025[i]) + "," + format_double(b.q25[i]) + "," +
           format_double(b.median[i]) + "," + format_double(b.q75[i]) + "," + format_double(b.q975[i]) + "," +
           format_double(b.truth[i]) + "\n";
  }
  return out;
}

std::string metadata_json(const SimulationReport& report) {
  const ExperimentConfig& c = report.config;
  json j;
  j["n"] = c.n;
  j["nrep"] = c.nrep;
  j["seed"] = c.master_seed;
  j["threads"] = c.threads;
  json schemes = json::array();
  for (const auto& s : c.schemes) {
    schemes.push_back({{"name", s.name}, {"fraction", s.fraction}, {"x0", s.x0}, {"y0", s.y0}, {"jitter_sd", s.jitter_sd}});
  }
  j["schemes"] = std::move(schemes);
  json est = json::array();
  for (MethodTag t : c.estimators) est.push_back(std::string(to_string(t)));
  j["estimators"] = std::move(est);
  j["truth"] = {{"beta", vector_json(c.truth.beta)}, {"lambda", vector_json(c.truth.lambda)}, {"sigma", c.truth.sigma}};
  const MmOptions& m = c.options.mm;
  j["mm"] = {{"n_subsets", m.n_subsets}, {"refine_candidates", m.refine_candidates},
             {"max_refine_steps", m.max_refine_steps}, {"max_irwls", m.max_irwls},
             {"max_halvings", m.max_halvings}, {"tol", m.tol}, {"c0", m.rho0.c()}, {"c1", m.rho1.c()}, {"b", m.b}};
  j["leverage_mad_consistency"] = c.options.leverage_mad_consistency;
  j["clean_samples_shared_across_schemes"] = true;
  json excl = json::array();
  for (const auto& cell : report.cells) {
    excl.push_back({{"scheme", cell.scheme}, {"estimator", std::string(to_string(cell.estimator))},
                    {"included", cell.included}, {"excluded", cell.excluded}});
  }
  j["exclusions"] = std::move(excl);
  j["wall_seconds"] = report.wall_seconds;
  return j.dump(2) + "\n";
}

void write_report(const SimulationReport& report, const std::filesystem::path& dir) {
  ensure_writable_directory(dir);
  write_text_file(dir / "estimates.csv", estimates_csv(report));
  write_text_file(dir / "summary.csv", summary_csv(report));
  for (const auto& e : report.curves) {
    if (e.curves.empty()) continue;
    const auto bands = summarize_curves(report, e.estimator, e.scheme);
    write_text_file(dir / ("curves_" + std::string(to_string(e.estimator)) + "_" + e.scheme + ".csv"),
                    curve_bands_csv(bands));
  }
  write_text_file(dir / "metadata.json", metadata_json(report));
}

}  // namespace robhet
