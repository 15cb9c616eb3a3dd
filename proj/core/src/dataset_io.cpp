#include "sctc/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "sctc/common.hpp"

namespace sctc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// unit_id ordering: numeric when both sides parse as integers, else
// lexicographic.
bool id_less(const std::string& a, const std::string& b) {
  auto as_long = [](const std::string& s, long& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
      out = std::stol(s, &pos);
    } catch (...) {
      return false;
    }
    return pos == s.size();
  };
  long la = 0, lb = 0;
  if (as_long(a, la) && as_long(b, lb)) {
    if (la != lb) return la < lb;
    return a < b;
  }
  return a < b;
}

// unit_id -> row index; duplicates raise with the two row numbers.
std::map<std::string, std::size_t, bool (*)(const std::string&, const std::string&)> index_by_id(
    const CsvTable& t, const std::string& file) {
  std::size_t id_col = t.column_index("unit_id");
  std::map<std::string, std::size_t, bool (*)(const std::string&, const std::string&)> idx(
      id_less);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto [it, inserted] = idx.emplace(t.rows[r][id_col], r);
    require(inserted, file + ": duplicate unit_id '" + t.rows[r][id_col] + "' at rows " +
                          std::to_string(it->second + 2) + " and " + std::to_string(r + 2));
  }
  return idx;
}

std::string row_context(const std::string& file, std::size_t row, const std::string& col) {
  return file + " row " + std::to_string(row + 2) + " column " + col;
}

}  // namespace

IngestResult ingest(const fs::path& dir, const std::string& transform, double shift) {
  CsvTable units = read_csv(dir / "units.csv");
  CsvTable covariates = read_csv(dir / "covariates.csv");
  CsvTable outcomes = read_csv(dir / "outcomes.csv");

  require(units.has_column("unit_id"), "units.csv: missing unit_id column");
  require(covariates.has_column("unit_id"), "covariates.csv: missing unit_id column");
  require(outcomes.has_column("unit_id"), "outcomes.csv: missing unit_id column");
  require(units.has_column("x") && units.has_column("y"),
          "units.csv: missing x or y centroid column");

  IngestResult out;
  for (const auto& c : units.columns)
    if (c.rfind("a_", 0) == 0) out.exposure_names.push_back(c);
  require(!out.exposure_names.empty(), "units.csv: no exposure columns (a_1, a_2, ...)");
  for (const auto& c : covariates.columns)
    if (c != "unit_id") out.covariate_names.push_back(c);
  require(!out.covariate_names.empty(), "covariates.csv: no covariate columns");
  for (const auto& c : outcomes.columns)
    if (c != "unit_id") out.outcome_names.push_back(c);
  require(!out.outcome_names.empty(), "outcomes.csv: no outcome columns");

  auto units_idx = index_by_id(units, "units.csv");
  auto cov_idx = index_by_id(covariates, "covariates.csv");
  auto outc_idx = index_by_id(outcomes, "outcomes.csv");

  // Inner join; anything dropped is reported.
  for (const auto& [id, row] : units_idx)
    if (cov_idx.count(id) && outc_idx.count(id)) out.unit_ids.push_back(id);
  std::set<std::string> kept(out.unit_ids.begin(), out.unit_ids.end());
  for (const auto* idx : {&units_idx, &cov_idx, &outc_idx})
    for (const auto& [id, row] : *idx)
      if (!kept.count(id)) out.dropped_units.push_back(id);
  std::sort(out.dropped_units.begin(), out.dropped_units.end(), id_less);
  out.dropped_units.erase(std::unique(out.dropped_units.begin(), out.dropped_units.end()),
                          out.dropped_units.end());

  const Index n = static_cast<Index>(out.unit_ids.size());
  require(n >= 1, "ingest: no units remain after joining on unit_id");

  const int k = static_cast<int>(out.exposure_names.size());
  const Index p = static_cast<Index>(out.covariate_names.size());
  const Index n_outcomes = static_cast<Index>(out.outcome_names.size());

  out.centroids.resize(n, 2);
  Eigen::MatrixXi binary(n, k);
  Matrix z_raw(n, p);
  Matrix y_raw(n, n_outcomes);

  std::size_t xcol = units.column_index("x"), ycol = units.column_index("y");
  std::vector<std::size_t> acols;
  for (const auto& name : out.exposure_names) acols.push_back(units.column_index(name));
  std::vector<std::size_t> ccols;
  for (const auto& name : out.covariate_names) ccols.push_back(covariates.column_index(name));
  std::vector<std::size_t> ocols;
  for (const auto& name : out.outcome_names) ocols.push_back(outcomes.column_index(name));

  for (Index i = 0; i < n; ++i) {
    const std::string& id = out.unit_ids[i];
    std::size_t ur = units_idx.at(id), cr = cov_idx.at(id), onr = outc_idx.at(id);
    out.centroids(i, 0) = parse_double(units.rows[ur][xcol], row_context("units.csv", ur, "x"));
    out.centroids(i, 1) = parse_double(units.rows[ur][ycol], row_context("units.csv", ur, "y"));
    for (int j = 0; j < k; ++j) {
      long a = parse_long(units.rows[ur][acols[j]],
                          row_context("units.csv", ur, out.exposure_names[j]));
      require(a == 0 || a == 1, "units.csv row " + std::to_string(ur + 2) + ": exposure " +
                                    out.exposure_names[j] + " must be 0 or 1");
      binary(i, j) = static_cast<int>(a);
    }
    for (Index j = 0; j < p; ++j)
      z_raw(i, j) = parse_double(covariates.rows[cr][ccols[j]],
                                 row_context("covariates.csv", cr, out.covariate_names[j]));
    for (Index j = 0; j < n_outcomes; ++j)
      y_raw(i, j) = parse_double(outcomes.rows[onr][ocols[j]],
                                 row_context("outcomes.csv", onr, out.outcome_names[j]));
  }

  out.design = encode_levels(binary);

  // Standardize covariates, keeping the record for provenance.
  out.covariate_means.resize(p);
  out.covariate_sds.resize(p);
  out.z.resize(n, p);
  for (Index j = 0; j < p; ++j) {
    double mean = z_raw.col(j).mean();
    double sd = std::sqrt((z_raw.col(j).array() - mean).square().mean());
    out.covariate_means[j] = mean;
    out.covariate_sds[j] = sd;
    if (sd > 1e-12)
      out.z.col(j) = (z_raw.col(j).array() - mean) / sd;
    else
      out.z.col(j).setZero();
  }

  auto [y_std, rec] = preprocess_outcomes(y_raw, transform, shift, &out.outcome_names);
  out.transform = rec;

  out.y_obs = Tensor3(n, out.design.n_levels, n_outcomes);
  for (Index i = 0; i < n; ++i) {
    int l = out.design.assignments[i] - 1;
    for (Index j = 0; j < n_outcomes; ++j) out.y_obs(i, l, j) = y_std(i, j);
  }
  return out;
}

void emit_dataset(const fs::path& dir, const SyntheticDataset& data) {
  fs::create_directories(dir);
  const Index n = data.y_obs.n_units();
  const int k = data.design.n_exposures;
  const Index o = data.y_obs.n_outcomes();

  auto unit_id = [&](Index i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "u%06ld", static_cast<long>(i));
    return std::string(buf);
  };

  CsvTable units;
  units.columns = {"unit_id", "x", "y"};
  for (int j = 1; j <= k; ++j) units.columns.push_back("a_" + std::to_string(j));
  for (Index i = 0; i < n; ++i) {
    std::vector<std::string> row{unit_id(i), format_double(data.centroids(i, 0)),
                                 format_double(data.centroids(i, 1))};
    std::vector<int> bits = decode_level(data.design.assignments[i], k);
    for (int j = 0; j < k; ++j) row.push_back(std::to_string(bits[j]));
    units.rows.push_back(std::move(row));
  }
  write_csv(dir / "units.csv", units);

  CsvTable covariates;
  covariates.columns = {"unit_id"};
  for (Index j = 1; j <= data.z.cols(); ++j)
    covariates.columns.push_back("z" + std::to_string(j));
  for (Index i = 0; i < n; ++i) {
    std::vector<std::string> row{unit_id(i)};
    for (Index j = 0; j < data.z.cols(); ++j) row.push_back(format_double(data.z(i, j)));
    covariates.rows.push_back(std::move(row));
  }
  write_csv(dir / "covariates.csv", covariates);

  CsvTable outcomes;
  outcomes.columns = {"unit_id"};
  for (Index j = 1; j <= o; ++j) outcomes.columns.push_back("y" + std::to_string(j));
  for (Index i = 0; i < n; ++i) {
    std::vector<std::string> row{unit_id(i)};
    int l = data.design.assignments[i] - 1;
    for (Index j = 0; j < o; ++j) row.push_back(format_double(data.y_obs(i, l, j)));
    outcomes.rows.push_back(std::move(row));
  }
  write_csv(dir / "outcomes.csv", outcomes);

  CsvTable effects;
  effects.columns = {"level", "outcome", "theta_true"};
  for (int l = 1; l <= data.design.n_levels; ++l)
    for (Index j = 0; j < o; ++j)
      effects.rows.push_back({std::to_string(l), "y" + std::to_string(j + 1),
                              format_double(data.theta_true(l - 1, j))});
  write_csv(dir / "truth_effects.csv", effects);

  CsvTable surface;
  surface.columns = {"unit_id", "level", "outcome", "value"};
  for (Index i = 0; i < n; ++i)
    for (int l = 1; l <= data.design.n_levels; ++l)
      for (Index j = 0; j < o; ++j)
        surface.rows.push_back({unit_id(i), std::to_string(l), "y" + std::to_string(j + 1),
                                format_double(data.y_true(i, l - 1, j))});
  write_csv(dir / "truth_surface.csv", surface);

  CsvTable props;
  props.columns = {"unit_id"};
  for (int l = 1; l <= data.design.n_levels; ++l)
    props.columns.push_back("pi_" + std::to_string(l));
  for (Index i = 0; i < n; ++i) {
    std::vector<std::string> row{unit_id(i)};
    for (int l = 0; l < data.design.n_levels; ++l)
      row.push_back(format_double(data.propensities(i, l)));
    props.rows.push_back(std::move(row));
  }
  write_csv(dir / "truth_propensities.csv", props);

  CsvTable conf;
  conf.columns = {"unit_id", "s"};
  for (Index i = 0; i < n; ++i)
    conf.rows.push_back({unit_id(i), format_double(data.confounder[i])});
  write_csv(dir / "truth_confounder.csv", conf);

  json meta;
  meta["graph"] = {{"kind", "grid"}, {"rows", data.config.rows}, {"cols", data.config.cols}};
  meta["seed"] = data.config.seed;
  meta["n_units"] = static_cast<long>(n);
  meta["n_exposures"] = k;
  meta["n_outcomes"] = static_cast<long>(o);
  std::ofstream mf(dir / "meta.json");
  require(mf.good(), "emit_dataset: cannot write meta.json");
  mf << meta.dump(2) << "\n";
}

DatasetMeta read_meta(const fs::path& dir) {
  DatasetMeta meta;
  std::ifstream in(dir / "meta.json");
  if (!in.good()) return meta;
  json j = json::parse(in);
  if (j.contains("graph") && j["graph"].value("kind", "") == "grid") {
    meta.has_grid = true;
    meta.rows = j["graph"].value("rows", 0);
    meta.cols = j["graph"].value("cols", 0);
  }
  return meta;
}

namespace {

json report_json(const FitReport& r) {
  json j;
  j["objective_trace"] = r.objective_trace;
  j["bic_trace"] = r.bic_trace;
  j["converged"] = r.converged;
  j["total_iterations"] = r.total_iterations;
  j["final_objective"] = r.final_objective;
  json steps = json::array();
  for (const auto& s : r.selection_log)
    steps.push_back({{"eigenvector", s.eigenvector}, {"bic", s.bic}, {"accepted", s.accepted}});
  j["selection_log"] = steps;
  return j;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string model_to_json(const SpatialTuckerModel& model) {
  json j;
  j["ranks"] = {model.ranks[0], model.ranks[1], model.ranks[2]};
  j["selected_eigenvectors"] = model.selected_eigs;  // 0-based basis columns
  j["core_dims"] = {model.core.n_units(), model.core.n_levels(), model.core.n_outcomes()};
  j["core"] = std::vector<double>(model.core.data().begin(), model.core.data().end());
  j["eta_Z"] = matrix_json(model.eta_Z);
  j["beta"] = matrix_json(model.beta);
  j["U2"] = matrix_json(model.U2);
  j["U3"] = matrix_json(model.U3);
  j["report"] = report_json(model.report);
  return j.dump(2);
}

std::string pipeline_report_json(const PipelineResult& result) {
  json j;
  j["ranks_used"] = {result.ranks_used[0], result.ranks_used[1], result.ranks_used[2]};
  j["step1"] = report_json(result.step1.report);
  j["step1_selected_eigenvectors"] = result.step1.selected_eigs;
  j["step3"] = report_json(result.step3.report);
  j["step3_selected_eigenvectors"] = result.step3.selected_eigs;
  j["propensity"] = {{"converged", result.propensity.converged},
                     {"iterations", result.propensity.iterations},
                     {"final_grad_norm", result.propensity.final_grad_norm},
                     {"ridge", result.propensity.ridge},
                     {"separation_warning", result.propensity.separation_warning}};
  j["weights_truncated"] = result.weights_truncated;
  return j.dump(2);
}

std::string pattern_label(int level, const ExposureDesign& design,
                          const std::vector<std::string>& exposure_names) {
  std::vector<int> bits = decode_level(level, design.n_exposures);
  std::string label;
  for (int j = 0; j < design.n_exposures; ++j) {
    if (!bits[j]) continue;
    if (!label.empty()) label += '+';
    label += j < static_cast<int>(exposure_names.size()) ? exposure_names[j]
                                                         : "a_" + std::to_string(j + 1);
  }
  return label.empty() ? "none" : label;
}

namespace {

std::vector<std::vector<std::string>> effect_rows(
    const std::vector<EffectEstimate>& effects, const ExposureDesign& design,
    const std::vector<std::string>& exposure_names,
    const std::vector<std::string>& outcome_names, const TransformRecord& transform,
    bool marginal) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : effects) {
    std::string pattern;
    if (marginal) {
      pattern = "marginal:" + (e.level - 1 < static_cast<int>(exposure_names.size())
                                   ? exposure_names[e.level - 1]
                                   : "a_" + std::to_string(e.level));
    } else {
      pattern = pattern_label(e.level, design, exposure_names);
    }
    std::string outcome = e.outcome < static_cast<int>(outcome_names.size())
                              ? outcome_names[e.outcome]
                              : "y" + std::to_string(e.outcome + 1);
    bool significant = e.ci_low > 0.0 || e.ci_high < 0.0;
    rows.push_back({pattern, outcome, format_double(e.theta_oi), format_double(e.theta_aipw),
                    format_double(e.variance), format_double(e.ci_low),
                    format_double(e.ci_high), format_double(effect_to_ratio(e.theta_aipw, transform)),
                    format_double(effect_to_ratio(e.ci_low, transform)),
                    format_double(effect_to_ratio(e.ci_high, transform)),
                    significant ? "1" : "0"});
  }
  return rows;
}

}  // namespace

CsvTable effects_table(const std::vector<EffectEstimate>& effects, const ExposureDesign& design,
                       const std::vector<std::string>& exposure_names,
                       const std::vector<std::string>& outcome_names,
                       const TransformRecord& transform, bool marginal) {
  CsvTable t;
  t.columns = {"exposure_pattern", "outcome",   "theta_oi",     "theta_aipw",
               "variance",         "ci_low",    "ci_high",      "ratio",
               "ratio_ci_low",     "ratio_ci_high", "significant_at_05"};
  t.rows = effect_rows(effects, design, exposure_names, outcome_names, transform, marginal);
  return t;
}

std::string effects_json(const std::vector<EffectEstimate>& effects,
                         const ExposureDesign& design,
                         const std::vector<std::string>& exposure_names,
                         const std::vector<std::string>& outcome_names,
                         const TransformRecord& transform, bool marginal) {
  CsvTable t = effects_table(effects, design, exposure_names, outcome_names, transform, marginal);
  json arr = json::array();
  for (const auto& row : t.rows) {
    json obj;
    obj["exposure_pattern"] = row[0];
    obj["outcome"] = row[1];
    obj["theta_oi"] = std::stod(row[2]);
    obj["theta_aipw"] = std::stod(row[3]);
    obj["variance"] = std::stod(row[4]);
    obj["ci_low"] = std::stod(row[5]);
    obj["ci_high"] = std::stod(row[6]);
    obj["ratio"] = std::stod(row[7]);
    obj["ratio_ci_low"] = std::stod(row[8]);
    obj["ratio_ci_high"] = std::stod(row[9]);
    obj["significant_at_05"] = row[10] == "1";
    obj["ratio_type"] = ratio_label(transform);
    arr.push_back(std::move(obj));
  }
  return arr.dump(2);
}

CsvTable overlap_csv(const OverlapTable& table) {
  CsvTable t;
  t.columns = {"level", "n_at_level", "min_propensity", "median_propensity"};
  for (double thr : table.thresholds) t.columns.push_back("frac_below_" + format_double(thr));
  for (const auto& row : table.rows) {
    std::vector<std::string> r{std::to_string(row.level), std::to_string(row.n_at_level),
                               format_double(row.min_prob), format_double(row.median_prob)};
    for (double f : row.frac_below) r.push_back(format_double(f));
    t.rows.push_back(std::move(r));
  }
  return t;
}

CsvTable metrics_csv(const BenchmarkResult& result) {
  CsvTable t;
  t.columns = {"method", "level",    "outcome",       "mean_bias", "mse",
               "coverage", "mean_ci_width", "n_ok"};
  for (const auto& c : result.cells)
    t.rows.push_back({c.method, std::to_string(c.level), "y" + std::to_string(c.outcome + 1),
                      format_double(c.mean_bias), format_double(c.mse),
                      format_double(c.coverage), format_double(c.mean_ci_width),
                      std::to_string(c.n_ok)});
  return t;
}

CsvTable timing_csv(const BenchmarkResult& result) {
  CsvTable t;
  t.columns = {"method", "wall_seconds", "failures", "replications"};
  for (const auto& [method, secs] : result.wall_seconds)
    t.rows.push_back({method, format_double(secs),
                      std::to_string(result.failures.at(method)),
                      std::to_string(result.replications)});
  return t;
}

}  // namespace sctc
