#include "sctc/cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "sctc/common.hpp"

namespace sctc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    require(known.count(it.key()) > 0,
            "config: unknown key '" + it.key() + "' in " + where);
}

ScenarioConfig scenario_from_json(const json& j) {
  reject_unknown(j, {"rows", "cols", "n_exposures", "n_outcomes", "ranks", "confounding",
                     "noise", "overlap", "eigen_span", "n_covariates", "decay",
                     "null_effects", "noise_kind", "seed"},
                 "scenario");
  ScenarioConfig c;
  c.rows = j.value("rows", c.rows);
  c.cols = j.value("cols", c.cols);
  c.n_exposures = j.value("n_exposures", c.n_exposures);
  c.n_outcomes = j.value("n_outcomes", c.n_outcomes);
  if (j.contains("ranks")) {
    auto r = j["ranks"].get<std::vector<Index>>();
    require(r.size() == 3, "config: scenario.ranks must have three entries");
    c.ranks = {r[0], r[1], r[2]};
  }
  c.confounding = j.value("confounding", c.confounding);
  c.noise = j.value("noise", c.noise);
  c.overlap = j.value("overlap", c.overlap);
  c.eigen_span = j.value("eigen_span", c.eigen_span);
  c.n_covariates = j.value("n_covariates", c.n_covariates);
  c.decay = j.value("decay", c.decay);
  c.null_effects = j.value("null_effects", c.null_effects);
  c.noise_kind = j.value("noise_kind", c.noise_kind);
  c.seed = j.value("seed", c.seed);
  return c;
}

json scenario_to_json(const ScenarioConfig& c) {
  json j;
  j["rows"] = c.rows;
  j["cols"] = c.cols;
  j["n_exposures"] = c.n_exposures;
  j["n_outcomes"] = c.n_outcomes;
  j["ranks"] = {c.ranks[0], c.ranks[1], c.ranks[2]};
  j["confounding"] = c.confounding;
  j["noise"] = c.noise;
  j["overlap"] = c.overlap;
  j["eigen_span"] = c.eigen_span;
  j["n_covariates"] = c.n_covariates;
  j["decay"] = c.decay;
  j["null_effects"] = c.null_effects;
  j["noise_kind"] = c.noise_kind;
  j["seed"] = c.seed;
  return j;
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"seed", "transform", "shift", "graph", "knn_k", "grid_rows", "grid_cols",
                  "use_cv", "ranks", "rank_grids", "cv_folds", "max_eigs", "patience", "tol",
                  "max_iters", "propensity_ridge", "propensity_floor", "alpha",
                  "reference_level", "folds", "step3_selection", "marginal_weights",
                  "scenario", "replications", "methods", "baseline_eigs", "k_grid"},
                 "config");

  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.transform = j.value("transform", c.transform);
  c.shift = j.value("shift", c.shift);
  c.graph = j.value("graph", c.graph);
  c.knn_k = j.value("knn_k", c.knn_k);
  c.grid_rows = j.value("grid_rows", c.grid_rows);
  c.grid_cols = j.value("grid_cols", c.grid_cols);
  c.use_cv = j.value("use_cv", c.use_cv);
  if (j.contains("ranks")) {
    auto r = j["ranks"].get<std::vector<Index>>();
    require(r.size() == 3, "config: ranks must have three entries");
    c.ranks = {r[0], r[1], r[2]};
  }
  if (j.contains("rank_grids")) {
    reject_unknown(j["rank_grids"], {"r1", "r2", "r3"}, "rank_grids");
    if (j["rank_grids"].contains("r1")) c.grid_r1 = j["rank_grids"]["r1"].get<std::vector<Index>>();
    if (j["rank_grids"].contains("r2")) c.grid_r2 = j["rank_grids"]["r2"].get<std::vector<Index>>();
    if (j["rank_grids"].contains("r3")) c.grid_r3 = j["rank_grids"]["r3"].get<std::vector<Index>>();
  }
  c.cv_folds = j.value("cv_folds", c.cv_folds);
  c.max_eigs = j.value("max_eigs", c.max_eigs);
  c.patience = j.value("patience", c.patience);
  c.tol = j.value("tol", c.tol);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.propensity_ridge = j.value("propensity_ridge", c.propensity_ridge);
  c.propensity_floor = j.value("propensity_floor", c.propensity_floor);
  c.alpha = j.value("alpha", c.alpha);
  c.reference_level = j.value("reference_level", c.reference_level);
  c.folds = j.value("folds", c.folds);
  c.step3_selection = j.value("step3_selection", c.step3_selection);
  c.marginal_weights = j.value("marginal_weights", c.marginal_weights);
  if (j.contains("scenario")) c.scenario = scenario_from_json(j["scenario"]);
  c.replications = j.value("replications", c.replications);
  if (j.contains("methods")) c.methods = j["methods"].get<std::vector<std::string>>();
  c.baseline_eigs = j.value("baseline_eigs", c.baseline_eigs);
  if (j.contains("k_grid")) c.k_grid = j["k_grid"].get<std::vector<int>>();

  require(c.transform == "none" || c.transform == "log" || c.transform == "logit",
          "config: transform must be none, log or logit");
  require(c.graph == "auto" || c.graph == "knn" || c.graph == "grid",
          "config: graph must be auto, knn or grid");
  require(c.step3_selection == "rerun" || c.step3_selection == "reuse",
          "config: step3_selection must be rerun or reuse");
  require(c.marginal_weights == "observed" || c.marginal_weights == "uniform",
          "config: marginal_weights must be observed or uniform");
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["transform"] = c.transform;
  j["shift"] = c.shift;
  j["graph"] = c.graph;
  j["knn_k"] = c.knn_k;
  j["grid_rows"] = c.grid_rows;
  j["grid_cols"] = c.grid_cols;
  j["use_cv"] = c.use_cv;
  j["ranks"] = {c.ranks[0], c.ranks[1], c.ranks[2]};
  j["rank_grids"] = {{"r1", c.grid_r1}, {"r2", c.grid_r2}, {"r3", c.grid_r3}};
  j["cv_folds"] = c.cv_folds;
  j["max_eigs"] = c.max_eigs;
  j["patience"] = c.patience;
  j["tol"] = c.tol;
  j["max_iters"] = c.max_iters;
  j["propensity_ridge"] = c.propensity_ridge;
  j["propensity_floor"] = c.propensity_floor;
  j["alpha"] = c.alpha;
  j["reference_level"] = c.reference_level;
  j["folds"] = c.folds;
  j["step3_selection"] = c.step3_selection;
  j["marginal_weights"] = c.marginal_weights;
  j["scenario"] = scenario_to_json(c.scenario);
  j["replications"] = c.replications;
  j["methods"] = c.methods;
  j["baseline_eigs"] = c.baseline_eigs;
  j["k_grid"] = c.k_grid;
  return j.dump(2);
}

PipelineConfig pipeline_config(const RunConfig& c) {
  PipelineConfig p;
  if (!c.use_cv) p.ranks = c.ranks;
  p.grids.r1 = c.grid_r1;
  p.grids.r2 = c.grid_r2;
  p.grids.r3 = c.grid_r3;
  p.cv_folds = c.cv_folds;
  p.fit.max_eigs = c.max_eigs;
  p.fit.patience = c.patience;
  p.fit.tol = c.tol;
  p.fit.max_iters = c.max_iters;
  p.propensity_ridge = c.propensity_ridge;
  p.propensity_floor = c.propensity_floor;
  p.alpha = c.alpha;
  p.reference_level = c.reference_level;
  p.cross_fit_folds = c.folds;
  p.rerun_selection_step3 = c.step3_selection == "rerun";
  p.marginal_uniform_weights = c.marginal_weights == "uniform";
  p.seed = c.seed;
  return p;
}

SpatialGraph build_graph(const RunConfig& config, const IngestResult& data,
                         const fs::path& data_dir) {
  std::string kind = config.graph;
  int rows = config.grid_rows, cols = config.grid_cols;
  if (kind == "auto") {
    DatasetMeta meta = read_meta(data_dir);
    if (meta.has_grid) {
      kind = "grid";
      rows = meta.rows;
      cols = meta.cols;
    } else {
      kind = "knn";
    }
  }
  if (kind == "grid") {
    require(static_cast<Index>(rows) * cols == data.y_obs.n_units(),
            "build_graph: grid dims do not match the unit count");
    return grid_graph(rows, cols);
  }
  return knn_graph(data.centroids, config.knn_k);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  require(out.good(), "cannot write " + path.string());
  out << text;
  if (text.empty() || text.back() != '\n') out << "\n";
}

void echo_config(const RunConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "resolved_config.json", config_to_json(config));
}

int guard(const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int cmd_simulate(const RunConfig& config, const fs::path& out_dir) {
  return guard([&] {
    ScenarioConfig sc = config.scenario;
    SyntheticDataset data = generate(sc);
    emit_dataset(out_dir, data);
    echo_config(config, out_dir);
    std::cout << "simulate: wrote " << data.y_obs.n_units() << " units to " << out_dir.string()
              << "\n";
    return 0;
  });
}

int cmd_fit(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir) {
  return guard([&] {
    IngestResult data = ingest(data_dir, config.transform, config.shift);
    SpatialGraph graph = build_graph(config, data, data_dir);
    SpectralBasis basis = spectral_basis(graph);
    Tensor3 mask = assignment_mask(data.design, data.y_obs.n_outcomes());

    Matrix z1(data.z.rows(), data.z.cols() + 1);
    z1.col(0).setOnes();
    z1.rightCols(data.z.cols()) = data.z;

    PipelineConfig pc = pipeline_config(config);
    std::array<Index, 3> ranks =
        pc.ranks ? *pc.ranks
                 : cross_validate_ranks(data.y_obs, mask, z1, basis, pc.grids, pc.cv_folds,
                                        pc.seed, pc.cv);
    FitConfig fc = pc.fit;
    fc.ranks = ranks;
    fc.seed = pc.seed;
    SpatialTuckerModel model = spgd_fit(data.y_obs, mask, z1, basis, nullptr, fc);

    echo_config(config, out_dir);
    write_text(out_dir / "model.json", model_to_json(model));
    nlohmann::json rep;
    rep["ranks_used"] = {ranks[0], ranks[1], ranks[2]};
    rep["converged"] = model.report.converged;
    rep["final_objective"] = model.report.final_objective;
    rep["selected_eigenvectors"] = model.selected_eigs;
    rep["total_iterations"] = model.report.total_iterations;
    write_text(out_dir / "fit_report.json", rep.dump(2));
    std::cout << "fit: ranks (" << ranks[0] << "," << ranks[1] << "," << ranks[2] << "), "
              << model.selected_eigs.size() << " eigenvectors selected\n";
    return model.report.converged ? 0 : 2;
  });
}

int cmd_estimate(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir) {
  return guard([&] {
    IngestResult data = ingest(data_dir, config.transform, config.shift);
    SpatialGraph graph = build_graph(config, data, data_dir);
    PipelineConfig pc = pipeline_config(config);
    PipelineResult result = run_pipeline(data.y_obs, data.design, data.z, graph, pc);

    echo_config(config, out_dir);
    write_csv(out_dir / "effects.csv",
              effects_table(result.effects, data.design, data.exposure_names,
                            data.outcome_names, data.transform, false));
    write_text(out_dir / "effects.json",
               effects_json(result.effects, data.design, data.exposure_names,
                            data.outcome_names, data.transform, false));
    write_csv(out_dir / "marginal_effects.csv",
              effects_table(result.marginals, data.design, data.exposure_names,
                            data.outcome_names, data.transform, true));
    write_csv(out_dir / "overlap.csv", overlap_csv(result.overlap));
    write_text(out_dir / "fit_report.json", pipeline_report_json(result));

    bool converged = result.step1.report.converged && result.step3.report.converged &&
                     result.propensity.converged;
    std::cout << "estimate: " << result.effects.size() << " effects written to "
              << out_dir.string() << "\n";
    return converged ? 0 : 2;
  });
}

int cmd_benchmark(const RunConfig& config, const fs::path& out_dir) {
  return guard([&] {
    BenchmarkConfig bc;
    bc.scenario = config.scenario;
    bc.methods = config.methods;
    bc.replications = config.replications;
    bc.seed = config.scenario.seed;
    bc.pipeline = pipeline_config(config);
    bc.baseline.n_eigs = config.baseline_eigs;
    bc.baseline.floor = config.propensity_floor;
    bc.baseline.propensity_ridge = config.propensity_ridge;
    bc.baseline.alpha = config.alpha;
    BenchmarkResult result = run_benchmark(bc);

    echo_config(config, out_dir);
    write_csv(out_dir / "metrics.csv", metrics_csv(result));
    // Wall times are the one non-reproducible output, kept out of metrics.csv.
    write_csv(out_dir / "timing.csv", timing_csv(result));
    std::cout << "benchmark: " << result.cells.size() << " cells over " << result.replications
              << " replications\n";
    return 0;
  });
}

int cmd_diagnose(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir) {
  return guard([&] {
    IngestResult data = ingest(data_dir, config.transform, config.shift);
    SpatialGraph graph = build_graph(config, data, data_dir);

    CsvTable sweep;
    sweep.columns = {"k",      "exposure_pattern", "outcome", "theta_oi", "theta_aipw",
                     "ci_low", "ci_high",          "abs_theta_aipw"};
    bool all_converged = true;
    for (int k : config.k_grid) {
      require(k >= 0, "diagnose: k grid entries must be >= 0");
      PipelineConfig pc = pipeline_config(config);
      pc.fit.select = false;
      pc.rerun_selection_step3 = false;
      pc.fit.fixed_eigs.clear();
      for (int j = 1; j <= k; ++j) pc.fit.fixed_eigs.push_back(j);
      PipelineResult result = run_pipeline(data.y_obs, data.design, data.z, graph, pc);
      all_converged = all_converged && result.step1.report.converged &&
                      result.step3.report.converged && result.propensity.converged;
      for (const auto& e : result.effects) {
        sweep.rows.push_back(
            {std::to_string(k), pattern_label(e.level, data.design, data.exposure_names),
             e.outcome < static_cast<int>(data.outcome_names.size())
                 ? data.outcome_names[e.outcome]
                 : "y" + std::to_string(e.outcome + 1),
             format_double(e.theta_oi), format_double(e.theta_aipw), format_double(e.ci_low),
             format_double(e.ci_high), format_double(std::abs(e.theta_aipw))});
      }
    }

    echo_config(config, out_dir);
    write_csv(out_dir / "sweep.csv", sweep);
    std::cout << "diagnose: swept k over " << config.k_grid.size() << " values\n";
    return all_converged ? 0 : 2;
  });
}

}  // namespace sctc
