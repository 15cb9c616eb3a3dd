#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sctc/dataset_io.hpp"

namespace sctc {

// Resolved run configuration; round-trips through JSON. Unknown keys in a
// config file are rejected. Every command echoes the resolved config into its
// output directory as resolved_config.json.
struct RunConfig {
  std::uint64_t seed = 1;

  // outcome preprocessing
  std::string transform = "none";  // none | log | logit
  double shift = 0.0;

  // spatial graph for ingested data: "auto" uses meta.json when present,
  // else a kNN graph on the centroids
  std::string graph = "auto";  // auto | knn | grid
  int knn_k = 4;
  int grid_rows = 0, grid_cols = 0;

  // ranks: fixed triple, or 5-fold CV over the grids
  bool use_cv = false;
  std::array<Index, 3> ranks{3, 2, 2};
  std::vector<Index> grid_r1{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<Index> grid_r2{1, 2, 3};
  std::vector<Index> grid_r3{1, 2, 3, 4, 5};
  int cv_folds = 5;

  // solver
  int max_eigs = -1;
  int patience = 3;
  double tol = 1e-8;
  int max_iters = 500;

  // propensity / effects
  double propensity_ridge = 1e-4;
  double propensity_floor = 0.01;
  double alpha = 0.05;
  int reference_level = 1;
  int folds = 1;                              // cross-fitting folds (1 = plain fit)
  std::string step3_selection = "rerun";      // rerun | reuse
  std::string marginal_weights = "observed";  // observed | uniform

  // simulate / benchmark
  ScenarioConfig scenario;
  int replications = 200;
  std::vector<std::string> methods{"oracle", "spatial_tensor", "tensor", "spatial_ps",
                                   "regression"};
  int baseline_eigs = 10;

  // diagnose
  std::vector<int> k_grid{0, 5, 10, 20};
};

RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& config);

PipelineConfig pipeline_config(const RunConfig& config);

// Builds the spatial graph for an ingested dataset per config.graph.
SpatialGraph build_graph(const RunConfig& config, const IngestResult& data,
                         const std::filesystem::path& data_dir);

// Subcommands. Each writes its outputs plus resolved_config.json into
// out_dir and returns 0 on success, 1 on a data/config error, 2 on a
// convergence failure.
int cmd_simulate(const RunConfig& config, const std::filesystem::path& out_dir);
int cmd_fit(const RunConfig& config, const std::filesystem::path& data_dir,
            const std::filesystem::path& out_dir);
int cmd_estimate(const RunConfig& config, const std::filesystem::path& data_dir,
                 const std::filesystem::path& out_dir);
int cmd_benchmark(const RunConfig& config, const std::filesystem::path& out_dir);
int cmd_diagnose(const RunConfig& config, const std::filesystem::path& data_dir,
                 const std::filesystem::path& out_dir);

}  // namespace sctc
