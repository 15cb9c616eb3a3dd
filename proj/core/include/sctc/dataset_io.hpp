#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sctc/csv.hpp"
#include "sctc/estimator.hpp"
#include "sctc/simgen.hpp"

namespace sctc {

// A dataset directory holds three CSVs joined on unit_id:
//   units.csv       unit_id, x, y, then one {0,1} column per exposure
//   covariates.csv  unit_id, named numeric columns
//   outcomes.csv    unit_id, named outcome columns (observed outcome per unit)
// Synthetic datasets add truth_*.csv files and meta.json.
struct IngestResult {
  Tensor3 y_obs;  // observed values at each unit's assigned level, 0 elsewhere
  ExposureDesign design;
  Matrix z;       // standardized covariates
  Matrix centroids;
  std::vector<std::string> unit_ids;
  std::vector<std::string> exposure_names;
  std::vector<std::string> covariate_names;
  std::vector<std::string> outcome_names;
  TransformRecord transform;
  Vector covariate_means, covariate_sds;
  std::vector<std::string> dropped_units;  // present in some files but not all
};

// Inner-joins the three tables on unit_id (deterministic order: numeric when
// ids parse as integers, else lexicographic), standardizes covariates and
// preprocesses outcomes. Duplicate ids, missing columns and non-numeric cells
// raise errors naming the offending rows.
IngestResult ingest(const std::filesystem::path& dir, const std::string& transform,
                    double shift);

// Writes units/covariates/outcomes plus truth_effects.csv, truth_surface.csv,
// truth_propensities.csv, truth_confounder.csv and meta.json.
void emit_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);

// Graph metadata from meta.json, if present.
struct DatasetMeta {
  bool has_grid = false;
  int rows = 0, cols = 0;
};
DatasetMeta read_meta(const std::filesystem::path& dir);

std::string model_to_json(const SpatialTuckerModel& model);
std::string pipeline_report_json(const PipelineResult& result);

// Effect-table schema shared by CSV and JSON outputs. exposure_pattern names
// the active exposures of the level ("none" for the all-zeros pattern,
// "marginal:<name>" for marginal rows).
CsvTable effects_table(const std::vector<EffectEstimate>& effects,
                       const ExposureDesign& design,
                       const std::vector<std::string>& exposure_names,
                       const std::vector<std::string>& outcome_names,
                       const TransformRecord& transform, bool marginal);
std::string effects_json(const std::vector<EffectEstimate>& effects,
                         const ExposureDesign& design,
                         const std::vector<std::string>& exposure_names,
                         const std::vector<std::string>& outcome_names,
                         const TransformRecord& transform, bool marginal);

CsvTable overlap_csv(const OverlapTable& table);
CsvTable metrics_csv(const BenchmarkResult& result);
CsvTable timing_csv(const BenchmarkResult& result);

// Level -> "none" / "a_1" / "a_1+a_2" style label.
std::string pattern_label(int level, const ExposureDesign& design,
                          const std::vector<std::string>& exposure_names);

}  // namespace sctc
