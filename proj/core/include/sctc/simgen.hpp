#pragma once

#include <map>
#include <string>
#include <vector>

#include "sctc/estimator.hpp"

namespace sctc {

// Synthetic scenario: spatial grid, factorial binary exposures, multiple
// outcomes, a smooth latent confounder driving both exposure assignment and
// the outcome surface, and configurable noise/overlap.
struct ScenarioConfig {
  int rows = 20, cols = 20;
  int n_exposures = 2;               // K; L = 2^K levels
  int n_outcomes = 10;               // O
  std::array<Index, 3> ranks{3, 2, 2};
  double confounding = 1.0;          // strength of the latent spatial confounder
  double noise = 1.0;                // outcome noise sd (surface has unit rms)
  double overlap = 0.1;              // target minimum true propensity
  int eigen_span = 6;                // confounder lives in span(phi_2..phi_span)
  int n_covariates = 3;
  double decay = 1.5;                // spectral coefficient decay exponent
  bool null_effects = false;         // identical outcome surface at every level
  std::string noise_kind = "gaussian";  // or "uniform" (bounded, same variance)
  std::uint64_t seed = 1;
};

struct SyntheticDataset {
  Tensor3 y_obs;        // zeros at unobserved cells
  Tensor3 y_true;       // full noiseless potential-outcome tensor
  ExposureDesign design;
  Matrix z;             // N x p measured covariates (no intercept)
  Matrix centroids;
  SpatialGraph graph;
  Matrix theta_true;    // L x O exact contrasts vs level 1
  Vector confounder;    // latent smooth spatial signal s (unit rms)
  Matrix propensities;  // N x L true assignment probabilities
  ScenarioConfig config;
};

SyntheticDataset generate(const ScenarioConfig& config);

// Exact finite-population ATE from the noiseless surface.
double true_ate(const SyntheticDataset& data, int level, int ref, int outcome);

struct BaselineOptions {
  bool spatial_outcome = false;     // eigenvectors in the per-outcome regression
  bool spatial_propensity = false;  // eigenvectors in the multinomial logit
  int n_eigs = 10;                  // leading eigenvectors used when spatial
  double ridge_fallback = 1e-6;
  double propensity_ridge = 1e-4;
  double floor = 0.01;
  double alpha = 0.05;
  int reference_level = 1;
};

// Per-outcome linear regression on level indicators + covariates (+ leading
// eigenvectors when spatial), paired with a multinomial-logit propensity
// model, combined through the same AIPW machinery as the tensor pipeline.
// Rank-deficient design matrices fall back to a small ridge (flag reported
// through ridge_fallback_used).
std::vector<EffectEstimate> baseline_regression(const SyntheticDataset& data,
                                                const BaselineOptions& options,
                                                const SpectralBasis* basis = nullptr,
                                                bool* ridge_fallback_used = nullptr);
std::vector<EffectEstimate> baseline_regression(const SyntheticDataset& data, bool spatial);

struct BenchmarkConfig {
  ScenarioConfig scenario;
  std::vector<std::string> methods{"oracle", "spatial_tensor", "tensor", "spatial_ps",
                                   "regression"};
  int replications = 200;
  std::uint64_t seed = 1;
  PipelineConfig pipeline;   // tensor methods; unset ranks default to scenario ranks
  BaselineOptions baseline;  // regression methods
  unsigned workers = 0;
};

struct MetricCell {
  std::string method;
  int level = 0;    // 1-based, contrast vs reference level 1
  int outcome = 0;  // 0-based
  double mean_bias = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
  double mean_ci_width = 0.0;
  long n_ok = 0;
};

struct BenchmarkResult {
  std::vector<MetricCell> cells;
  std::map<std::string, double> wall_seconds;  // total per method
  std::map<std::string, long> failures;        // replications that threw
  int replications = 0;
};

// Replication r uses scenario seed + r. A method failure is recorded and the
// replication's other methods still count.
BenchmarkResult run_benchmark(const BenchmarkConfig& config);

}  // namespace sctc
