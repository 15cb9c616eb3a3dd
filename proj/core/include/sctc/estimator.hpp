#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sctc/propensity.hpp"
#include "sctc/spgd.hpp"

namespace sctc {

// Standard normal quantile, computed by Acklam's rational approximation with
// one Halley refinement; absolute error well below 1e-8 over (0, 1).
double normal_quantile(double p);

// theta +/- z_{alpha/2} * sqrt(v / n). alpha in (0, 1]; alpha == 1 gives a
// zero-width interval at theta.
std::pair<double, double> confidence_interval(double theta, double v, long n, double alpha);

// Mean of centered influence contributions squared; requires n >= 2.
double influence_variance(const Vector& centered);

// Treatment effect of exposure level vs reference for one outcome.
struct EffectEstimate {
  int level = 0;        // 1-based exposure level (or exposure index for marginals)
  int reference = 0;    // 1-based reference level (0 for marginal contrasts)
  int outcome = 0;      // 0-based outcome index
  double theta_oi = 0.0;
  double theta_aipw = 0.0;
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  long n_units = 0;
};

// Observed outcome matrix: row i holds unit i's outcomes at its assigned level.
Matrix observed_matrix(const Tensor3& y, const ExposureDesign& design);

// Outcome-imputation contrast: mean_i(yhat[i,level,o] - yhat[i,ref,o]).
double oi_estimate(const Tensor3& yhat, int level, int ref, int outcome);

// Per-unit augmented level scores
//   m[i,l,o] = yhat[i,l,o] + 1{A_i=l} / max(pi[i,l], floor) * (y_obs[i,o] - yhat[i,l,o]);
// every AIPW contrast is a per-unit linear combination of these.
Tensor3 aipw_scores(const Matrix& y_obs, const Tensor3& yhat, const Matrix& probs,
                    const ExposureDesign& design, double floor);

// AIPW contrast with influence-function variance and normal CI. If
// contributions is non-null it receives the centered per-unit contributions.
EffectEstimate aipw_estimate(const Matrix& y_obs, const Tensor3& yhat, const Matrix& probs,
                             const ExposureDesign& design, int level, int ref, int outcome,
                             double floor, double alpha, Vector* contributions = nullptr);

// Marginal effect of one exposure (1-based index into the factorial design):
// the contrast of switching it on vs off, averaged over the distribution of
// the other exposures' patterns (observed frequencies, or uniform). The
// variance uses the same linear combination of per-unit scores, so contrast
// covariances are accounted for.
EffectEstimate marginal_effect(const Tensor3& scores, const Tensor3& yhat,
                               const ExposureDesign& design, int exposure, int outcome,
                               double alpha, bool uniform_weights = false);

// Outcome preprocessing: shift, transform, then standardize the whole array
// to zero mean and unit variance. transform is "none", "log" (requires
// raw + shift > 0) or "logit" (raw is a percentage; (raw + shift)/100 must
// lie in (0,1)).
struct TransformRecord {
  std::string transform = "none";
  double shift = 0.0;
  double mean = 0.0;
  double sd = 1.0;
};

std::pair<Matrix, TransformRecord> preprocess_outcomes(const Matrix& raw,
                                                       const std::string& transform,
                                                       double shift,
                                                       const std::vector<std::string>* names = nullptr);
Matrix inverse_preprocess(const Matrix& transformed, const TransformRecord& rec);

// exp(theta * sd): an odds ratio under "logit", a rate ratio under "log",
// a generic exponentiated effect under "none".
double effect_to_ratio(double theta, const TransformRecord& rec);
std::string ratio_label(const TransformRecord& rec);

struct PipelineConfig {
  std::optional<std::array<Index, 3>> ranks;  // absent: choose by CV
  RankGrids grids;
  int cv_folds = 5;
  CvOptions cv;

  FitConfig fit;  // ranks field is overridden by the resolved ranks

  double propensity_ridge = 1e-4;
  double propensity_floor = 0.01;
  double alpha = 0.05;
  int reference_level = 1;

  int cross_fit_folds = 1;
  bool rerun_selection_step3 = true;  // false: reuse step-1 eigenvectors as-is
  bool marginal_uniform_weights = false;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  SpatialTuckerModel step1;
  PropensityModel propensity;
  Matrix propensity_probs;  // N x L
  SpatialTuckerModel step3;
  Tensor3 yhat;
  Tensor3 weights;
  Tensor3 scores;  // AIPW per-unit level scores
  std::vector<EffectEstimate> effects;    // (L-1) * O rows
  std::vector<EffectEstimate> marginals;  // K * O rows
  OverlapTable overlap;
  std::array<Index, 3> ranks_used{0, 0, 0};
  long weights_truncated = 0;
};

// Three-step pipeline: (1) unweighted spectral-adjusted fit, (2) propensity
// fit on measured covariates plus the selected eigenvectors and IPW weights,
// (3) weighted (optionally cross-fitted) refit and effect estimation for
// every non-reference level and outcome. z holds the measured covariates
// without an intercept column (one is added internally).
PipelineResult run_pipeline(const Tensor3& y, const ExposureDesign& design, const Matrix& z,
                            const SpatialGraph& graph, const PipelineConfig& config);

}  // namespace sctc
