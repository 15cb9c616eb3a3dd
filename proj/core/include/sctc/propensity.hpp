#pragma once

#include <vector>

#include "sctc/tensor.hpp"

namespace sctc {

// Factorial exposure design. Levels are 1-based: a binary exposure pattern
// (a_1, ..., a_K) maps to level 1 + sum_k a_k * 2^(k-1), so (0,...,0) is
// level 1 and (1,...,1) is level L = 2^K.
struct ExposureDesign {
  int n_exposures = 0;              // K
  int n_levels = 0;                 // L = 2^K
  std::vector<int> assignments;     // level per unit, each in [1, L]
  int reference_level = 1;          // contrast baseline; default no-exposure

  Index n_units() const { return static_cast<Index>(assignments.size()); }
};

// Encodes an N x K binary exposure matrix into levels.
ExposureDesign encode_levels(const Eigen::MatrixXi& binary);

// Binary pattern (a_1, ..., a_K) of a 1-based level.
std::vector<int> decode_level(int level, int k_exposures);

// N x L x O observation indicator: 1 at (i, assignments[i]-1, o), 0 elsewhere.
Tensor3 assignment_mask(const ExposureDesign& d, Index n_outcomes);

// Multinomial logistic exposure model. Class L is the softmax baseline with
// coefficients pinned to zero; row l-1 of `coefficients` holds level l's
// (intercept, feature...) coefficients.
struct PropensityModel {
  Matrix coefficients;        // (L-1) x (1 + n_features)
  int n_levels = 0;
  int baseline_level = 0;     // == n_levels
  double ridge = 0.0;
  bool converged = false;
  bool separation_warning = false;
  int iterations = 0;
  double final_grad_norm = 0.0;
};

// Ridge-penalized fit by gradient ascent with backtracking, on mean
// log-likelihood scale; the intercept is not penalized. Features must be
// standardized by the caller and must not contain an intercept column.
// Converges when the gradient max-norm is <= 1e-8 (or after 1000 iterations;
// the `converged` flag reports which). Coefficients growing past a separation
// bound with a weaker ridge trigger one refit at the ridge floor 1e-4.
PropensityModel fit_multinomial(const Matrix& features, const ExposureDesign& design,
                                double ridge);

// Softmax probabilities, N x L; rows sum to 1.
Matrix predict_probs(const PropensityModel& model, const Matrix& features);

// Row-wise stable softmax over full score rows.
Matrix softmax_rows(const Matrix& scores);

// Exposed for finite-difference checks: the penalized mean log-likelihood
// maximized by fit_multinomial and its analytic gradient. theta is
// (L-1) x (1 + n_features) with the intercept in column 0.
double multinomial_objective(const Matrix& features, const ExposureDesign& design,
                             const Matrix& theta, double ridge);
Matrix multinomial_gradient(const Matrix& features, const ExposureDesign& design,
                            const Matrix& theta, double ridge);

// W_{ilo} = 1{A_i = l} / max(pi_{il}, floor), replicated over outcomes; zero
// at unobserved cells. floor must lie in (0, 0.5). If truncated is non-null
// it receives the number of observed units whose propensity was floored.
Tensor3 ipw_weights(const Matrix& probs, const ExposureDesign& design, double floor,
                    Index n_outcomes, long* truncated = nullptr);

// Per-level overlap summary among units observed at that level.
struct OverlapRow {
  int level = 0;
  long n_at_level = 0;
  double min_prob = 0.0;
  double median_prob = 0.0;
  std::vector<double> frac_below;  // aligned with OverlapTable::thresholds
};

struct OverlapTable {
  std::vector<double> thresholds;
  std::vector<OverlapRow> rows;
};

// thresholds must be ascending and inside (0,1); defaults to {0.01, 0.05}.
OverlapTable overlap_diagnostics(const Matrix& probs, const ExposureDesign& design,
                                 std::vector<double> thresholds = {0.01, 0.05});

}  // namespace sctc
