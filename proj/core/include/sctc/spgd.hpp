#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sctc/spatial.hpp"
#include "sctc/tensor.hpp"

namespace sctc {

// Model selection criterion: score(rss, n_obs, df), lower is better.
using Criterion = std::function<double(double, long, long)>;

// n_obs * log(rss / n_obs) + df * log(n_obs). Non-positive rss is clamped to
// machine epsilon with a warning on stderr.
double bic_score(double rss, long n_obs, long df);

// Parameter count charged to the fit: core + covariate coefficients +
// eigenvector coefficients + the orthonormal-factor dimensions.
long spgd_df(std::array<Index, 3> ranks, Index z_cols, Index n_eigs, Index n_levels,
             Index n_outcomes);

struct FitConfig {
  std::array<Index, 3> ranks{2, 2, 2};

  // Candidate eigenvectors are basis columns 2..max_eigs (1-based; the first
  // column is the near-constant direction covered by the intercept in Z).
  // -1 resolves to min(N/10, 100).
  int max_eigs = -1;
  int patience = 3;               // consecutive rejections before stopping

  double tol = 1e-8;              // relative objective change per sweep
  int max_iters = 500;            // block-coordinate sweeps per inner fit
  double init_step = 1.0;
  double step_shrink = 0.5;
  double step_grow = 2.0;
  int max_backtracks = 60;
  std::uint64_t seed = 0;         // used by fold/cell partitions downstream

  // Warm-start eigenvector set (0-based basis column indices, ascending,
  // excluding column 0). When `select` is false the set is used as-is.
  std::vector<int> fixed_eigs;
  bool select = true;
};

struct SelectionStep {
  int eigenvector = 0;  // 0-based basis column
  double bic = 0.0;
  bool accepted = false;
};

struct FitReport {
  std::vector<double> objective_trace;  // accepted sweeps, raw weight scale
  std::vector<double> bic_trace;        // after init and each accepted expansion
  std::vector<SelectionStep> selection_log;
  bool converged = false;
  int total_iterations = 0;
  double final_objective = 0.0;  // raw weight scale
};

// Fitted spatial Tucker model. The unit factor is parameterized as
// U1 = Z * eta_Z + Phi[:, selected_eigs] * beta; U2 and U3 have orthonormal
// columns. The latent spatial component estimate is Phi[:, selected] * beta.
struct SpatialTuckerModel {
  Tensor3 core;
  Matrix eta_Z;                   // Z.cols() x r1
  Matrix beta;                    // selected_eigs.size() x r1
  std::vector<int> selected_eigs; // 0-based basis columns, strictly increasing
  Matrix U2, U3;
  std::array<Index, 3> ranks{0, 0, 0};
  FitReport report;

  Matrix unit_factor(const Matrix& z, const Matrix& phi) const;
  Matrix spatial_component(const Matrix& phi) const;  // Phi_sel * beta
};

// Minimizes || sqrt(W) o A o (Y - G x1 (Z eta + Phi_sel beta) x2 U2 x3 U3) ||_F^2
// by block-coordinate gradient descent with backtracking (blocks: core, then
// (eta_Z, beta) jointly, then U2, then U3 with QR re-orthonormalization), and
// expands the eigenvector set stepwise while `criterion` improves. mask
// entries must be 0/1 with at least one observed cell; weights, when given,
// must be nonnegative with support inside the mask. Weights are normalized
// internally by their mean over observed cells, so the iterates are invariant
// to rescaling all weights; reported objectives are on the raw weight scale.
SpatialTuckerModel spgd_fit(const Tensor3& y, const Tensor3& mask, const Matrix& z,
                            const SpectralBasis& basis, const Tensor3* weights,
                            const FitConfig& config, const Criterion& criterion = {});

// Dense completed tensor over all (unit, level, outcome) cells.
Tensor3 predict_full(const SpatialTuckerModel& model, const Matrix& z,
                     const SpectralBasis& basis);

struct RankGrids {
  std::vector<Index> r1{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<Index> r2{1, 2, 3};
  std::vector<Index> r3{1, 2, 3, 4, 5};
};

struct CvOptions {
  int max_iters = 200;      // per CV fit
  double tol = 1e-7;
  int n_fixed_eigs = 10;    // eigenvectors used (no selection) during CV
  unsigned workers = 0;
};

// 5-fold cross-validation over observed cells: for each rank triple, fit on
// four folds with the unweighted loss and score squared error on the held-out
// fold. Returns the triple with the lowest mean CV error; triples within one
// standard error (across folds) of the minimum count as ties, broken toward
// smaller r1+r2+r3, then lexicographically. A fold split that leaves some
// unit, level or outcome with no training cells is redrawn (at most 10 times).
std::array<Index, 3> cross_validate_ranks(const Tensor3& y, const Tensor3& mask,
                                          const Matrix& z, const SpectralBasis& basis,
                                          const RankGrids& grids, int folds,
                                          std::uint64_t seed, const CvOptions& options = {});

// Unit-level cross-fitting: each fold's slice of the completed tensor is
// predicted from a model fitted on the other folds' units, applying the
// fitted eta_Z and beta to the held-out units' Z and Phi rows. folds == 1
// degenerates to a plain fit.
Tensor3 cross_fit_impute(const Tensor3& y, const Tensor3& mask, const Matrix& z,
                         const SpectralBasis& basis, const Tensor3* weights,
                         const FitConfig& config, int folds, std::uint64_t seed);

// Loss and analytic block gradients at given parameters, exposed for
// finite-difference checks. v is the elementwise nonnegative weight tensor
// (mask, or weights o mask); x holds the unit-factor regressors.
double spgd_objective(const Tensor3& y, const Tensor3& v, const Matrix& x,
                      const Tensor3& core, const Matrix& gamma, const Matrix& u2,
                      const Matrix& u3);
void spgd_gradients(const Tensor3& y, const Tensor3& v, const Matrix& x,
                    const Tensor3& core, const Matrix& gamma, const Matrix& u2,
                    const Matrix& u3, Tensor3* g_core, Matrix* g_gamma, Matrix* g_u2,
                    Matrix* g_u3);

}  // namespace sctc
