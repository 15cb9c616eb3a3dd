// Longer Monte-Carlo checks that back the statistical behavior of the
// estimator beyond the per-module unit tests.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sctc/estimator.hpp"
#include "sctc/simgen.hpp"
#include "sctc/spatial.hpp"

using namespace sctc;

namespace {

Matrix with_intercept(const Matrix& z) {
  Matrix z1(z.rows(), z.cols() + 1);
  z1.col(0).setOnes();
  z1.rightCols(z.cols()) = z;
  return z1;
}

}  // namespace

TEST_CASE("influence-function variance tracks the Monte-Carlo variance of AIPW") {
  // cheap nuisances (true surface, true propensities) isolate the variance
  // arithmetic from fitting error
  ScenarioConfig sc;
  sc.rows = 10;
  sc.cols = 10;
  sc.n_outcomes = 3;
  const int reps = 500;
  std::vector<double> thetas, psi_vars, marg_thetas, marg_vars;
  for (int r = 0; r < reps; ++r) {
    sc.seed = 11000 + r;
    SyntheticDataset d = generate(sc);
    Matrix y_obs = observed_matrix(d.y_obs, d.design);
    Tensor3 scores = aipw_scores(y_obs, d.y_true, d.propensities, d.design, 0.01);
    EffectEstimate e = aipw_estimate(y_obs, d.y_true, d.propensities, d.design, 2, 1, 0,
                                     0.01, 0.05);
    thetas.push_back(e.theta_aipw - d.theta_true(1, 0));
    psi_vars.push_back(e.variance / e.n_units);
    EffectEstimate m = marginal_effect(scores, d.y_true, d.design, 1, 0, 0.05);
    // observed-frequency weights over the other exposure's pattern
    double w_off = 0.0, w_on = 0.0;
    for (Index i = 0; i < d.y_obs.n_units(); ++i) {
      std::vector<int> bits = decode_level(d.design.assignments[i], 2);
      (bits[1] ? w_on : w_off) += 1.0 / d.y_obs.n_units();
    }
    double truth = w_off * (d.theta_true(1, 0) - d.theta_true(0, 0)) +
                   w_on * (d.theta_true(3, 0) - d.theta_true(2, 0));
    marg_thetas.push_back(m.theta_aipw - truth);
    marg_vars.push_back(m.variance / m.n_units);
  }
  auto mc_var = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return var / (v.size() - 1);
  };
  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / v.size();
  };
  double ratio = mc_var(thetas) / mean_of(psi_vars);
  CHECK(ratio >= 0.75);
  CHECK(ratio <= 1.25);
  double marg_ratio = mc_var(marg_thetas) / mean_of(marg_vars);
  CHECK(marg_ratio >= 0.75);
  CHECK(marg_ratio <= 1.25);
}

TEST_CASE("randomized exposures: pipeline AIPW is unbiased within Monte-Carlo error") {
  ScenarioConfig sc;
  sc.rows = 12;
  sc.cols = 12;
  sc.n_outcomes = 4;
  sc.confounding = 0.0;
  sc.overlap = 0.2;  // near-uniform assignment
  const int reps = 50;
  std::vector<double> rep_bias(reps, 0.0);
  for (int r = 0; r < reps; ++r) {
    sc.seed = 12000 + r;
    SyntheticDataset d = generate(sc);
    PipelineConfig pc;
    pc.ranks = sc.ranks;
    pc.seed = sc.seed;
    PipelineResult res = run_pipeline(d.y_obs, d.design, d.z, d.graph, pc);
    for (const auto& e : res.effects)
      rep_bias[r] += (e.theta_aipw - d.theta_true(e.level - 1, e.outcome)) /
                     static_cast<double>(res.effects.size());
  }
  double mean = 0.0, var = 0.0;
  for (double b : rep_bias) mean += b;
  mean /= reps;
  for (double b : rep_bias) var += (b - mean) * (b - mean);
  var /= (reps - 1);
  CHECK(std::abs(mean) <= 2.0 * std::sqrt(var / reps));
}

TEST_CASE("BIC prefers the generator's eigenvector count over distant ones") {
  ScenarioConfig sc;
  sc.confounding = 2.0;
  sc.noise = 0.3;
  sc.eigen_span = 6;  // five informative eigenvectors
  const int reps = 25;
  int wins = 0;
  for (int r = 0; r < reps; ++r) {
    sc.seed = 13000 + r;
    SyntheticDataset d = generate(sc);
    SpectralBasis basis = spectral_basis(d.graph);
    Tensor3 mask = assignment_mask(d.design, d.y_obs.n_outcomes());
    Matrix z1 = with_intercept(d.z);
    long n_obs = static_cast<long>(mask.data().sum() + 0.5);
    auto bic_at = [&](int k) {
      FitConfig cfg;
      cfg.ranks = sc.ranks;
      cfg.select = false;
      cfg.max_iters = 800;
      for (int j = 1; j <= k; ++j) cfg.fixed_eigs.push_back(j);
      SpatialTuckerModel m = spgd_fit(d.y_obs, mask, z1, basis, nullptr, cfg);
      long df = spgd_df(sc.ranks, z1.cols(), k, d.design.n_levels, d.y_obs.n_outcomes());
      return bic_score(m.report.final_objective, n_obs, df);
    };
    double at_true = bic_at(5);
    if (at_true < bic_at(10) && at_true < bic_at(1)) ++wins;
  }
  CHECK(wins >= reps * 8 / 10);
}

TEST_CASE("cross-fitted coverage is no worse than the plain fit's") {
  // small-sample scenario: own-observation optimism in the plain fit is
  // what cross-fitting removes, and it only bites at modest N
  ScenarioConfig sc;
  sc.rows = 10;
  sc.cols = 10;
  sc.n_outcomes = 6;
  sc.confounding = 1.5;
  const int reps = 40;
  long cover_plain = 0, cover_cf = 0, cells = 0;
  for (int r = 0; r < reps; ++r) {
    sc.seed = 14000 + r;
    SyntheticDataset d = generate(sc);
    PipelineConfig pc;
    pc.ranks = sc.ranks;
    pc.seed = sc.seed;
    PipelineResult plain = run_pipeline(d.y_obs, d.design, d.z, d.graph, pc);
    pc.cross_fit_folds = 5;
    PipelineResult cf = run_pipeline(d.y_obs, d.design, d.z, d.graph, pc);
    for (std::size_t i = 0; i < plain.effects.size(); ++i) {
      const auto& ep = plain.effects[i];
      const auto& ec = cf.effects[i];
      double truth = d.theta_true(ep.level - 1, ep.outcome);
      if (ep.ci_low <= truth && truth <= ep.ci_high) ++cover_plain;
      if (ec.ci_low <= truth && truth <= ec.ci_high) ++cover_cf;
      ++cells;
    }
  }
  double plain_rate = static_cast<double>(cover_plain) / cells;
  double cf_rate = static_cast<double>(cover_cf) / cells;
  MESSAGE("coverage plain=" << plain_rate << " cross-fit=" << cf_rate);
  CHECK(cf_rate >= plain_rate - 1e-12);
}

TEST_CASE("no-adjustment bias grows with confounding strength") {
  // replication means of the naive per-outcome regression's absolute bias,
  // swept over the confounding knob
  std::vector<double> gammas{0.0, 0.5, 1.0, 2.0};
  std::vector<double> mean_bias(gammas.size(), 0.0);
  const int reps = 30;
  for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
    ScenarioConfig sc;
    sc.rows = 12;
    sc.cols = 12;
    sc.n_outcomes = 4;
    sc.confounding = gammas[gi];
    sc.noise = 0.3;
    for (int r = 0; r < reps; ++r) {
      sc.seed = 15000 + r;  // paired across gamma values
      SyntheticDataset d = generate(sc);
      auto effects = baseline_regression(d, false);
      double b = 0.0;
      for (const auto& e : effects)
        b += std::abs(e.theta_aipw - d.theta_true(e.level - 1, e.outcome));
      mean_bias[gi] += b / effects.size() / reps;
    }
  }
  MESSAGE("bias by gamma: " << mean_bias[0] << " " << mean_bias[1] << " " << mean_bias[2]
                            << " " << mean_bias[3]);
  for (std::size_t gi = 1; gi < gammas.size(); ++gi)
    CHECK(mean_bias[gi] >= mean_bias[gi - 1] - 0.005);
  CHECK(mean_bias.back() > mean_bias.front());
}
