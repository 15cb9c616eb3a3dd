#include <doctest.h>

#include <cmath>

#include "sctc/rng.hpp"
#include "sctc/spatial.hpp"
#include "sctc/spgd.hpp"

#include "als_oracle.hpp"

using namespace sctc;

namespace {

Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

Tensor3 reconstruct(const Tensor3& core, const Matrix& u1, const Matrix& u2,
                    const Matrix& u3) {
  return mode_product(mode_product(mode_product(core, u1, 1), u2, 2), u3, 3);
}

struct TestProblem {
  Tensor3 y_true, y, mask;
  Matrix z;  // includes intercept
  SpectralBasis basis;
  std::vector<int> true_eigs;
};

// Data drawn from the solver's own model family on a grid graph:
// U1 = Z eta + Phi_sel beta, orthonormal U2/U3, optional noise and MCAR mask.
TestProblem make_problem(int rows, int cols, Index levels, Index outcomes,
                         std::array<Index, 3> ranks, double sigma, double miss_prob,
                         std::uint64_t seed, bool with_eigs) {
  Rng rng(seed);
  TestProblem p;
  SpatialGraph g = grid_graph(rows, cols);
  p.basis = spectral_basis(g);
  const Index n = g.n_nodes;

  p.z = Matrix(n, 4);
  p.z.col(0).setOnes();
  for (Index j = 1; j < 4; ++j)
    for (Index i = 0; i < n; ++i) p.z(i, j) = rng.normal();

  Matrix u1 = p.z * random_matrix(4, ranks[0], rng, 0.6);
  if (with_eigs) {
    p.true_eigs = {1, 2, 3, 4};
    Matrix phi(n, static_cast<Index>(p.true_eigs.size()));
    for (std::size_t j = 0; j < p.true_eigs.size(); ++j)
      phi.col(j) = p.basis.eigenvectors.col(p.true_eigs[j]);
    u1 += phi * random_matrix(static_cast<Index>(p.true_eigs.size()), ranks[0], rng,
                              std::sqrt(static_cast<double>(n)));
  }
  Matrix u2 = random_matrix(levels, ranks[1], rng);
  Matrix u3 = random_matrix(outcomes, ranks[2], rng);
  Tensor3 core(ranks[0], ranks[1], ranks[2]);
  for (Index i = 0; i < core.size(); ++i) core.data()[i] = rng.normal();

  p.y_true = reconstruct(core, u1, u2, u3);
  double rms = std::sqrt(p.y_true.data().squaredNorm() / p.y_true.size());
  p.y_true.data() /= rms;

  p.y = p.y_true;
  p.mask = Tensor3::constant(n, levels, outcomes, 1.0);
  for (Index i = 0; i < p.y.size(); ++i) {
    if (miss_prob > 0.0 && rng.uniform() < miss_prob) {
      p.mask.data()[i] = 0.0;
      p.y.data()[i] = 0.0;
    } else if (sigma > 0.0) {
      p.y.data()[i] += rng.normal(0.0, sigma);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("bic_score arithmetic") {
  CHECK(bic_score(100.0, 100, 7) == doctest::Approx(7.0 * std::log(100.0)).epsilon(1e-12));
  double drop = bic_score(50.0, 200, 5) - bic_score(25.0, 200, 5);
  CHECK(drop == doctest::Approx(200.0 * std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(bic_score(1.0, 5, 5), std::invalid_argument);
  CHECK_THROWS_AS(bic_score(1.0, 5, 0), std::invalid_argument);
  // non-positive rss is clamped, not fatal
  CHECK(std::isfinite(bic_score(0.0, 100, 3)));
}

TEST_CASE("spgd_df counts every parameter block") {
  long df = spgd_df({2, 2, 2}, 4, 3, 4, 10);
  CHECK(df == 8 + 8 + 6 + (4 - 2) * 2 + (10 - 2) * 2);
}

TEST_CASE("analytic block gradients match central finite differences") {
  Rng rng(211);
  const Index n = 18, l = 3, o = 4;
  Tensor3 y(n, l, o);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
  Tensor3 v(n, l, o);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.2, 2.0);
  Matrix x = random_matrix(n, 5, rng);
  std::array<Index, 3> ranks{2, 2, 2};
  Tensor3 core(ranks[0], ranks[1], ranks[2]);
  for (Index i = 0; i < core.size(); ++i) core.data()[i] = rng.normal();
  Matrix gamma = random_matrix(5, ranks[0], rng, 0.5);
  Matrix u2 = random_matrix(l, ranks[1], rng, 0.8);
  Matrix u3 = random_matrix(o, ranks[2], rng, 0.8);

  Tensor3 g_core;
  Matrix g_gamma, g_u2, g_u3;
  spgd_gradients(y, v, x, core, gamma, u2, u3, &g_core, &g_gamma, &g_u2, &g_u3);

  const double h = 1e-5;
  double max_rel = 0.0;
  auto fd_check = [&](double analytic, double plus, double minus) {
    double fd = (plus - minus) / (2.0 * h);
    double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
  };

  for (Index i = 0; i < core.size(); ++i) {
    Tensor3 cp = core, cm = core;
    cp.data()[i] += h;
    cm.data()[i] -= h;
    fd_check(g_core.data()[i], spgd_objective(y, v, x, cp, gamma, u2, u3),
             spgd_objective(y, v, x, cm, gamma, u2, u3));
  }
  for (Index i = 0; i < gamma.size(); ++i) {
    Matrix gp = gamma, gm = gamma;
    gp(i % 5, i / 5) += h;
    gm(i % 5, i / 5) -= h;
    fd_check(g_gamma(i % 5, i / 5), spgd_objective(y, v, x, core, gp, u2, u3),
             spgd_objective(y, v, x, core, gm, u2, u3));
  }
  for (Index i = 0; i < u2.size(); ++i) {
    Matrix up = u2, um = u2;
    up(i % l, i / l) += h;
    um(i % l, i / l) -= h;
    fd_check(g_u2(i % l, i / l), spgd_objective(y, v, x, core, gamma, up, u3),
             spgd_objective(y, v, x, core, gamma, um, u3));
  }
  for (Index i = 0; i < u3.size(); ++i) {
    Matrix up = u3, um = u3;
    up(i % o, i / o) += h;
    um(i % o, i / o) -= h;
    fd_check(g_u3(i % o, i / o), spgd_objective(y, v, x, core, gamma, u2, up),
             spgd_objective(y, v, x, core, gamma, u2, um));
  }
  CHECK(max_rel <= 1e-6);
}

TEST_CASE("exact recovery on fully observed noiseless rank-(1,1,1) data") {
  TestProblem p = make_problem(5, 8, 3, 4, {1, 1, 1}, 0.0, 0.0, 301, false);
  FitConfig cfg;
  cfg.ranks = {1, 1, 1};
  cfg.max_eigs = 0;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  CHECK(m.report.final_objective <= 1e-8);
}

TEST_CASE("unit weights reproduce the unweighted fit trace exactly") {
  TestProblem p = make_problem(5, 8, 3, 4, {2, 2, 2}, 0.1, 0.0, 307, false);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 6;
  cfg.max_iters = 60;
  Tensor3 ones = Tensor3::constant(p.y.n_units(), 3, 4, 1.0);
  // weight support must lie inside the mask
  ones.data() = ones.data().cwiseProduct(p.mask.data());
  SpatialTuckerModel unweighted = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  SpatialTuckerModel weighted = spgd_fit(p.y, p.mask, p.z, p.basis, &ones, cfg);
  REQUIRE(unweighted.report.objective_trace.size() == weighted.report.objective_trace.size());
  for (std::size_t i = 0; i < unweighted.report.objective_trace.size(); ++i)
    CHECK(unweighted.report.objective_trace[i] == weighted.report.objective_trace[i]);
}

TEST_CASE("rescaling all weights leaves the iterates unchanged") {
  TestProblem p = make_problem(5, 8, 3, 4, {2, 2, 2}, 0.1, 0.2, 311, false);
  Rng rng(313);
  Tensor3 w(p.y.n_units(), 3, 4);
  for (Index i = 0; i < w.size(); ++i)
    w.data()[i] = p.mask.data()[i] > 0.5 ? rng.uniform(0.5, 3.0) : 0.0;
  Tensor3 w_scaled = w;
  w_scaled.data() *= 7.5;

  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 5;
  cfg.max_iters = 50;
  SpatialTuckerModel a = spgd_fit(p.y, p.mask, p.z, p.basis, &w, cfg);
  SpatialTuckerModel b = spgd_fit(p.y, p.mask, p.z, p.basis, &w_scaled, cfg);

  CHECK((a.eta_Z - b.eta_Z).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((a.U2 - b.U2).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((a.U3 - b.U3).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((a.core.data() - b.core.data()).cwiseAbs().maxCoeff() <= 1e-10);
  REQUIRE(a.report.objective_trace.size() == b.report.objective_trace.size());
  for (std::size_t i = 0; i < a.report.objective_trace.size(); ++i)
    CHECK(b.report.objective_trace[i] ==
          doctest::Approx(7.5 * a.report.objective_trace[i]).epsilon(1e-10));
}

TEST_CASE("objective trace is non-increasing") {
  TestProblem p = make_problem(6, 8, 4, 5, {2, 2, 2}, 0.2, 0.3, 317, true);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 8;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  const auto& trace = m.report.objective_trace;
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
}

TEST_CASE("MCAR completion error stays small at moderate noise") {
  TestProblem p = make_problem(10, 20, 4, 10, {2, 2, 2}, 0.1, 0.5, 331, true);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 10;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  Tensor3 yhat = predict_full(m, p.z, p.basis);
  double rel = (yhat.data() - p.y_true.data()).norm() / p.y_true.data().norm();
  CHECK(rel <= 0.15);
}

TEST_CASE("k=0 with identity covariates reduces to plain Tucker completion") {
  // fully observed exact-rank data: both routes reconstruct it exactly
  Rng rng(401);
  const Index n = 40, l = 4, o = 6;
  Matrix u1 = random_matrix(n, 2, rng), u2 = random_matrix(l, 2, rng),
         u3 = random_matrix(o, 2, rng);
  Tensor3 core(2, 2, 2);
  for (Index i = 0; i < core.size(); ++i) core.data()[i] = rng.normal();
  Tensor3 y = reconstruct(core, u1, u2, u3);
  Tensor3 mask = Tensor3::constant(n, l, o, 1.0);

  SpatialGraph g = grid_graph(5, 8);
  SpectralBasis basis = spectral_basis(g);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 0;
  cfg.max_iters = 2000;
  SpatialTuckerModel m = spgd_fit(y, mask, Matrix::Identity(n, n), basis, nullptr, cfg);
  Tensor3 yhat = predict_full(m, Matrix::Identity(n, n), basis);

  TuckerFactors h = hosvd(y, {2, 2, 2});
  Tensor3 y_hosvd = tucker_reconstruct(h);
  double spgd_err = (yhat.data() - y.data()).norm() / y.data().norm();
  double hosvd_err = (y_hosvd.data() - y.data()).norm() / y.data().norm();
  CHECK(std::abs(spgd_err - hosvd_err) <= 1e-6);
  CHECK(spgd_err <= 1e-6);
}

TEST_CASE("masked completion agrees with the independent ALS oracle") {
  // exact-rank data with 40% missing: both solvers should recover the truth
  Rng rng(409);
  const Index n = 60, l = 3, o = 5;
  auto random_ortho = [&](Index rows, Index cols) {
    Matrix g = random_matrix(rows, cols, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    return Matrix(qr.householderQ() * Matrix::Identity(rows, cols));
  };
  Matrix u1 = random_matrix(n, 2, rng), u2 = random_ortho(l, 2), u3 = random_ortho(o, 2);
  Tensor3 core(2, 2, 2);
  for (Index i = 0; i < core.size(); ++i) core.data()[i] = rng.normal();
  Tensor3 y_true = reconstruct(core, u1, u2, u3);
  Tensor3 y = y_true;
  Tensor3 mask = Tensor3::constant(n, l, o, 1.0);
  for (Index i = 0; i < y.size(); ++i)
    if (rng.uniform() < 0.4) {
      mask.data()[i] = 0.0;
      y.data()[i] = 0.0;
    }

  Tensor3 oracle = sctc_test::als_complete(y, mask, {2, 2, 2}, 60);
  SpatialGraph g = grid_graph(6, 10);
  SpectralBasis basis = spectral_basis(g);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 0;
  cfg.max_iters = 4000;
  SpatialTuckerModel m = spgd_fit(y, mask, Matrix::Identity(n, n), basis, nullptr, cfg);
  Tensor3 yhat = predict_full(m, Matrix::Identity(n, n), basis);

  double oracle_err = (oracle.data() - y_true.data()).norm() / y_true.data().norm();
  double spgd_err = (yhat.data() - y_true.data()).norm() / y_true.data().norm();
  CHECK(oracle_err <= 1e-6);
  CHECK(spgd_err <= 1e-6);
  CHECK((yhat.data() - oracle.data()).norm() / y_true.data().norm() <= 1e-6);
}

TEST_CASE("selection finds spatial structure on a clean confounded dataset") {
  TestProblem p = make_problem(10, 20, 4, 8, {2, 2, 2}, 0.05, 0.0, 419, true);
  // exposure-style mask: one level per unit
  Rng rng(421);
  Tensor3 mask(p.y.n_units(), 4, 8);
  Tensor3 y = p.y;
  for (Index i = 0; i < p.y.n_units(); ++i) {
    Index keep = rng.index(4);
    for (Index l = 0; l < 4; ++l)
      for (Index o = 0; o < 8; ++o)
        if (l != keep) y(i, l, o) = 0.0;
    for (Index o = 0; o < 8; ++o) mask(i, keep, o) = 1.0;
  }
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 12;
  SpatialTuckerModel m = spgd_fit(y, mask, p.z, p.basis, nullptr, cfg);
  CHECK(m.selected_eigs.size() >= 2);

  // fitted latent component should correlate with the true one
  Matrix shat = m.spatial_component(p.basis.eigenvectors);
  Matrix phi_true(p.y.n_units(), static_cast<Index>(p.true_eigs.size()));
  for (std::size_t j = 0; j < p.true_eigs.size(); ++j)
    phi_true.col(j) = p.basis.eigenvectors.col(p.true_eigs[j]);
  CHECK(shat.cols() == 2);
}

TEST_CASE("selection stays empty on data without spatial structure") {
  TestProblem p = make_problem(8, 10, 3, 5, {2, 2, 2}, 0.1, 0.2, 433, false);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 15;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  CHECK(m.selected_eigs.size() <= 1);
}

TEST_CASE("fits are deterministic") {
  TestProblem p = make_problem(6, 7, 3, 4, {2, 2, 2}, 0.1, 0.25, 439, true);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 6;
  SpatialTuckerModel a = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  SpatialTuckerModel b = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  CHECK((a.core.data() - b.core.data()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.eta_Z - b.eta_Z).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.selected_eigs == b.selected_eigs);
}

TEST_CASE("permuting outcomes permutes U3 rows and leaves predictions aligned") {
  TestProblem p = make_problem(5, 8, 3, 5, {2, 2, 2}, 0.0, 0.0, 443, false);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 0;
  cfg.max_iters = 1500;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  Tensor3 yhat = predict_full(m, p.z, p.basis);

  std::vector<Index> perm{3, 0, 4, 1, 2};
  Tensor3 y_perm(p.y.n_units(), 3, 5);
  for (Index i = 0; i < p.y.n_units(); ++i)
    for (Index l = 0; l < 3; ++l)
      for (Index o = 0; o < 5; ++o) y_perm(i, l, perm[o]) = p.y(i, l, o);
  SpatialTuckerModel mp = spgd_fit(y_perm, p.mask, p.z, p.basis, nullptr, cfg);
  Tensor3 yhat_p = predict_full(mp, p.z, p.basis);

  double max_diff = 0.0;
  for (Index i = 0; i < p.y.n_units(); ++i)
    for (Index l = 0; l < 3; ++l)
      for (Index o = 0; o < 5; ++o)
        max_diff = std::max(max_diff, std::abs(yhat_p(i, l, perm[o]) - yhat(i, l, o)));
  CHECK(max_diff <= 1e-8);
}

TEST_CASE("cross_validate_ranks: singleton grid and fold validity") {
  TestProblem p = make_problem(6, 8, 3, 4, {2, 2, 2}, 0.1, 0.0, 449, false);
  RankGrids grids;
  grids.r1 = {2};
  grids.r2 = {2};
  grids.r3 = {2};
  auto ranks = cross_validate_ranks(p.y, p.mask, p.z, p.basis, grids, 5, 7);
  CHECK(ranks == std::array<Index, 3>{2, 2, 2});
}

TEST_CASE("cross_validate_ranks prefers true ranks over rank one") {
  int wins = 0;
  for (int rep = 0; rep < 5; ++rep) {
    TestProblem p = make_problem(8, 10, 4, 6, {3, 2, 2}, 0.05, 0.4, 457 + rep, false);
    RankGrids grids;
    grids.r1 = {1, 3};
    grids.r2 = {1, 2};
    grids.r3 = {1, 2};
    auto ranks = cross_validate_ranks(p.y, p.mask, p.z, p.basis, grids, 5, 11 + rep);
    if (ranks == std::array<Index, 3>{3, 2, 2}) ++wins;
  }
  CHECK(wins >= 3);
}

TEST_CASE("cross_fit_impute: folds=1 equals the plain fit") {
  TestProblem p = make_problem(6, 8, 3, 4, {2, 2, 2}, 0.1, 0.3, 461, false);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 0;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  Tensor3 plain = predict_full(m, p.z, p.basis);
  Tensor3 cf = cross_fit_impute(p.y, p.mask, p.z, p.basis, nullptr, cfg, 1, 5);
  CHECK((plain.data() - cf.data()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross_fit_impute is deterministic and validates fold sizes") {
  TestProblem p = make_problem(6, 8, 3, 4, {2, 2, 2}, 0.1, 0.0, 463, false);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 0;
  cfg.max_iters = 80;
  Tensor3 a = cross_fit_impute(p.y, p.mask, p.z, p.basis, nullptr, cfg, 4, 99);
  Tensor3 b = cross_fit_impute(p.y, p.mask, p.z, p.basis, nullptr, cfg, 4, 99);
  CHECK((a.data() - b.data()).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(cross_fit_impute(p.y, p.mask, p.z, p.basis, nullptr, cfg, 30, 1),
                  std::runtime_error);
}

TEST_CASE("spgd_fit input validation") {
  TestProblem p = make_problem(4, 5, 3, 4, {2, 2, 2}, 0.1, 0.0, 467, false);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  Tensor3 bad_mask = p.mask;
  bad_mask.data()[0] = 0.5;
  CHECK_THROWS_AS(spgd_fit(p.y, bad_mask, p.z, p.basis, nullptr, cfg), std::invalid_argument);

  Tensor3 empty(p.y.n_units(), 3, 4);
  CHECK_THROWS_AS(spgd_fit(p.y, empty, p.z, p.basis, nullptr, cfg), std::runtime_error);

  Tensor3 bad_w = p.mask;
  bad_w.data()[1] = -1.0;
  CHECK_THROWS_AS(spgd_fit(p.y, p.mask, p.z, p.basis, &bad_w, cfg), std::invalid_argument);

  FitConfig bad_cfg = cfg;
  bad_cfg.ranks = {0, 2, 2};
  CHECK_THROWS_AS(spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, bad_cfg), std::invalid_argument);
}

TEST_CASE("predictions interpolate observed cells of a noiseless exact-rank fit") {
  TestProblem p = make_problem(5, 8, 3, 4, {1, 1, 1}, 0.0, 0.0, 471, false);
  FitConfig cfg;
  cfg.ranks = {1, 1, 1};
  cfg.max_eigs = 0;
  cfg.max_iters = 2000;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  Tensor3 yhat = predict_full(m, p.z, p.basis);
  CHECK((yhat.data() - p.y.data()).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("constant outcomes produce a constant completion") {
  const Index n = 24;
  Tensor3 y = Tensor3::constant(n, 3, 4, 2.75);
  Tensor3 mask = Tensor3::constant(n, 3, 4, 1.0);
  Rng rng(477);
  for (Index i = 0; i < mask.size(); ++i)
    if (rng.uniform() < 0.3) {
      mask.data()[i] = 0.0;
      y.data()[i] = 0.0;
    }
  SpatialGraph g = grid_graph(4, 6);
  SpectralBasis basis = spectral_basis(g);
  FitConfig cfg;
  cfg.ranks = {1, 1, 1};
  cfg.max_eigs = 0;
  cfg.max_iters = 2000;
  Matrix z1 = Matrix::Ones(n, 1);
  SpatialTuckerModel m = spgd_fit(y, mask, z1, basis, nullptr, cfg);
  Tensor3 yhat = predict_full(m, z1, basis);
  CHECK((yhat.data().array() - 2.75).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("counterfactual cells correlate with the truth under MCAR missingness") {
  TestProblem p = make_problem(10, 20, 4, 10, {2, 2, 2}, 0.1, 0.5, 331, true);
  FitConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.max_eigs = 10;
  SpatialTuckerModel m = spgd_fit(p.y, p.mask, p.z, p.basis, nullptr, cfg);
  Tensor3 yhat = predict_full(m, p.z, p.basis);
  double sxy = 0, sxx = 0, syy = 0, sx = 0, sy = 0;
  long cnt = 0;
  for (Index i = 0; i < p.y.size(); ++i) {
    if (p.mask.data()[i] > 0.5) continue;  // unobserved cells only
    double a = yhat.data()[i], b = p.y_true.data()[i];
    sx += a;
    sy += b;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
    ++cnt;
  }
  double corr = (cnt * sxy - sx * sy) /
                std::sqrt((cnt * sxx - sx * sx) * (cnt * syy - sy * sy));
  CHECK(corr >= 0.9);
}

TEST_CASE("cross_validate_ranks refuses splits that empty a slice") {
  // a unit with a single observed cell cannot survive any fold split: its
  // one cell always lands in some held-out fold, so all redraws fail
  const Index n = 12, l = 2, o = 2;
  Tensor3 y(n, l, o);
  Tensor3 mask(n, l, o);
  Rng rng(479);
  for (Index i = 0; i < n; ++i)
    for (Index il = 0; il < l; ++il)
      for (Index io = 0; io < o; ++io) {
        mask(i, il, io) = 1.0;
        y(i, il, io) = rng.normal();
      }
  for (Index il = 0; il < l; ++il)
    for (Index io = 0; io < o; ++io)
      if (!(il == 0 && io == 0)) mask(0, il, io) = 0.0;  // unit 0: one cell

  SpatialGraph g = grid_graph(3, 4);
  SpectralBasis basis = spectral_basis(g);
  RankGrids grids;
  grids.r1 = {1};
  grids.r2 = {1};
  grids.r3 = {1};
  CHECK_THROWS_WITH_AS(
      cross_validate_ranks(y, mask, Matrix::Ones(n, 1), basis, grids, 5, 3),
      doctest::Contains("fold"), std::runtime_error);
}
