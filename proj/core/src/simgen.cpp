#include "sctc/simgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>

#include "sctc/common.hpp"
#include "sctc/parallel.hpp"
#include "sctc/rng.hpp"

namespace sctc {

namespace {

Matrix random_orthonormal(Index rows, Index cols, Rng& rng) {
  Matrix g(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

// Smallest propensity over units and levels for slope scale t.
double min_propensity(const Matrix& linpred, double t) {
  double mn = 1.0;
  const Index n = linpred.rows(), lm1 = linpred.cols();
  for (Index i = 0; i < n; ++i) {
    double mx = 0.0;
    for (Index c = 0; c < lm1; ++c) mx = std::max(mx, t * linpred(i, c));
    double denom = std::exp(-mx);
    for (Index c = 0; c < lm1; ++c) denom += std::exp(t * linpred(i, c) - mx);
    for (Index c = 0; c < lm1; ++c) mn = std::min(mn, std::exp(t * linpred(i, c) - mx) / denom);
    mn = std::min(mn, std::exp(-mx) / denom);
  }
  return mn;
}

Matrix propensity_matrix(const Matrix& linpred, double t) {
  const Index n = linpred.rows(), lm1 = linpred.cols();
  Matrix probs(n, lm1 + 1);
  for (Index i = 0; i < n; ++i) {
    double mx = 0.0;
    for (Index c = 0; c < lm1; ++c) mx = std::max(mx, t * linpred(i, c));
    double denom = std::exp(-mx);
    for (Index c = 0; c < lm1; ++c) denom += std::exp(t * linpred(i, c) - mx);
    for (Index c = 0; c < lm1; ++c) probs(i, c) = std::exp(t * linpred(i, c) - mx) / denom;
    probs(i, lm1) = std::exp(-mx) / denom;
  }
  return probs;
}

}  // namespace

SyntheticDataset generate(const ScenarioConfig& c) {
  check(c.rows >= 2 && c.cols >= 2, "generate: grid must be at least 2x2");
  check(c.n_exposures >= 1 && c.n_exposures <= 6, "generate: exposures must be in [1, 6]");
  check(c.n_outcomes >= 1, "generate: need at least one outcome");
  check(c.confounding >= 0.0 && c.noise >= 0.0, "generate: confounding and noise must be >= 0");
  check(c.overlap > 0.0 && c.overlap < 0.5, "generate: overlap must lie in (0, 0.5)");
  check(c.n_covariates >= 1, "generate: need at least one covariate");
  check(c.decay > 0.0, "generate: decay must be positive");
  check(c.noise_kind == "gaussian" || c.noise_kind == "uniform",
        "generate: noise_kind must be gaussian or uniform");

  const Index n = static_cast<Index>(c.rows) * c.cols;
  const int levels = 1 << c.n_exposures;
  const Index o = c.n_outcomes;
  const auto [r1, r2, r3] = c.ranks;
  check(r1 >= 1 && r1 <= n && r2 >= 1 && r2 <= levels && r3 >= 1 && r3 <= o,
        "generate: ranks out of range for the scenario dims");
  check(c.eigen_span >= 2 && c.eigen_span <= n, "generate: eigen_span must lie in [2, N]");

  SyntheticDataset data;
  data.config = c;
  data.graph = grid_graph(c.rows, c.cols);
  data.centroids = *data.graph.centroids;
  SpectralBasis basis = spectral_basis(data.graph);

  Rng rng(c.seed);

  // Latent smooth confounder: decaying coefficients on low-frequency
  // eigenvectors (the trivial direction excluded), scaled to unit rms.
  Vector s = Vector::Zero(n);
  for (int j = 2; j <= c.eigen_span; ++j)
    s += std::pow(static_cast<double>(j), -c.decay) * rng.normal() *
         basis.eigenvectors.col(j - 1);
  double rms = std::sqrt(s.squaredNorm() / static_cast<double>(n));
  if (rms > 0.0) s /= rms;
  data.confounder = s;

  // Measured covariates.
  data.z.resize(n, c.n_covariates);
  for (Index j = 0; j < c.n_covariates; ++j)
    for (Index i = 0; i < n; ++i) data.z(i, j) = rng.normal();
  Matrix z1(n, c.n_covariates + 1);
  z1.col(0).setOnes();
  z1.rightCols(c.n_covariates) = data.z;

  // Unit factor: measured part plus the confounder loading, with loadings
  // bounded away from zero so every factor column carries the confounder.
  Matrix eta_z(z1.cols(), r1);
  for (Index j = 0; j < r1; ++j)
    for (Index i = 0; i < z1.cols(); ++i) eta_z(i, j) = 0.7 * rng.normal();
  Vector eta_s(r1);
  for (Index j = 0; j < r1; ++j) {
    double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    eta_s[j] = sign * (0.5 + rng.uniform());
  }
  Matrix u1 = z1 * eta_z + c.confounding * s * eta_s.transpose();

  Matrix u2;
  if (c.null_effects) {
    // Identical rows: the outcome surface ignores the exposure level.
    Vector q(r2);
    for (Index j = 0; j < r2; ++j) q[j] = rng.normal();
    q.normalize();
    u2 = Vector::Ones(levels) * q.transpose();
  } else {
    u2 = random_orthonormal(levels, r2, rng);
  }
  Matrix u3 = random_orthonormal(o, r3, rng);

  Tensor3 core(r1, r2, r3);
  for (Index i = 0; i < core.size(); ++i) core.data()[i] = rng.normal();

  TuckerFactors f{core, u1, u2, u3};
  data.y_true = tucker_reconstruct(f);
  double y_rms = std::sqrt(data.y_true.data().squaredNorm() /
                           static_cast<double>(data.y_true.size()));
  if (y_rms > 0.0) data.y_true.data() /= y_rms;

  // True propensities: multinomial logit on (Z, confounding * s), slopes
  // rescaled so the smallest propensity is close to the overlap target.
  Matrix pf(n, c.n_covariates + 1);
  pf.leftCols(c.n_covariates) = data.z;
  pf.col(c.n_covariates) = c.confounding * s;
  Matrix slopes(pf.cols(), levels - 1);
  for (Index j = 0; j < slopes.cols(); ++j)
    for (Index i = 0; i < slopes.rows(); ++i) slopes(i, j) = rng.normal();
  Matrix linpred = pf * slopes;  // N x (L-1); baseline level L has score 0

  double t = 0.0;
  if (c.overlap < 1.0 / levels) {
    double hi = 1.0;
    while (min_propensity(linpred, hi) > c.overlap && hi < 1e6) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      if (min_propensity(linpred, mid) > c.overlap)
        lo = mid;
      else
        hi = mid;
    }
    t = 0.5 * (lo + hi);
  }
  data.propensities = propensity_matrix(linpred, t);

  // Assignments and the observed tensor.
  data.design.n_exposures = c.n_exposures;
  data.design.n_levels = levels;
  data.design.reference_level = 1;
  data.design.assignments.resize(n);
  std::vector<double> row(levels);
  for (Index i = 0; i < n; ++i) {
    for (int l = 0; l < levels; ++l) row[l] = data.propensities(i, l);
    data.design.assignments[i] = static_cast<int>(rng.categorical(row)) + 1;
  }

  const double half_width = c.noise * std::sqrt(3.0);
  data.y_obs = Tensor3(n, levels, o);
  for (Index i = 0; i < n; ++i) {
    int l = data.design.assignments[i] - 1;
    for (Index oo = 0; oo < o; ++oo) {
      double eps = c.noise_kind == "gaussian" ? rng.normal(0.0, c.noise)
                                              : rng.uniform(-half_width, half_width);
      data.y_obs(i, l, oo) = data.y_true(i, l, oo) + eps;
    }
  }

  data.theta_true.resize(levels, o);
  for (int l = 1; l <= levels; ++l)
    for (Index oo = 0; oo < o; ++oo) {
      double total = 0.0;
      for (Index i = 0; i < n; ++i)
        total += data.y_true(i, l - 1, oo) - data.y_true(i, 0, oo);
      data.theta_true(l - 1, oo) = total / static_cast<double>(n);
    }
  return data;
}

double true_ate(const SyntheticDataset& data, int level, int ref, int outcome) {
  check(level >= 1 && level <= data.design.n_levels, "true_ate: level out of range");
  check(ref >= 1 && ref <= data.design.n_levels, "true_ate: reference out of range");
  check(outcome >= 0 && outcome < data.y_true.n_outcomes(), "true_ate: outcome out of range");
  double total = 0.0;
  for (Index i = 0; i < data.y_true.n_units(); ++i)
    total += data.y_true(i, level - 1, outcome) - data.y_true(i, ref - 1, outcome);
  return total / static_cast<double>(data.y_true.n_units());
}

std::vector<EffectEstimate> baseline_regression(const SyntheticDataset& data,
                                                const BaselineOptions& options,
                                                const SpectralBasis* basis_in,
                                                bool* ridge_fallback_used) {
  const Index n = data.y_obs.n_units(), o = data.y_obs.n_outcomes();
  const int levels = data.design.n_levels;
  const int ref = options.reference_level;
  check(ref >= 1 && ref <= levels, "baseline_regression: reference level out of range");

  SpectralBasis local;
  const SpectralBasis* basis = basis_in;
  if (!basis && (options.spatial_outcome || options.spatial_propensity)) {
    local = spectral_basis(data.graph);
    basis = &local;
  }
  int n_eigs = 0;
  if (options.spatial_outcome || options.spatial_propensity)
    n_eigs = std::min<int>(options.n_eigs, static_cast<int>(basis->size()) - 1);

  // Outcome model: intercept, level dummies (reference omitted), covariates,
  // leading eigenvectors when spatial.
  const Index p = data.z.cols();
  const Index out_eigs = options.spatial_outcome ? n_eigs : 0;
  Matrix d(n, 1 + (levels - 1) + p + out_eigs);
  d.col(0).setOnes();
  d.block(0, 1, n, levels - 1).setZero();
  for (Index i = 0; i < n; ++i) {
    int l = data.design.assignments[i];
    if (l != ref) {
      int pos = l < ref ? l - 1 : l - 2;  // dummy order: levels skipping ref
      d(i, 1 + pos) = 1.0;
    }
  }
  d.block(0, levels, n, p) = data.z;
  for (Index j = 0; j < out_eigs; ++j)
    d.col(levels + p + j) = basis->eigenvectors.col(j + 1);

  Matrix y_obs = observed_matrix(data.y_obs, data.design);

  Eigen::ColPivHouseholderQR<Matrix> qr(d);
  bool fallback = qr.rank() < d.cols();
  if (ridge_fallback_used) *ridge_fallback_used = fallback;
  Matrix coef(d.cols(), o);
  if (!fallback) {
    coef = qr.solve(y_obs);
  } else {
    std::cerr << "baseline_regression: rank-deficient design, using ridge fallback\n";
    Matrix gram = d.transpose() * d;
    gram.diagonal().array() += options.ridge_fallback;
    coef = gram.ldlt().solve(d.transpose() * y_obs);
  }

  // Predictions at every level: swap the dummy block, keep the rest.
  Tensor3 yhat(n, levels, o);
  Matrix base = d;
  for (int l = 1; l <= levels; ++l) {
    base.block(0, 1, n, levels - 1).setZero();
    if (l != ref) {
      int pos = l < ref ? l - 1 : l - 2;
      base.col(1 + pos).setOnes();
    }
    Matrix pred = base * coef;
    for (Index i = 0; i < n; ++i)
      for (Index oo = 0; oo < o; ++oo) yhat(i, l - 1, oo) = pred(i, oo);
  }

  // Propensity model.
  const Index ps_eigs = options.spatial_propensity ? n_eigs : 0;
  Matrix pf(n, p + ps_eigs);
  pf.leftCols(p) = data.z;
  for (Index j = 0; j < ps_eigs; ++j) pf.col(p + j) = basis->eigenvectors.col(j + 1);
  Matrix pf_std = pf;
  for (Index j = 0; j < pf.cols(); ++j) {
    double mean = pf.col(j).mean();
    double sd = std::sqrt((pf.col(j).array() - mean).square().mean());
    if (sd > 1e-12)
      pf_std.col(j) = (pf.col(j).array() - mean) / sd;
    else
      pf_std.col(j).setZero();
  }
  PropensityModel pm = fit_multinomial(pf_std, data.design, options.propensity_ridge);
  Matrix probs = predict_probs(pm, pf_std);

  Tensor3 scores = aipw_scores(y_obs, yhat, probs, data.design, options.floor);
  std::vector<EffectEstimate> effects;
  for (int l = 1; l <= levels; ++l) {
    if (l == ref) continue;
    for (Index oo = 0; oo < o; ++oo)
      effects.push_back(aipw_estimate(y_obs, yhat, probs, data.design, l, ref,
                                      static_cast<int>(oo), options.floor, options.alpha));
  }
  return effects;
}

std::vector<EffectEstimate> baseline_regression(const SyntheticDataset& data, bool spatial) {
  BaselineOptions opt;
  opt.spatial_outcome = spatial;
  opt.spatial_propensity = spatial;
  return baseline_regression(data, opt);
}

BenchmarkResult run_benchmark(const BenchmarkConfig& config) {
  check(config.replications >= 1, "run_benchmark: replications must be >= 1");
  for (const auto& m : config.methods)
    check(m == "oracle" || m == "spatial_tensor" || m == "tensor" || m == "spatial_ps" ||
              m == "regression",
          "run_benchmark: unknown method " + m);

  const int levels = 1 << config.scenario.n_exposures;
  const int o = config.scenario.n_outcomes;
  const int n_cells = (levels - 1) * o;
  const std::size_t n_methods = config.methods.size();
  const std::size_t reps = static_cast<std::size_t>(config.replications);

  struct RepResult {
    // per method: theta / ci_low / ci_high per cell; ok flag; seconds
    std::vector<std::vector<double>> theta, lo, hi;
    std::vector<char> ok;
    std::vector<double> seconds;
    std::vector<double> truth;  // per cell
  };
  std::vector<RepResult> results(reps);

  parallel_for(
      reps,
      [&](std::size_t r) {
        RepResult& out = results[r];
        out.theta.assign(n_methods, std::vector<double>(n_cells, 0.0));
        out.lo = out.theta;
        out.hi = out.theta;
        out.ok.assign(n_methods, 0);
        out.seconds.assign(n_methods, 0.0);
        out.truth.assign(n_cells, 0.0);

        ScenarioConfig sc = config.scenario;
        sc.seed = config.scenario.seed + static_cast<std::uint64_t>(r);
        SyntheticDataset data = generate(sc);
        SpectralBasis basis = spectral_basis(data.graph);

        int cell = 0;
        for (int l = 2; l <= levels; ++l)
          for (int oo = 0; oo < o; ++oo) out.truth[cell++] = data.theta_true(l - 1, oo);

        auto record = [&](std::size_t mi, const std::vector<EffectEstimate>& effects) {
          check(static_cast<int>(effects.size()) == n_cells,
                "run_benchmark: unexpected effect table size");
          for (int cidx = 0; cidx < n_cells; ++cidx) {
            out.theta[mi][cidx] = effects[cidx].theta_aipw;
            out.lo[mi][cidx] = effects[cidx].ci_low;
            out.hi[mi][cidx] = effects[cidx].ci_high;
          }
          out.ok[mi] = 1;
        };

        for (std::size_t mi = 0; mi < n_methods; ++mi) {
          const std::string& m = config.methods[mi];
          auto start = std::chrono::steady_clock::now();
          try {
            if (m == "oracle") {
              int cidx = 0;
              for (int l = 2; l <= levels; ++l)
                for (int oo = 0; oo < o; ++oo) {
                  out.theta[mi][cidx] = data.theta_true(l - 1, oo);
                  out.lo[mi][cidx] = out.theta[mi][cidx];
                  out.hi[mi][cidx] = out.theta[mi][cidx];
                  ++cidx;
                }
              out.ok[mi] = 1;
            } else if (m == "spatial_tensor" || m == "tensor") {
              PipelineConfig pc = config.pipeline;
              if (!pc.ranks) pc.ranks = sc.ranks;
              pc.seed = sc.seed;
              pc.reference_level = 1;
              if (m == "tensor") pc.fit.max_eigs = 0;
              PipelineResult pr = run_pipeline(data.y_obs, data.design, data.z, data.graph, pc);
              record(mi, pr.effects);
            } else {
              BaselineOptions bo = config.baseline;
              bo.reference_level = 1;
              bo.spatial_outcome = false;
              bo.spatial_propensity = (m == "spatial_ps");
              record(mi, baseline_regression(data, bo, &basis));
            }
          } catch (const std::exception&) {
            out.ok[mi] = 0;
          }
          out.seconds[mi] =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
      },
      config.workers);

  BenchmarkResult res;
  res.replications = config.replications;
  for (std::size_t mi = 0; mi < n_methods; ++mi) {
    const std::string& m = config.methods[mi];
    double secs = 0.0;
    long fails = 0;
    for (const auto& rep : results) {
      secs += rep.seconds[mi];
      if (!rep.ok[mi]) ++fails;
    }
    res.wall_seconds[m] = secs;
    res.failures[m] = fails;

    int cidx = 0;
    for (int l = 2; l <= levels; ++l)
      for (int oo = 0; oo < o; ++oo) {
        MetricCell cell;
        cell.method = m;
        cell.level = l;
        cell.outcome = oo;
        double bias = 0.0, mse = 0.0, cover = 0.0, width = 0.0;
        long ok = 0;
        for (const auto& rep : results) {
          if (!rep.ok[mi]) continue;
          double err = rep.theta[mi][cidx] - rep.truth[cidx];
          bias += err;
          mse += err * err;
          cover += (rep.lo[mi][cidx] <= rep.truth[cidx] && rep.truth[cidx] <= rep.hi[mi][cidx])
                       ? 1.0
                       : 0.0;
          width += rep.hi[mi][cidx] - rep.lo[mi][cidx];
          ++ok;
        }
        cell.n_ok = ok;
        if (ok > 0) {
          cell.mean_bias = bias / ok;
          cell.mse = mse / ok;
          cell.coverage = cover / ok;
          cell.mean_ci_width = width / ok;
        } else {
          cell.mean_bias = cell.mse = cell.coverage = cell.mean_ci_width =
              std::numeric_limits<double>::quiet_NaN();
        }
        res.cells.push_back(std::move(cell));
        ++cidx;
      }
  }
  return res;
}

}  // namespace sctc
