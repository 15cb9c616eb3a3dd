#include "sctc/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sctc/common.hpp"

namespace sctc {

double normal_quantile(double p) {
  check(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");

  // Acklam's rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;

  double x;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // One Halley step against the exact CDF brings the error near machine eps.
  double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

std::pair<double, double> confidence_interval(double theta, double v, long n, double alpha) {
  check(v >= 0.0, "confidence_interval: variance must be >= 0");
  check(n >= 1, "confidence_interval: n must be >= 1");
  check(alpha > 0.0 && alpha <= 1.0, "confidence_interval: alpha must lie in (0, 1]");
  double z = alpha >= 1.0 ? 0.0 : normal_quantile(1.0 - alpha / 2.0);
  double half = z * std::sqrt(v / static_cast<double>(n));
  return {theta - half, theta + half};
}

double influence_variance(const Vector& centered) {
  check(centered.size() >= 2, "influence_variance: need at least two units");
  return centered.squaredNorm() / static_cast<double>(centered.size());
}

Matrix observed_matrix(const Tensor3& y, const ExposureDesign& design) {
  check(design.n_units() == y.n_units(), "observed_matrix: unit counts differ");
  check(design.n_levels == y.n_levels(), "observed_matrix: level counts differ");
  Matrix out(y.n_units(), y.n_outcomes());
  for (Index i = 0; i < y.n_units(); ++i) {
    int l = design.assignments[i] - 1;
    for (Index o = 0; o < y.n_outcomes(); ++o) out(i, o) = y(i, l, o);
  }
  return out;
}

namespace {

void check_contrast(const Tensor3& yhat, int level, int ref, int outcome) {
  check(level >= 1 && level <= yhat.n_levels(), "effect: level out of range");
  check(ref >= 1 && ref <= yhat.n_levels(), "effect: reference level out of range");
  check(level != ref, "effect: level must differ from the reference level");
  check(outcome >= 0 && outcome < yhat.n_outcomes(), "effect: outcome out of range");
}

}  // namespace

double oi_estimate(const Tensor3& yhat, int level, int ref, int outcome) {
  check_contrast(yhat, level, ref, outcome);
  Vector diff(yhat.n_units());
  for (Index i = 0; i < yhat.n_units(); ++i)
    diff[i] = yhat(i, level - 1, outcome) - yhat(i, ref - 1, outcome);
  return diff.mean();
}

Tensor3 aipw_scores(const Matrix& y_obs, const Tensor3& yhat, const Matrix& probs,
                    const ExposureDesign& design, double floor) {
  check(floor > 0.0 && floor < 0.5, "aipw_scores: floor must lie in (0, 0.5)");
  check(y_obs.rows() == yhat.n_units() && y_obs.cols() == yhat.n_outcomes(),
        "aipw_scores: observed matrix shape mismatch");
  check(probs.rows() == yhat.n_units() && probs.cols() == yhat.n_levels(),
        "aipw_scores: probs shape mismatch");
  check(design.n_units() == yhat.n_units(), "aipw_scores: design size mismatch");

  Tensor3 m = yhat;
  for (Index i = 0; i < yhat.n_units(); ++i) {
    int l = design.assignments[i] - 1;
    double p = std::max(probs(i, l), floor);
    for (Index o = 0; o < yhat.n_outcomes(); ++o)
      m(i, l, o) += (y_obs(i, o) - yhat(i, l, o)) / p;
  }
  return m;
}

namespace {

EffectEstimate contrast_from_scores(const Tensor3& scores, const Tensor3& yhat, int level,
                                    int ref, int outcome, double alpha,
                                    Vector* contributions) {
  check_contrast(yhat, level, ref, outcome);
  const Index n = yhat.n_units();
  Vector psi(n);
  for (Index i = 0; i < n; ++i)
    psi[i] = scores(i, level - 1, outcome) - scores(i, ref - 1, outcome);

  EffectEstimate e;
  e.level = level;
  e.reference = ref;
  e.outcome = outcome;
  e.n_units = n;
  e.theta_aipw = psi.mean();
  e.theta_oi = oi_estimate(yhat, level, ref, outcome);
  Vector centered = psi.array() - e.theta_aipw;
  e.variance = influence_variance(centered);
  std::tie(e.ci_low, e.ci_high) = confidence_interval(e.theta_aipw, e.variance, n, alpha);
  if (contributions) *contributions = std::move(centered);
  return e;
}

}  // namespace

EffectEstimate aipw_estimate(const Matrix& y_obs, const Tensor3& yhat, const Matrix& probs,
                             const ExposureDesign& design, int level, int ref, int outcome,
                             double floor, double alpha, Vector* contributions) {
  Tensor3 scores = aipw_scores(y_obs, yhat, probs, design, floor);
  return contrast_from_scores(scores, yhat, level, ref, outcome, alpha, contributions);
}

EffectEstimate marginal_effect(const Tensor3& scores, const Tensor3& yhat,
                               const ExposureDesign& design, int exposure, int outcome,
                               double alpha, bool uniform_weights) {
  const int k = design.n_exposures;
  check(exposure >= 1 && exposure <= k, "marginal_effect: exposure index out of range");
  check(outcome >= 0 && outcome < yhat.n_outcomes(), "marginal_effect: outcome out of range");
  check(design.n_levels == yhat.n_levels(), "marginal_effect: level counts differ");

  const Index n = yhat.n_units();
  const int n_patterns = 1 << (k - 1);

  // Frequency of each pattern of the other exposures.
  std::vector<double> w(n_patterns, uniform_weights ? 1.0 / n_patterns : 0.0);
  if (!uniform_weights) {
    for (Index i = 0; i < n; ++i) {
      std::vector<int> bits = decode_level(design.assignments[i], k);
      int pattern = 0, pos = 0;
      for (int j = 0; j < k; ++j)
        if (j != exposure - 1) pattern |= bits[j] << pos++;
      w[pattern] += 1.0 / static_cast<double>(n);
    }
  }

  // Levels with the target exposure switched on/off for each pattern.
  auto level_of = [&](int pattern, int on) {
    int lvl = 1, pos = 0;
    for (int j = 0; j < k; ++j) {
      int bit = (j == exposure - 1) ? on : ((pattern >> pos++) & 1);
      lvl += bit << j;
    }
    return lvl;
  };

  Vector psi = Vector::Zero(n);
  double oi = 0.0;
  for (int p = 0; p < n_patterns; ++p) {
    if (w[p] == 0.0) continue;
    int on = level_of(p, 1), off = level_of(p, 0);
    for (Index i = 0; i < n; ++i)
      psi[i] += w[p] * (scores(i, on - 1, outcome) - scores(i, off - 1, outcome));
    oi += w[p] * oi_estimate(yhat, on, off, outcome);
  }

  EffectEstimate e;
  e.level = exposure;
  e.reference = 0;
  e.outcome = outcome;
  e.n_units = n;
  e.theta_aipw = psi.mean();
  e.theta_oi = oi;
  Vector centered = psi.array() - e.theta_aipw;
  e.variance = influence_variance(centered);
  std::tie(e.ci_low, e.ci_high) = confidence_interval(e.theta_aipw, e.variance, n, alpha);
  return e;
}

std::pair<Matrix, TransformRecord> preprocess_outcomes(const Matrix& raw,
                                                       const std::string& transform,
                                                       double shift,
                                                       const std::vector<std::string>* names) {
  check(transform == "none" || transform == "log" || transform == "logit",
        "preprocess_outcomes: transform must be none, log or logit");
  check(shift >= 0.0, "preprocess_outcomes: shift must be >= 0");
  check(raw.allFinite(), "preprocess_outcomes: raw outcomes must be finite");

  auto column_name = [&](Index j) {
    return (names && j < static_cast<Index>(names->size())) ? (*names)[j]
                                                            : "column " + std::to_string(j + 1);
  };

  Matrix t(raw.rows(), raw.cols());
  std::string bad;
  for (Index j = 0; j < raw.cols(); ++j) {
    bool ok = true;
    for (Index i = 0; i < raw.rows(); ++i) {
      double x = raw(i, j) + shift;
      if (transform == "log") {
        if (x <= 0.0) {
          ok = false;
          break;
        }
        t(i, j) = std::log(x);
      } else if (transform == "logit") {
        double p = x / 100.0;
        if (p <= 0.0 || p >= 1.0) {
          ok = false;
          break;
        }
        t(i, j) = std::log(p / (1.0 - p));
      } else {
        t(i, j) = x;
      }
    }
    if (!ok) bad += (bad.empty() ? "" : ", ") + column_name(j);
  }
  require(bad.empty(), "preprocess_outcomes: transform domain violated for: " + bad);

  TransformRecord rec;
  rec.transform = transform;
  rec.shift = shift;
  rec.mean = t.mean();
  double var = (t.array() - rec.mean).square().mean();
  rec.sd = var > 0.0 ? std::sqrt(var) : 1.0;
  Matrix out = (t.array() - rec.mean) / rec.sd;
  return {std::move(out), rec};
}

Matrix inverse_preprocess(const Matrix& transformed, const TransformRecord& rec) {
  Matrix t = transformed.array() * rec.sd + rec.mean;
  if (rec.transform == "log") return t.array().exp() - rec.shift;
  if (rec.transform == "logit")
    return 100.0 / (1.0 + (-t.array()).exp()) - rec.shift;
  return t.array() - rec.shift;
}

double effect_to_ratio(double theta, const TransformRecord& rec) {
  return std::exp(theta * rec.sd);
}

std::string ratio_label(const TransformRecord& rec) {
  if (rec.transform == "logit") return "odds_ratio";
  if (rec.transform == "log") return "rate_ratio";
  return "exp_effect";
}

namespace {

// Column standardization for propensity features; near-constant columns are
// zeroed out rather than divided by a vanishing sd.
Matrix standardize_columns(const Matrix& m) {
  Matrix out = m;
  for (Index j = 0; j < m.cols(); ++j) {
    double mean = m.col(j).mean();
    double sd = std::sqrt((m.col(j).array() - mean).square().mean());
    if (sd > 1e-12)
      out.col(j) = (m.col(j).array() - mean) / sd;
    else
      out.col(j).setZero();
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(const Tensor3& y, const ExposureDesign& design, const Matrix& z,
                            const SpatialGraph& graph, const PipelineConfig& config) {
  const Index n = y.n_units(), n_outcomes = y.n_outcomes();
  check(design.n_units() == n, "run_pipeline: design size must match Y units");
  check(design.n_levels == y.n_levels(), "run_pipeline: design levels must match Y");
  check(z.rows() == n, "run_pipeline: Z rows must match Y units");
  check(graph.n_nodes == n, "run_pipeline: graph nodes must match Y units");
  check(config.reference_level >= 1 && config.reference_level <= design.n_levels,
        "run_pipeline: reference level out of range");

  SpectralBasis basis = spectral_basis(graph);
  Tensor3 mask = assignment_mask(design, n_outcomes);

  Matrix z1(n, z.cols() + 1);
  z1.col(0).setOnes();
  z1.rightCols(z.cols()) = z;

  PipelineResult result;
  result.ranks_used = config.ranks
                          ? *config.ranks
                          : cross_validate_ranks(y, mask, z1, basis, config.grids,
                                                 config.cv_folds, config.seed, config.cv);

  // Step 1: unweighted fit with stepwise spectral adjustment.
  FitConfig fit1 = config.fit;
  fit1.ranks = result.ranks_used;
  fit1.seed = config.seed;
  result.step1 = spgd_fit(y, mask, z1, basis, nullptr, fit1);

  // Step 2: propensities on measured covariates plus selected eigenvectors.
  const auto& eigs = result.step1.selected_eigs;
  Matrix features(n, z.cols() + static_cast<Index>(eigs.size()));
  features.leftCols(z.cols()) = z;
  for (std::size_t j = 0; j < eigs.size(); ++j)
    features.col(z.cols() + static_cast<Index>(j)) = basis.eigenvectors.col(eigs[j]);
  Matrix features_std = standardize_columns(features);

  result.propensity = fit_multinomial(features_std, design, config.propensity_ridge);
  result.propensity_probs = predict_probs(result.propensity, features_std);
  result.weights = ipw_weights(result.propensity_probs, design, config.propensity_floor,
                               n_outcomes, &result.weights_truncated);
  result.overlap = overlap_diagnostics(result.propensity_probs, design);

  // Step 3: weighted refit, warm-started from step 1's eigenvector set.
  FitConfig fit3 = fit1;
  fit3.fixed_eigs = eigs;
  fit3.select = config.rerun_selection_step3;
  result.step3 = spgd_fit(y, mask, z1, basis, &result.weights, fit3);
  if (config.cross_fit_folds > 1) {
    result.yhat = cross_fit_impute(y, mask, z1, basis, &result.weights, fit3,
                                   config.cross_fit_folds, config.seed + 1);
  } else {
    result.yhat = predict_full(result.step3, z1, basis);
  }

  Matrix y_obs = observed_matrix(y, design);
  result.scores = aipw_scores(y_obs, result.yhat, result.propensity_probs, design,
                              config.propensity_floor);

  for (int level = 1; level <= design.n_levels; ++level) {
    if (level == config.reference_level) continue;
    for (Index o = 0; o < n_outcomes; ++o)
      result.effects.push_back(contrast_from_scores(result.scores, result.yhat, level,
                                                    config.reference_level,
                                                    static_cast<int>(o), config.alpha,
                                                    nullptr));
  }
  for (int e = 1; e <= design.n_exposures; ++e)
    for (Index o = 0; o < n_outcomes; ++o)
      result.marginals.push_back(marginal_effect(result.scores, result.yhat, design, e,
                                                 static_cast<int>(o), config.alpha,
                                                 config.marginal_uniform_weights));
  return result;
}

}  // namespace sctc
