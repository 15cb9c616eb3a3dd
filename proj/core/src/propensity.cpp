#include "sctc/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sctc/common.hpp"

namespace sctc {

ExposureDesign encode_levels(const Eigen::MatrixXi& binary) {
  const Index n = binary.rows();
  const int k = static_cast<int>(binary.cols());
  check(n >= 1 && k >= 1, "encode_levels: need at least one unit and one exposure");
  check(k <= 20, "encode_levels: more than 20 binary exposures is not supported");

  ExposureDesign d;
  d.n_exposures = k;
  d.n_levels = 1 << k;
  d.assignments.resize(n);
  for (Index i = 0; i < n; ++i) {
    int level = 1;
    for (int j = 0; j < k; ++j) {
      int a = binary(i, j);
      check(a == 0 || a == 1, "encode_levels: entries must be 0 or 1 (unit " +
                                  std::to_string(i) + ", exposure " + std::to_string(j + 1) + ")");
      level += a << j;
    }
    d.assignments[i] = level;
  }
  return d;
}

std::vector<int> decode_level(int level, int k_exposures) {
  check(k_exposures >= 1, "decode_level: k must be >= 1");
  check(level >= 1 && level <= (1 << k_exposures), "decode_level: level out of range");
  std::vector<int> a(k_exposures);
  int bits = level - 1;
  for (int j = 0; j < k_exposures; ++j) a[j] = (bits >> j) & 1;
  return a;
}

Tensor3 assignment_mask(const ExposureDesign& d, Index n_outcomes) {
  check(n_outcomes >= 1, "assignment_mask: n_outcomes must be >= 1");
  Tensor3 mask(d.n_units(), d.n_levels, n_outcomes);
  for (Index i = 0; i < d.n_units(); ++i) {
    int level = d.assignments[i];
    check(level >= 1 && level <= d.n_levels, "assignment_mask: assignment out of range");
    for (Index o = 0; o < n_outcomes; ++o) mask(i, level - 1, o) = 1.0;
  }
  return mask;
}

namespace {

// Stable softmax over [scores | 0] rows; returns N x L probabilities with the
// baseline class last.
Matrix softmax_with_baseline(const Matrix& scores) {
  const Index n = scores.rows(), lm1 = scores.cols();
  Matrix probs(n, lm1 + 1);
  for (Index i = 0; i < n; ++i) {
    double mx = 0.0;  // baseline score
    for (Index c = 0; c < lm1; ++c) mx = std::max(mx, scores(i, c));
    double denom = std::exp(-mx);
    for (Index c = 0; c < lm1; ++c) denom += std::exp(scores(i, c) - mx);
    for (Index c = 0; c < lm1; ++c) probs(i, c) = std::exp(scores(i, c) - mx) / denom;
    probs(i, lm1) = std::exp(-mx) / denom;
  }
  return probs;
}

Matrix with_intercept(const Matrix& features) {
  Matrix x(features.rows(), features.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(features.cols()) = features;
  return x;
}

struct FitObjective {
  double value = 0.0;  // penalized mean log-likelihood
  Matrix probs;
};

FitObjective evaluate(const Matrix& x, const std::vector<int>& assignments, const Matrix& theta,
                      double ridge) {
  const Index n = x.rows();
  Matrix scores = x * theta.transpose();
  FitObjective out;
  out.probs = softmax_with_baseline(scores);
  double ll = 0.0;
  for (Index i = 0; i < n; ++i) ll += std::log(out.probs(i, assignments[i] - 1));
  double penalty = 0.5 * ridge * theta.rightCols(theta.cols() - 1).squaredNorm();
  out.value = ll / static_cast<double>(n) - penalty;
  return out;
}

Matrix gradient(const Matrix& x, const std::vector<int>& assignments, const Matrix& probs,
                const Matrix& theta, double ridge) {
  const Index n = x.rows(), lm1 = theta.rows();
  Matrix resid = -probs.leftCols(lm1);  // E - P over non-baseline classes
  for (Index i = 0; i < n; ++i) {
    int c = assignments[i] - 1;
    if (c < lm1) resid(i, c) += 1.0;
  }
  Matrix g = (resid.transpose() * x) / static_cast<double>(n);
  g.rightCols(theta.cols() - 1) -= ridge * theta.rightCols(theta.cols() - 1);
  return g;
}

constexpr double kSeparationBound = 30.0;
constexpr double kRidgeFloor = 1e-4;

PropensityModel fit_once(const Matrix& x, const ExposureDesign& design, double ridge) {
  const Index lm1 = design.n_levels - 1;
  PropensityModel model;
  model.n_levels = design.n_levels;
  model.baseline_level = design.n_levels;
  model.ridge = ridge;
  model.coefficients = Matrix::Zero(lm1, x.cols());

  FitObjective cur = evaluate(x, design.assignments, model.coefficients, ridge);
  require(std::isfinite(cur.value),
          "fit_multinomial: non-finite log-likelihood; increase the ridge penalty");

  double step = 1.0;
  const int max_iters = 1000;
  const double grad_tol = 1e-8;
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    Matrix g = gradient(x, design.assignments, cur.probs, model.coefficients, ridge);
    double gnorm = g.cwiseAbs().maxCoeff();
    model.final_grad_norm = gnorm;
    if (gnorm <= grad_tol) {
      model.converged = true;
      break;
    }
    double g2 = g.squaredNorm();
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      Matrix trial = model.coefficients + step * g;
      FitObjective next = evaluate(x, design.assignments, trial, ridge);
      require(std::isfinite(next.value),
              "fit_multinomial: non-finite log-likelihood; increase the ridge penalty");
      if (next.value >= cur.value + 1e-4 * step * g2) {
        model.coefficients = std::move(trial);
        cur = std::move(next);
        step *= 2.0;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no ascent direction at float resolution
    if (model.coefficients.cwiseAbs().maxCoeff() > kSeparationBound && ridge < kRidgeFloor) {
      model.separation_warning = true;
      break;
    }
  }
  model.iterations = iter;
  return model;
}

}  // namespace

PropensityModel fit_multinomial(const Matrix& features, const ExposureDesign& design,
                                double ridge) {
  const Index n = features.rows();
  check(ridge >= 0.0, "fit_multinomial: ridge must be >= 0");
  check(n == design.n_units(), "fit_multinomial: feature rows must match design units");
  check(n > design.n_levels, "fit_multinomial: need more units than levels");
  check(features.allFinite(), "fit_multinomial: features must be finite");

  Matrix x = with_intercept(features);
  PropensityModel model = fit_once(x, design, ridge);
  if (model.separation_warning) {
    // Quasi-separation: refit at the ridge floor, keep the warning flag.
    PropensityModel refit = fit_once(x, design, kRidgeFloor);
    refit.separation_warning = true;
    return refit;
  }
  return model;
}

Matrix predict_probs(const PropensityModel& model, const Matrix& features) {
  check(features.cols() + 1 == model.coefficients.cols(),
        "predict_probs: feature width does not match the model");
  check(features.allFinite(), "predict_probs: features must be finite");
  Matrix scores = with_intercept(features) * model.coefficients.transpose();
  return softmax_with_baseline(scores);
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix probs(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    double mx = scores.row(i).maxCoeff();
    double denom = 0.0;
    for (Index c = 0; c < scores.cols(); ++c) denom += std::exp(scores(i, c) - mx);
    for (Index c = 0; c < scores.cols(); ++c) probs(i, c) = std::exp(scores(i, c) - mx) / denom;
  }
  return probs;
}

double multinomial_objective(const Matrix& features, const ExposureDesign& design,
                             const Matrix& theta, double ridge) {
  return evaluate(with_intercept(features), design.assignments, theta, ridge).value;
}

Matrix multinomial_gradient(const Matrix& features, const ExposureDesign& design,
                            const Matrix& theta, double ridge) {
  Matrix x = with_intercept(features);
  FitObjective cur = evaluate(x, design.assignments, theta, ridge);
  return gradient(x, design.assignments, cur.probs, theta, ridge);
}

Tensor3 ipw_weights(const Matrix& probs, const ExposureDesign& design, double floor,
                    Index n_outcomes, long* truncated) {
  check(floor > 0.0 && floor < 0.5, "ipw_weights: floor must lie in (0, 0.5)");
  check(probs.rows() == design.n_units() && probs.cols() == design.n_levels,
        "ipw_weights: probs must be N x L");

  long clipped = 0;
  Tensor3 w(design.n_units(), design.n_levels, n_outcomes);
  for (Index i = 0; i < design.n_units(); ++i) {
    int l = design.assignments[i] - 1;
    double p = probs(i, l);
    if (p < floor) {
      p = floor;
      ++clipped;
    }
    for (Index o = 0; o < n_outcomes; ++o) w(i, l, o) = 1.0 / p;
  }
  if (truncated) *truncated = clipped;
  return w;
}

OverlapTable overlap_diagnostics(const Matrix& probs, const ExposureDesign& design,
                                 std::vector<double> thresholds) {
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    check(thresholds[t] > 0.0 && thresholds[t] < 1.0,
          "overlap_diagnostics: thresholds must lie in (0,1)");
    if (t > 0) check(thresholds[t] > thresholds[t - 1], "overlap_diagnostics: thresholds ascending");
  }

  OverlapTable table;
  table.thresholds = thresholds;
  for (int level = 1; level <= design.n_levels; ++level) {
    std::vector<double> at_level;
    for (Index i = 0; i < design.n_units(); ++i)
      if (design.assignments[i] == level) at_level.push_back(probs(i, level - 1));

    OverlapRow row;
    row.level = level;
    row.n_at_level = static_cast<long>(at_level.size());
    row.frac_below.assign(thresholds.size(), 0.0);
    if (!at_level.empty()) {
      std::sort(at_level.begin(), at_level.end());
      row.min_prob = at_level.front();
      std::size_t m = at_level.size();
      row.median_prob = (m % 2 == 1) ? at_level[m / 2]
                                     : 0.5 * (at_level[m / 2 - 1] + at_level[m / 2]);
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        auto below = std::lower_bound(at_level.begin(), at_level.end(), thresholds[t]);
        row.frac_below[t] = static_cast<double>(below - at_level.begin()) / static_cast<double>(m);
      }
    } else {
      row.min_prob = std::numeric_limits<double>::quiet_NaN();
      row.median_prob = std::numeric_limits<double>::quiet_NaN();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace sctc
