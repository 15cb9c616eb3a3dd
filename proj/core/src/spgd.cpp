#include "sctc/spgd.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>

#include "sctc/common.hpp"
#include "sctc/parallel.hpp"
#include "sctc/rng.hpp"

namespace sctc {

double bic_score(double rss, long n_obs, long df) {
  check(df >= 1, "bic_score: df must be >= 1");
  check(n_obs > df, "bic_score: n_obs must exceed df");
  if (rss <= 0.0) {
    std::cerr << "bic_score: rss <= 0, clamped to machine epsilon\n";
    rss = std::numeric_limits<double>::epsilon();
  }
  double n = static_cast<double>(n_obs);
  return n * std::log(rss / n) + static_cast<double>(df) * std::log(n);
}

long spgd_df(std::array<Index, 3> ranks, Index z_cols, Index n_eigs, Index n_levels,
             Index n_outcomes) {
  long r1 = ranks[0], r2 = ranks[1], r3 = ranks[2];
  return r1 * r2 * r3 + z_cols * r1 + n_eigs * r1 + (n_levels - r2) * r2 +
         (n_outcomes - r3) * r3;
}

namespace {

Tensor3 reconstruct3(const Tensor3& core, const Matrix& u1, const Matrix& u2,
                     const Matrix& u3) {
  Tensor3 t = mode_product(core, u1, 1);
  t = mode_product(t, u2, 2);
  return mode_product(t, u3, 3);
}

}  // namespace

double spgd_objective(const Tensor3& y, const Tensor3& v, const Matrix& x,
                      const Tensor3& core, const Matrix& gamma, const Matrix& u2,
                      const Matrix& u3) {
  Matrix u1 = x * gamma;
  Tensor3 yhat = reconstruct3(core, u1, u2, u3);
  return (v.data().array() * (y.data() - yhat.data()).array().square()).sum();
}

void spgd_gradients(const Tensor3& y, const Tensor3& v, const Matrix& x,
                    const Tensor3& core, const Matrix& gamma, const Matrix& u2,
                    const Matrix& u3, Tensor3* g_core, Matrix* g_gamma, Matrix* g_u2,
                    Matrix* g_u3) {
  Matrix u1 = x * gamma;
  Tensor3 yhat = reconstruct3(core, u1, u2, u3);
  Tensor3 r(y.n_units(), y.n_levels(), y.n_outcomes());
  r.data() = v.data().cwiseProduct(yhat.data() - y.data());

  if (g_core || g_u2 || g_u3) {
    Tensor3 f = mode_product(r, u1.transpose(), 1);  // r1 x L x O
    if (g_core || g_u3) {
      Tensor3 e = mode_product(f, u2.transpose(), 2);  // r1 x r2 x O
      if (g_u3) *g_u3 = 2.0 * unfold(e, 3) * unfold(core, 3).transpose();
      if (g_core) {
        Tensor3 gc = mode_product(e, u3.transpose(), 3);
        gc.data() *= 2.0;
        *g_core = std::move(gc);
      }
    }
    if (g_u2) {
      Tensor3 c = mode_product(f, u3.transpose(), 3);  // r1 x L x r3
      *g_u2 = 2.0 * unfold(c, 2) * unfold(core, 2).transpose();
    }
  }
  if (g_gamma) {
    Tensor3 a = mode_product(r, u3.transpose(), 3);  // N x L x r3
    Tensor3 b = mode_product(a, u2.transpose(), 2);  // N x r2 x r3
    Matrix g_u1 = 2.0 * unfold(b, 1) * unfold(core, 1).transpose();
    *g_gamma = x.transpose() * g_u1;
  }
}

namespace {

// Internal solver state. x holds [z | phi_selected] with columns scaled to
// unit norm; gamma lives on that scale and is rescaled on export.
struct State {
  Matrix x;
  Vector col_norms;
  Tensor3 core;
  Matrix gamma;
  Matrix u2, u3;
  std::vector<int> selected;
  double obj = 0.0;
  std::array<double, 4> steps{-1.0, -1.0, -1.0, -1.0};
};

double eval_state(const Tensor3& y, const Tensor3& v, const State& s) {
  return spgd_objective(y, v, s.x, s.core, s.gamma, s.u2, s.u3);
}

// Thin QR with nonnegative R diagonal.
std::pair<Matrix, Matrix> thin_qr(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  Matrix r = qr.matrixQR().topLeftCorner(m.cols(), m.cols()).triangularView<Eigen::Upper>();
  for (Index j = 0; j < r.rows(); ++j) {
    if (r(j, j) < 0.0) {
      q.col(j) = -q.col(j);
      r.row(j) = -r.row(j);
    }
  }
  return {std::move(q), std::move(r)};
}

double auto_step(double init_step, double obj, double grad_sq) {
  double s = init_step * obj / (grad_sq + 1e-300);
  return std::clamp(s, 1e-16, 1e12);
}

// One backtracking line search for a dense parameter block. apply(step)
// must return the trial objective and stash the trial parameters; commit()
// moves them into the state.
template <typename TryStep, typename Commit>
void line_search(const FitConfig& cfg, State& s, double& step, double grad_sq,
                 const TryStep& try_step, const Commit& commit) {
  if (grad_sq <= 0.0) return;
  if (step <= 0.0) step = auto_step(cfg.init_step, std::max(s.obj, 1e-300), grad_sq);
  for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
    double trial_obj = try_step(step);
    require(std::isfinite(trial_obj), "spgd: non-finite loss during line search");
    if (trial_obj <= s.obj) {
      commit();
      s.obj = trial_obj;
      step = std::min(step * cfg.step_grow, 1e12);
      return;
    }
    step *= cfg.step_shrink;
  }
}

// Block-coordinate sweeps (core, (eta_Z,beta), U2, U3) until the relative
// objective change per sweep falls below tol. Returns the convergence flag
// and appends per-sweep objectives (normalized weight scale) to trace.
bool inner_bcd(const Tensor3& y, const Tensor3& v, const FitConfig& cfg, State& s,
               std::vector<double>* trace, int* iter_count) {
  s.obj = eval_state(y, v, s);
  require(std::isfinite(s.obj), "spgd: non-finite loss at start of inner fit");
  const double obj_floor = 1e-14 * std::max(1.0, s.obj);

  for (int it = 0; it < cfg.max_iters; ++it) {
    double prev = s.obj;

    {  // core
      Tensor3 g;
      spgd_gradients(y, v, s.x, s.core, s.gamma, s.u2, s.u3, &g, nullptr, nullptr, nullptr);
      Tensor3 trial = s.core;
      line_search(
          cfg, s, s.steps[0], g.data().squaredNorm(),
          [&](double step) {
            trial.data() = s.core.data() - step * g.data();
            return spgd_objective(y, v, s.x, trial, s.gamma, s.u2, s.u3);
          },
          [&] { s.core = trial; });
    }

    {  // covariate + eigenvector coefficients, jointly
      Matrix g;
      spgd_gradients(y, v, s.x, s.core, s.gamma, s.u2, s.u3, nullptr, &g, nullptr, nullptr);
      Matrix trial;
      line_search(
          cfg, s, s.steps[1], g.squaredNorm(),
          [&](double step) {
            trial = s.gamma - step * g;
            return spgd_objective(y, v, s.x, s.core, trial, s.u2, s.u3);
          },
          [&] { s.gamma = std::move(trial); });
    }

    {  // U2: gradient step, then QR with the R factor absorbed into the core
      Matrix g;
      spgd_gradients(y, v, s.x, s.core, s.gamma, s.u2, s.u3, nullptr, nullptr, &g, nullptr);
      Matrix q_trial;
      Tensor3 core_trial;
      line_search(
          cfg, s, s.steps[2], g.squaredNorm(),
          [&](double step) {
            auto [q, r] = thin_qr(Matrix(s.u2 - step * g));
            q_trial = std::move(q);
            core_trial = mode_product(s.core, r, 2);
            return spgd_objective(y, v, s.x, core_trial, s.gamma, q_trial, s.u3);
          },
          [&] {
            s.u2 = std::move(q_trial);
            s.core = std::move(core_trial);
          });
    }

    {  // U3, same treatment
      Matrix g;
      spgd_gradients(y, v, s.x, s.core, s.gamma, s.u2, s.u3, nullptr, nullptr, nullptr, &g);
      Matrix q_trial;
      Tensor3 core_trial;
      line_search(
          cfg, s, s.steps[3], g.squaredNorm(),
          [&](double step) {
            auto [q, r] = thin_qr(Matrix(s.u3 - step * g));
            q_trial = std::move(q);
            core_trial = mode_product(s.core, r, 3);
            return spgd_objective(y, v, s.x, core_trial, s.gamma, s.u2, q_trial);
          },
          [&] {
            s.u3 = std::move(q_trial);
            s.core = std::move(core_trial);
          });
    }

    if (s.obj > prev) throw std::logic_error("spgd: objective increased across a sweep");
    if (trace) trace->push_back(s.obj);
    if (iter_count) ++*iter_count;

    double rel = (prev - s.obj) / std::max(prev, 1e-300);
    if (rel <= cfg.tol || s.obj <= obj_floor) return true;
  }
  return false;
}

// Missing entries filled with the per-(level,outcome) observed mean; slices
// with no observations fall back to the global observed mean.
Tensor3 mean_fill(const Tensor3& y, const Tensor3& mask) {
  const Index n = y.n_units(), l = y.n_levels(), o = y.n_outcomes();
  double global_sum = 0.0;
  long global_count = 0;
  Matrix slice_sum = Matrix::Zero(l, o);
  Matrix slice_count = Matrix::Zero(l, o);
  for (Index io = 0; io < o; ++io)
    for (Index il = 0; il < l; ++il)
      for (Index i = 0; i < n; ++i)
        if (mask(i, il, io) > 0.5) {
          slice_sum(il, io) += y(i, il, io);
          slice_count(il, io) += 1.0;
          global_sum += y(i, il, io);
          ++global_count;
        }
  require(global_count > 0, "spgd: mask has no observed cells");
  double global_mean = global_sum / static_cast<double>(global_count);

  Tensor3 filled = y;
  for (Index io = 0; io < o; ++io)
    for (Index il = 0; il < l; ++il) {
      double fill = slice_count(il, io) > 0.0 ? slice_sum(il, io) / slice_count(il, io)
                                              : global_mean;
      for (Index i = 0; i < n; ++i)
        if (mask(i, il, io) < 0.5) filled(i, il, io) = fill;
    }
  return filled;
}

Matrix gather_columns(const Matrix& phi, const std::vector<int>& cols) {
  Matrix out(phi.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = phi.col(cols[j]);
  return out;
}

State init_state(const Tensor3& y, const Tensor3& mask, const Matrix& z, const Matrix& phi,
                 const std::vector<int>& eigs, std::array<Index, 3> ranks) {
  Tensor3 filled = mean_fill(y, mask);
  TuckerFactors f = hosvd(filled, ranks);

  State s;
  s.selected = eigs;
  const Index pz = z.cols();
  const Index cols = pz + static_cast<Index>(eigs.size());
  s.x.resize(z.rows(), cols);
  s.col_norms.resize(cols);
  for (Index c = 0; c < pz; ++c) s.x.col(c) = z.col(c);
  for (std::size_t j = 0; j < eigs.size(); ++j) s.x.col(pz + j) = phi.col(eigs[j]);
  for (Index c = 0; c < cols; ++c) {
    double nrm = s.x.col(c).norm();
    s.col_norms[c] = nrm > 0.0 ? nrm : 1.0;
    s.x.col(c) /= s.col_norms[c];
  }
  s.gamma = s.x.colPivHouseholderQr().solve(f.U1);
  s.core = std::move(f.core);
  s.u2 = std::move(f.U2);
  s.u3 = std::move(f.U3);
  return s;
}

void append_candidate(State& s, const Matrix& phi, int j) {
  const Index cols = s.x.cols();
  s.x.conservativeResize(Eigen::NoChange, cols + 1);
  s.x.col(cols) = phi.col(j);
  double nrm = s.x.col(cols).norm();
  if (nrm <= 0.0) nrm = 1.0;
  s.x.col(cols) /= nrm;
  s.col_norms.conservativeResize(cols + 1);
  s.col_norms[cols] = nrm;
  s.gamma.conservativeResize(cols + 1, Eigen::NoChange);
  s.gamma.row(cols).setZero();
  s.selected.push_back(j);
}

void validate_inputs(const Tensor3& y, const Tensor3& mask, const Matrix& z,
                     const Matrix& phi, const Tensor3* weights, const FitConfig& cfg) {
  check(mask.same_dims(y), "spgd_fit: mask dims must match Y");
  check(z.rows() == y.n_units(), "spgd_fit: Z rows must match unit count");
  check(z.cols() >= 1, "spgd_fit: Z needs at least one column (an intercept)");
  check(phi.rows() == y.n_units(), "spgd_fit: basis rows must match unit count");
  check(z.allFinite(), "spgd_fit: Z must be finite");
  for (Index i = 0; i < mask.size(); ++i) {
    double m = mask.data()[i];
    check(m == 0.0 || m == 1.0, "spgd_fit: mask entries must be 0 or 1");
  }
  if (weights) {
    check(weights->same_dims(y), "spgd_fit: weights dims must match Y");
    for (Index i = 0; i < weights->size(); ++i) {
      double w = weights->data()[i];
      check(w >= 0.0, "spgd_fit: weights must be nonnegative");
      check(w == 0.0 || mask.data()[i] == 1.0,
            "spgd_fit: weight support must lie inside the mask");
    }
  }
  check(cfg.ranks[0] >= 1 && cfg.ranks[0] <= y.n_units(), "spgd_fit: r1 out of range");
  check(cfg.ranks[1] >= 1 && cfg.ranks[1] <= y.n_levels(), "spgd_fit: r2 out of range");
  check(cfg.ranks[2] >= 1 && cfg.ranks[2] <= y.n_outcomes(), "spgd_fit: r3 out of range");
  check(cfg.tol > 0.0, "spgd_fit: tol must be positive");
  check(cfg.max_iters >= 1, "spgd_fit: max_iters must be >= 1");
  check(cfg.patience >= 1, "spgd_fit: patience must be >= 1");
  check(cfg.step_shrink > 0.0 && cfg.step_shrink < 1.0, "spgd_fit: step_shrink in (0,1)");
  check(cfg.step_grow >= 1.0, "spgd_fit: step_grow must be >= 1");
  for (std::size_t j = 0; j < cfg.fixed_eigs.size(); ++j) {
    check(cfg.fixed_eigs[j] >= 1 && cfg.fixed_eigs[j] < phi.cols(),
          "spgd_fit: fixed eigenvector index out of range");
    if (j > 0)
      check(cfg.fixed_eigs[j] > cfg.fixed_eigs[j - 1],
            "spgd_fit: fixed eigenvector indices must be strictly increasing");
  }
}

SpatialTuckerModel finalize(State&& s, FitReport&& report, const Matrix& z,
                            std::array<Index, 3> ranks, double w_mean) {
  Matrix gamma_ext = s.gamma;
  for (Index c = 0; c < gamma_ext.rows(); ++c) gamma_ext.row(c) /= s.col_norms[c];

  SpatialTuckerModel m;
  m.ranks = ranks;
  m.core = std::move(s.core);
  m.U2 = std::move(s.u2);
  m.U3 = std::move(s.u3);
  m.selected_eigs = std::move(s.selected);
  m.eta_Z = gamma_ext.topRows(z.cols());
  m.beta = gamma_ext.bottomRows(gamma_ext.rows() - z.cols());
  for (double& t : report.objective_trace) t *= w_mean;
  report.final_objective = s.obj * w_mean;
  m.report = std::move(report);
  return m;
}

SpatialTuckerModel spgd_fit_impl(const Tensor3& y, const Tensor3& mask, const Matrix& z,
                                 const Matrix& phi, const Tensor3* weights,
                                 const FitConfig& cfg, const Criterion& criterion_in) {
  validate_inputs(y, mask, z, phi, weights, cfg);
  Criterion criterion = criterion_in ? criterion_in : Criterion(bic_score);

  long n_obs = static_cast<long>(mask.data().sum() + 0.5);
  require(n_obs >= 1, "spgd_fit: mask has no observed cells");

  Tensor3 v = mask;
  double w_mean = 1.0;
  if (weights) {
    double sum = weights->data().dot(mask.data());
    w_mean = sum / static_cast<double>(n_obs);
    require(w_mean > 0.0, "spgd_fit: weights are zero on every observed cell");
    v.data() = weights->data().cwiseProduct(mask.data()) / w_mean;
  }

  int max_eigs = cfg.max_eigs;
  if (max_eigs < 0)
    max_eigs = static_cast<int>(std::min<Index>(y.n_units() / 10, 100));
  max_eigs = static_cast<int>(std::min<Index>(max_eigs, phi.cols()));

  State s = init_state(y, mask, z, phi, cfg.fixed_eigs, cfg.ranks);
  FitReport report;
  int iters = 0;
  bool converged = inner_bcd(y, v, cfg, s, &report.objective_trace, &iters);

  const Index n_levels = y.n_levels(), n_outcomes = y.n_outcomes();
  auto bic_of = [&](const State& state) {
    long df = spgd_df(cfg.ranks, z.cols(), static_cast<Index>(state.selected.size()),
                      n_levels, n_outcomes);
    if (df >= n_obs) return std::numeric_limits<double>::quiet_NaN();
    return criterion(state.obj, n_obs, df);
  };
  double cur_bic = bic_of(s);
  report.bic_trace.push_back(cur_bic);

  if (cfg.select) {
    int rejections = 0;
    int start = s.selected.empty() ? 1 : s.selected.back() + 1;
    for (int j = start; j < max_eigs && rejections < cfg.patience; ++j) {
      State trial = s;
      append_candidate(trial, phi, j);
      std::vector<double> trial_trace;
      int trial_iters = 0;
      bool trial_conv = inner_bcd(y, v, cfg, trial, &trial_trace, &trial_iters);
      iters += trial_iters;
      double trial_bic = bic_of(trial);

      bool accepted = std::isfinite(trial_bic) && std::isfinite(cur_bic) && trial_bic < cur_bic;
      report.selection_log.push_back({j, trial_bic, accepted});
      if (accepted) {
        s = std::move(trial);
        converged = trial_conv;
        cur_bic = trial_bic;
        rejections = 0;
        report.objective_trace.insert(report.objective_trace.end(), trial_trace.begin(),
                                      trial_trace.end());
        report.bic_trace.push_back(cur_bic);
      } else {
        ++rejections;
      }
    }
  }

  report.converged = converged;
  report.total_iterations = iters;
  return finalize(std::move(s), std::move(report), z, cfg.ranks, w_mean);
}

Tensor3 subset_units(const Tensor3& t, const std::vector<int>& idx) {
  Tensor3 out(static_cast<Index>(idx.size()), t.n_levels(), t.n_outcomes());
  for (Index o = 0; o < t.n_outcomes(); ++o)
    for (Index l = 0; l < t.n_levels(); ++l)
      for (std::size_t i = 0; i < idx.size(); ++i)
        out(static_cast<Index>(i), l, o) = t(idx[i], l, o);
  return out;
}

Matrix subset_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

Matrix SpatialTuckerModel::unit_factor(const Matrix& z, const Matrix& phi) const {
  check(z.cols() == eta_Z.rows(), "unit_factor: Z width does not match eta_Z");
  Matrix u1 = z * eta_Z;
  if (!selected_eigs.empty()) {
    check(phi.rows() == z.rows(), "unit_factor: basis rows must match Z rows");
    check(selected_eigs.back() < phi.cols(), "unit_factor: eigenvector index out of range");
    u1 += gather_columns(phi, selected_eigs) * beta;
  }
  return u1;
}

Matrix SpatialTuckerModel::spatial_component(const Matrix& phi) const {
  if (selected_eigs.empty()) return Matrix::Zero(phi.rows(), ranks[0]);
  check(selected_eigs.back() < phi.cols(), "spatial_component: eigenvector index out of range");
  return gather_columns(phi, selected_eigs) * beta;
}

SpatialTuckerModel spgd_fit(const Tensor3& y, const Tensor3& mask, const Matrix& z,
                            const SpectralBasis& basis, const Tensor3* weights,
                            const FitConfig& config, const Criterion& criterion) {
  return spgd_fit_impl(y, mask, z, basis.eigenvectors, weights, config, criterion);
}

Tensor3 predict_full(const SpatialTuckerModel& model, const Matrix& z,
                     const SpectralBasis& basis) {
  Matrix u1 = model.unit_factor(z, basis.eigenvectors);
  return reconstruct3(model.core, u1, model.U2, model.U3);
}

std::array<Index, 3> cross_validate_ranks(const Tensor3& y, const Tensor3& mask,
                                          const Matrix& z, const SpectralBasis& basis,
                                          const RankGrids& grids, int folds,
                                          std::uint64_t seed, const CvOptions& options) {
  check(folds >= 2, "cross_validate_ranks: folds must be >= 2");
  check(!grids.r1.empty() && !grids.r2.empty() && !grids.r3.empty(),
        "cross_validate_ranks: rank grids must be non-empty");
  for (Index r : grids.r1) check(r >= 1 && r <= y.n_units(), "cross_validate_ranks: r1 grid out of range");
  for (Index r : grids.r2) check(r >= 1 && r <= y.n_levels(), "cross_validate_ranks: r2 grid out of range");
  for (Index r : grids.r3) check(r >= 1 && r <= y.n_outcomes(), "cross_validate_ranks: r3 grid out of range");

  const Index n = y.n_units(), l = y.n_levels(), o = y.n_outcomes();
  std::vector<Index> cells;
  for (Index i = 0; i < mask.size(); ++i)
    if (mask.data()[i] > 0.5) cells.push_back(i);
  require(static_cast<int>(cells.size()) >= folds,
          "cross_validate_ranks: fewer observed cells than folds");

  auto unit_of = [&](Index cell) { return cell % n; };
  auto level_of = [&](Index cell) { return (cell / n) % l; };
  auto outcome_of = [&](Index cell) { return cell / (n * l); };

  std::vector<long> unit_total(n, 0), level_total(l, 0), outcome_total(o, 0);
  for (Index c : cells) {
    ++unit_total[unit_of(c)];
    ++level_total[level_of(c)];
    ++outcome_total[outcome_of(c)];
  }
  for (Index i = 0; i < n; ++i)
    require(unit_total[i] > 0, "cross_validate_ranks: unit " + std::to_string(i) +
                                   " has no observed cells");
  for (Index i = 0; i < l; ++i)
    require(level_total[i] > 0, "cross_validate_ranks: level " + std::to_string(i + 1) +
                                    " has no observed cells");
  for (Index i = 0; i < o; ++i)
    require(outcome_total[i] > 0, "cross_validate_ranks: outcome " + std::to_string(i + 1) +
                                      " has no observed cells");

  // Draw a fold split whose training sets keep every slice populated.
  std::vector<int> fold_of(cells.size());
  bool split_ok = false;
  for (int attempt = 0; attempt <= 10 && !split_ok; ++attempt) {
    std::vector<Index> perm = cells;
    Rng rng(seed + static_cast<std::uint64_t>(attempt));
    rng.shuffle(perm);
    std::vector<int> assign(cells.size());
    for (std::size_t p = 0; p < perm.size(); ++p)
      assign[p] = static_cast<int>(p % static_cast<std::size_t>(folds));
    // assign[] is aligned with perm; translate to canonical cell order
    std::vector<int> by_cell(cells.size());
    {
      std::vector<std::pair<Index, int>> tmp(perm.size());
      for (std::size_t p = 0; p < perm.size(); ++p) tmp[p] = {perm[p], assign[p]};
      std::sort(tmp.begin(), tmp.end());
      for (std::size_t p = 0; p < tmp.size(); ++p) by_cell[p] = tmp[p].second;
    }

    split_ok = true;
    for (int f = 0; f < folds && split_ok; ++f) {
      std::vector<long> u(n, 0), lv(l, 0), oc(o, 0);
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (by_cell[c] == f) {
          ++u[unit_of(cells[c])];
          ++lv[level_of(cells[c])];
          ++oc[outcome_of(cells[c])];
        }
      }
      for (Index i = 0; i < n && split_ok; ++i) split_ok = unit_total[i] - u[i] > 0;
      for (Index i = 0; i < l && split_ok; ++i) split_ok = level_total[i] - lv[i] > 0;
      for (Index i = 0; i < o && split_ok; ++i) split_ok = outcome_total[i] - oc[i] > 0;
    }
    if (split_ok) fold_of = by_cell;
  }
  require(split_ok, "cross_validate_ranks: no valid fold split after 10 redraws");

  std::vector<Tensor3> train_masks(folds, mask);
  std::vector<std::vector<Index>> heldout(folds);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    int f = fold_of[c];
    train_masks[f].data()[cells[c]] = 0.0;
    heldout[f].push_back(cells[c]);
  }

  struct Triple {
    std::array<Index, 3> r;
  };
  std::vector<Triple> triples;
  for (Index r1 : grids.r1)
    for (Index r2 : grids.r2)
      for (Index r3 : grids.r3) triples.push_back({{r1, r2, r3}});

  int n_fixed = std::min<int>(options.n_fixed_eigs,
                              static_cast<int>(basis.eigenvectors.cols()) - 1);
  std::vector<int> fixed;
  for (int j = 1; j <= n_fixed; ++j) fixed.push_back(j);

  std::vector<double> cv_err(triples.size(), 0.0);
  std::vector<double> cv_se(triples.size(), 0.0);
  parallel_for(
      triples.size(),
      [&](std::size_t t) {
        std::vector<double> fold_err(folds, 0.0);
        for (int f = 0; f < folds; ++f) {
          FitConfig cfg;
          cfg.ranks = triples[t].r;
          cfg.max_iters = options.max_iters;
          cfg.tol = options.tol;
          cfg.fixed_eigs = fixed;
          cfg.select = false;
          SpatialTuckerModel m =
              spgd_fit_impl(y, train_masks[f], z, basis.eigenvectors, nullptr, cfg, {});
          Tensor3 yhat = predict_full(m, z, basis);
          double sse = 0.0;
          for (Index cell : heldout[f]) {
            double d = y.data()[cell] - yhat.data()[cell];
            sse += d * d;
          }
          fold_err[f] = sse / static_cast<double>(heldout[f].size());
        }
        double mean = 0.0;
        for (double e : fold_err) mean += e;
        mean /= folds;
        double var = 0.0;
        for (double e : fold_err) var += (e - mean) * (e - mean);
        cv_err[t] = mean;
        cv_se[t] = folds > 1 ? std::sqrt(var / (folds - 1) / folds) : 0.0;
      },
      options.workers);

  // Mean CV errors within one standard error of the minimum count as tied;
  // ties break toward smaller r1+r2+r3, then lexicographically.
  std::size_t arg_min = 0;
  for (std::size_t t = 1; t < triples.size(); ++t)
    if (cv_err[t] < cv_err[arg_min]) arg_min = t;
  const double band = cv_err[arg_min] + cv_se[arg_min];

  std::size_t best = arg_min;
  auto more_parsimonious = [&](std::size_t a, std::size_t b) {
    Index sa = triples[a].r[0] + triples[a].r[1] + triples[a].r[2];
    Index sb = triples[b].r[0] + triples[b].r[1] + triples[b].r[2];
    if (sa != sb) return sa < sb;
    if (triples[a].r != triples[b].r) return triples[a].r < triples[b].r;
    return cv_err[a] < cv_err[b];
  };
  for (std::size_t t = 0; t < triples.size(); ++t)
    if (cv_err[t] <= band && more_parsimonious(t, best)) best = t;
  return triples[best].r;
}

Tensor3 cross_fit_impute(const Tensor3& y, const Tensor3& mask, const Matrix& z,
                         const SpectralBasis& basis, const Tensor3* weights,
                         const FitConfig& config, int folds, std::uint64_t seed) {
  check(folds >= 1, "cross_fit_impute: folds must be >= 1");
  if (folds == 1) {
    SpatialTuckerModel m = spgd_fit(y, mask, z, basis, weights, config);
    return predict_full(m, z, basis);
  }

  const Index n = y.n_units();
  check(folds <= n, "cross_fit_impute: more folds than units");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);

  std::vector<std::vector<int>> fold_units(folds);
  for (Index i = 0; i < n; ++i) fold_units[i % folds].push_back(perm[i]);
  for (auto& fu : fold_units) {
    std::sort(fu.begin(), fu.end());
    require(static_cast<Index>(fu.size()) >= config.ranks[0],
            "cross_fit_impute: a fold has fewer units than r1");
  }

  Tensor3 out(n, y.n_levels(), y.n_outcomes());
  parallel_for(static_cast<std::size_t>(folds), [&](std::size_t f) {
    std::vector<int> train;
    train.reserve(n - fold_units[f].size());
    for (int g = 0; g < folds; ++g)
      if (g != static_cast<int>(f))
        train.insert(train.end(), fold_units[g].begin(), fold_units[g].end());
    std::sort(train.begin(), train.end());

    Tensor3 y_tr = subset_units(y, train);
    Tensor3 mask_tr = subset_units(mask, train);
    Matrix z_tr = subset_rows(z, train);
    Matrix phi_tr = subset_rows(basis.eigenvectors, train);
    Tensor3 w_tr;
    const Tensor3* w_ptr = nullptr;
    if (weights) {
      w_tr = subset_units(*weights, train);
      w_ptr = &w_tr;
    }
    SpatialTuckerModel m = spgd_fit_impl(y_tr, mask_tr, z_tr, phi_tr, w_ptr, config, {});

    const std::vector<int>& held = fold_units[f];
    Matrix z_h = subset_rows(z, held);
    Matrix phi_h = subset_rows(basis.eigenvectors, held);
    Matrix u1_h = m.unit_factor(z_h, phi_h);
    Tensor3 yhat_h = reconstruct3(m.core, u1_h, m.U2, m.U3);
    for (std::size_t i = 0; i < held.size(); ++i)
      for (Index l = 0; l < y.n_levels(); ++l)
        for (Index o = 0; o < y.n_outcomes(); ++o)
          out(held[i], l, o) = yhat_h(static_cast<Index>(i), l, o);
  });
  return out;
}

}  // namespace sctc
